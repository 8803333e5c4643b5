//! Sweep output as CSV.
//!
//! Header `method,N,q,p,epsilon,T,expected_excess,upper_bound`. Reals are
//! written with six significant digits; inapplicable columns are empty.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use dp_batcher_core::binom::Method;
use dp_batcher_core::costsim::{ExcessCurve, ExcessRow};

use crate::error::{Error, Result};

pub const HEADER: [&str; 8] = ["method", "N", "q", "p", "epsilon", "T", "expected_excess", "upper_bound"];

/// `%g` with six significant digits: fixed notation for exponents in
/// `-4..6`, scientific otherwise, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn row_fields(row: &ExcessRow) -> [String; 8] {
    let opt = |v: Option<String>| v.unwrap_or_default();
    [
        row.method.as_str().to_string(),
        row.dataset_size.to_string(),
        format_sig6(row.rate),
        opt(row.physical_batch.map(|p| p.to_string())),
        opt(row.epsilon.map(format_sig6)),
        opt(row.steps.map(|t| t.to_string())),
        format_sig6(row.expected_excess),
        opt(row.upper_bound.map(format_sig6)),
    ]
}

pub fn write_curve_to<W: Write>(writer: W, curve: &ExcessCurve) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for row in curve.rows() {
        wtr.write_record(row_fields(row))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn emit_csv(curve: &ExcessCurve, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_curve_to(file, curve).map_err(|e| Error::csv(path, e))
}

/// Parses a file written by [`emit_csv`] back into rows.
pub fn read_curve(path: &Path) -> Result<Vec<ExcessRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_curve_from(file, path)
}

pub fn read_curve_from<R: Read>(reader: R, origin: &Path) -> Result<Vec<ExcessRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::csv(origin, e))?;
    if header.iter().ne(HEADER) {
        return Err(Error::Format { path: origin.into(), line: 1, msg: format!("unexpected header {header:?}") });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::csv(origin, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |col: &str| Error::Format { path: origin.into(), line, msg: format!("bad {col} field") };
        let opt = |i: usize| Some(&record[i]).filter(|s| !s.is_empty());
        macro_rules! field {
            ($i:expr) => {
                record[$i].parse().map_err(|_| bad(HEADER[$i]))?
            };
        }
        macro_rules! opt_field {
            ($i:expr) => {
                opt($i).map(str::parse).transpose().map_err(|_| bad(HEADER[$i]))?
            };
        }
        let method: Method = record[0].parse().map_err(|_| bad("method"))?;
        rows.push(ExcessRow {
            method,
            dataset_size: field!(1),
            rate: field!(2),
            physical_batch: opt_field!(3),
            epsilon: opt_field!(4),
            steps: opt_field!(5),
            expected_excess: field!(6),
            upper_bound: opt_field!(7),
        });
    }
    Ok(rows)
}
