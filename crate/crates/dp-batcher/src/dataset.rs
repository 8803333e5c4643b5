//! Datasets as CSV: one example per row, feature columns then the label,
//! with a header row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use dp_batcher_core::engine::Dataset;

use crate::error::{Error, Result};

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(file, path)
}

/// Parses CSV from any reader; `origin` only labels error messages.
pub fn read_dataset_from<R: Read>(reader: R, origin: &Path) -> Result<Dataset> {
    let format = |line: u64, msg: String| Error::Format { path: origin.to_path_buf(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let columns = rdr.headers().map_err(|e| Error::csv(origin, e))?.len();
    if columns < 2 {
        return Err(format(1, format!("expected feature columns and a label column, found {columns} column(s)")));
    }
    let n_features = columns - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::csv(origin, e))?;
        let line = record.position().map_or(0, |p| p.line());
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| format(line, format!("column {}: not a finite number: {field:?}", col + 1)))?;
            if col < n_features {
                features.push(value);
            } else {
                labels.push(value);
            }
        }
    }
    if labels.is_empty() {
        return Err(format(1, "no data rows".into()));
    }
    Ok(Dataset::new(n_features, features, labels)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(file, data).map_err(|e| Error::csv(path, e))
}

pub fn write_dataset_to<W: Write>(writer: W, data: &Dataset) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let header: Vec<String> = (0..data.n_features()).map(|j| format!("x{j}")).chain(["label".into()]).collect();
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for ex in data.iter() {
        row.clear();
        row.extend(ex.features.iter().map(f64::to_string));
        row.push(ex.label.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
