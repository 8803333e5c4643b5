//! JSON training reports: `{config, steps: [...], final: {loss, accuracy}}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use dp_batcher_core::engine::{Metrics, StepReport};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hidden: Option<usize>,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data: Option<String>,
    pub dataset_size: usize,
    pub n_features: usize,
    pub expected_batch: f64,
    pub rate: f64,
    pub physical_batch: usize,
    pub steps: u64,
    pub clip: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub clip_method: String,
    pub accumulation: String,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Logical batch size `b`.
    pub true_size: usize,
    /// Padded size `b₊` (equal to `b` outside masked mode).
    pub padded_size: usize,
    pub norm_min: Option<f64>,
    pub norm_median: Option<f64>,
    pub norm_max: Option<f64>,
    pub clipped_norm_max: Option<f64>,
    pub fraction_clipped: f64,
    pub samples_processed: usize,
    pub wall_time_s: Option<f64>,
}

impl From<&StepReport> for StepRecord {
    fn from(r: &StepReport) -> Self {
        Self {
            step: r.step,
            true_size: r.true_size,
            padded_size: r.padded_size,
            norm_min: r.norm_min,
            norm_median: r.norm_median,
            norm_max: r.norm_max,
            clipped_norm_max: r.clipped_norm_max,
            fraction_clipped: r.fraction_clipped,
            samples_processed: r.samples_processed,
            wall_time_s: r.wall_time.map(|d| d.as_secs_f64()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

impl From<Metrics> for MetricsRecord {
    fn from(m: Metrics) -> Self {
        Self { loss: m.loss, accuracy: m.accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: RunConfig,
    pub initial: MetricsRecord,
    pub steps: Vec<StepRecord>,
    #[serde(rename = "final")]
    pub final_metrics: MetricsRecord,
    pub params: Vec<f64>,
}

impl TrainReport {
    pub fn to_writer<W: Write>(&self, writer: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(writer, self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.to_writer(&mut out).map_err(|e| Error::Json { path: path.into(), source: e })?;
        out.write_all(b"\n").and_then(|()| out.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json { path: path.into(), source: e })
    }
}
