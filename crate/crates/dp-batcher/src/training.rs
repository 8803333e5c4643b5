//! Training and benchmark runs over a loaded dataset.

use std::time::{Duration, Instant};

use clap::ValueEnum;
use dp_batcher_core::engine::{
    evaluate, Accumulation, ClipMethod, ClipSpec, Dataset, LinearRegression, LogisticRegression, Mlp, Model, NoiseSpec,
    SamplingMode, StepConfig, StepReport, Trainer,
};
use dp_batcher_core::sampling::SamplerConfig;
use dp_batcher_core::RngStreams;

use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::report::{RunConfig, StepRecord, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Least-squares linear regression.
    Linear,
    /// Logistic regression on 0/1 labels.
    Logistic,
    /// One tanh hidden layer with a logistic output.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Poisson batch padded to whole physical batches, padding masked out.
    Masked,
    /// The same Poisson batch without padding.
    ExactPoisson,
    /// Shuffle-and-split batches (not Poisson; privacy accounting does not apply).
    ShuffleBaseline,
}

impl From<Mode> for SamplingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Masked => SamplingMode::Masked,
            Mode::ExactPoisson => SamplingMode::ExactPoisson,
            Mode::ShuffleBaseline => SamplingMode::ShuffleBaseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClipMethodArg {
    PerExample,
    Ghost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AccumulationArg {
    Sequential,
    Tree,
}

pub(crate) fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub model: ModelKind,
    pub hidden: usize,
    pub mode: Mode,
    pub expected_batch: f64,
    pub physical_batch: usize,
    pub steps: u64,
    pub clip: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub clip_method: ClipMethodArg,
    pub accumulation: AccumulationArg,
    pub seed: u64,
    pub threads: usize,
}

impl TrainOptions {
    /// Masked logistic regression with unit clipping and noise.
    pub fn new(expected_batch: f64, physical_batch: usize, steps: u64) -> Self {
        Self {
            model: ModelKind::Logistic,
            hidden: 16,
            mode: Mode::Masked,
            expected_batch,
            physical_batch,
            steps,
            clip: 1.0,
            sigma: 1.0,
            learning_rate: 0.1,
            clip_method: ClipMethodArg::PerExample,
            accumulation: AccumulationArg::Sequential,
            seed: crate::DEFAULT_SEED,
            threads: 1,
        }
    }

    pub fn build_model(&self, n_features: usize) -> Box<dyn Model> {
        match self.model {
            ModelKind::Linear => Box::new(LinearRegression::new(n_features)),
            ModelKind::Logistic => Box::new(LogisticRegression::new(n_features)),
            ModelKind::Mlp => Box::new(Mlp::new(n_features, self.hidden)),
        }
    }

    fn step_config(&self) -> Result<StepConfig> {
        let noise = NoiseSpec::new(self.sigma, self.expected_batch, self.steps)?;
        let cfg = StepConfig::new(ClipSpec::new(self.clip)?, noise, self.learning_rate)?
            .with_clip_method(match self.clip_method {
                ClipMethodArg::PerExample => ClipMethod::PerExample,
                ClipMethodArg::Ghost => ClipMethod::Ghost,
            })
            .with_accumulation(match self.accumulation {
                AccumulationArg::Sequential => Accumulation::Sequential,
                AccumulationArg::Tree => Accumulation::Tree,
            });
        Ok(cfg)
    }

    fn run_config(&self, data: &Dataset, sampler: &SamplerConfig, source: Option<&str>) -> RunConfig {
        RunConfig {
            model: value_name(&self.model),
            hidden: (self.model == ModelKind::Mlp).then_some(self.hidden),
            mode: value_name(&self.mode),
            data: source.map(str::to_string),
            dataset_size: data.len(),
            n_features: data.n_features(),
            expected_batch: self.expected_batch,
            rate: sampler.rate(),
            physical_batch: self.physical_batch,
            steps: self.steps,
            clip: self.clip,
            sigma: self.sigma,
            learning_rate: self.learning_rate,
            clip_method: value_name(&self.clip_method),
            accumulation: value_name(&self.accumulation),
            seed: self.seed,
            threads: self.threads,
        }
    }

    fn trainer<'a>(&self, model: &'a dyn Model, data: &'a Dataset) -> Result<Trainer<'a, Executor>> {
        if model.is_classifier() && data.labels().iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Input(format!("the {} model needs 0/1 labels", value_name(&self.model))));
        }
        let sampler = SamplerConfig::new(data.len(), self.expected_batch, self.physical_batch)?;
        Ok(Trainer::new(
            model,
            data,
            sampler,
            self.step_config()?,
            self.mode.into(),
            model.init_params(self.seed),
            RngStreams::new(self.seed),
            Executor::with_threads(self.threads)?,
        )?)
    }
}

fn timed_step(trainer: &mut Trainer<'_, Executor>) -> Result<StepReport> {
    let start = Instant::now();
    let mut report = trainer.step()?;
    report.wall_time = Some(start.elapsed());
    Ok(report)
}

/// Trains and returns the full report; `source` is recorded as the data origin.
pub fn run_training(opts: &TrainOptions, data: &Dataset, source: Option<&str>) -> Result<TrainReport> {
    let model = opts.build_model(data.n_features());
    let mut trainer = opts.trainer(model.as_ref(), data)?;
    let initial = evaluate(model.as_ref(), trainer.params(), data)?;
    let steps =
        (0..opts.steps).map(|_| timed_step(&mut trainer).map(|r| StepRecord::from(&r))).collect::<Result<Vec<_>>>()?;
    let params = trainer.into_params();
    let final_metrics = evaluate(model.as_ref(), &params, data)?;
    let sampler = SamplerConfig::new(data.len(), opts.expected_batch, opts.physical_batch)?;
    Ok(TrainReport {
        config: opts.run_config(data, &sampler, source),
        initial: initial.into(),
        steps,
        final_metrics: final_metrics.into(),
        params: params.into_inner(),
    })
}

/// One timed pass of `steps` training steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRun {
    pub wall_time: Duration,
    /// Gradients computed, padding included.
    pub processed: u64,
    /// Gradients of examples that contribute to the update.
    pub active: u64,
}

impl BenchRun {
    pub fn samples_per_sec(&self) -> f64 {
        self.processed as f64 / self.wall_time.as_secs_f64()
    }

    pub fn active_per_sec(&self) -> f64 {
        self.active as f64 / self.wall_time.as_secs_f64()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub runs: Vec<BenchRun>,
    pub median_samples_per_sec: f64,
    pub median_active_per_sec: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Repeats the same seeded run `repeats` times; counts are identical across
/// repeats, only wall times vary.
pub fn run_bench(opts: &TrainOptions, data: &Dataset, repeats: usize) -> Result<BenchSummary> {
    if repeats == 0 {
        return Err(Error::Input("repeats must be at least 1".into()));
    }
    let model = opts.build_model(data.n_features());
    let runs = (0..repeats)
        .map(|_| {
            let mut trainer = opts.trainer(model.as_ref(), data)?;
            let start = Instant::now();
            let (mut processed, mut active) = (0u64, 0u64);
            for _ in 0..opts.steps {
                let r = trainer.step()?;
                processed += r.samples_processed as u64;
                active += r.true_size as u64;
            }
            Ok(BenchRun { wall_time: start.elapsed().max(Duration::from_nanos(1)), processed, active })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchSummary {
        median_samples_per_sec: median(runs.iter().map(BenchRun::samples_per_sec).collect()),
        median_active_per_sec: median(runs.iter().map(BenchRun::active_per_sec).collect()),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dp_batcher_core::engine::{linear_regression, linearly_separable};

    #[test]
    fn zero_steps_reports_initial_metrics() {
        let data = linearly_separable(100, 3, 0).unwrap();
        let report = run_training(&TrainOptions::new(20.0, 8, 0), &data, None).unwrap();
        assert!(report.steps.is_empty());
        assert_eq!(report.initial, report.final_metrics);
        assert_eq!(report.params.len(), 4);
    }

    #[test]
    fn masked_and_exact_modes_end_at_the_same_parameters() {
        let data = linearly_separable(400, 4, 2).unwrap();
        let mut opts = TrainOptions::new(50.0, 16, 15);
        let masked = run_training(&opts, &data, None).unwrap();
        opts.mode = Mode::ExactPoisson;
        let exact = run_training(&opts, &data, None).unwrap();
        assert_eq!(masked.params, exact.params);
        assert!(masked.steps.iter().zip(&exact.steps).all(|(m, e)| m.true_size == e.true_size));
        assert!(masked.steps.iter().all(|s| s.padded_size % 16 == 0));
    }

    #[test]
    fn thread_count_does_not_change_the_result() {
        let data = linearly_separable(300, 3, 5).unwrap();
        let mut opts = TrainOptions::new(60.0, 16, 5);
        opts.model = ModelKind::Mlp;
        opts.hidden = 4;
        let one = run_training(&opts, &data, None).unwrap();
        opts.threads = 3;
        let three = run_training(&opts, &data, None).unwrap();
        assert_eq!(one.params, three.params);
    }

    #[test]
    fn classifier_rejects_real_labels() {
        let data = linear_regression(50, 2, 0.1, 1).unwrap();
        let err = run_training(&TrainOptions::new(10.0, 4, 1), &data, None).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let mut opts = TrainOptions::new(10.0, 4, 3);
        opts.model = ModelKind::Linear;
        assert!(run_training(&opts, &data, None).is_ok());
    }

    #[test]
    fn bench_counts_padding_separately() {
        let data = linearly_separable(500, 3, 7).unwrap();
        let summary = run_bench(&TrainOptions::new(40.0, 32, 10), &data, 3).unwrap();
        assert_eq!(summary.runs.len(), 3);
        let first = summary.runs[0];
        assert!(summary.runs.iter().all(|r| (r.processed, r.active) == (first.processed, first.active)));
        assert!(first.processed >= first.active);
        assert_eq!(first.processed % 32, 0);
        assert!(run_bench(&TrainOptions::new(40.0, 32, 1), &data, 0).is_err());
    }

    #[test]
    fn median_of_even_and_odd_lists() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
