//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p dp-batcher --test acceptance`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dp_batcher::core::binom::{binom_survival, excess_upper_bound, expected_excess_masked, BinomialTable};
use dp_batcher::core::costsim::{sweep_excess, sweep_physical_batch, SweepConfig};
use dp_batcher::core::engine::{
    clip_gradient, dp_sgd_step, ghost_norm_dense, l2_norm, linearly_separable, ClipSpec, GradVector,
    LogisticRegression, Model, NoiseSpec, SamplingMode, Sequential, StepBatch, StepConfig, Trainer,
};
use dp_batcher::core::sampling::{build_batch_plan, SamplerConfig};
use dp_batcher::core::RngStreams;
use dp_batcher::dataset::read_dataset;
use dp_batcher::training::{run_training, Mode, ModelKind, TrainOptions};
use dp_batcher::verify::SamplerCheck;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, Discrete};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn golden_excess() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (q, want) in [(0.5, 599.92), (0.51, 288.73)] {
        let (r, t) = timed(|| expected_excess_masked(50_000, q, 1024));
        let got = r.map_err(|e| e.to_string())?.expected_excess;
        ok &= (got - want).abs() <= 0.5 && t < Duration::from_secs(1);
        notes.push(format!("q={q}: {got:.4} (want {want} ± 0.5) in {:.1} ms", t.as_secs_f64() * 1e3));
    }
    check(ok, notes.join("; "))
}

fn upper_bound_anchor() -> Outcome {
    let (n, l, p) = (50_000u64, 25_000.0, 64usize);
    let bound = excess_upper_bound(p, l).map_err(|e| e.to_string())? - 1.0;
    // Direct summation oracle over the binomial pmf.
    let binom = Binomial::new(0.5, n).map_err(|e| e.to_string())?;
    let exact: f64 = (0..=n).map(|i| binom.pmf(i) * (i.div_ceil(p as u64) * p as u64 - i) as f64).sum::<f64>() / l;
    let library = expected_excess_masked(n, 0.5, p).map_err(|e| e.to_string())?.expected_excess / l;

    let cfg = SamplerConfig::new(n as usize, l, p).map_err(|e| e.to_string())?;
    let mut streams = RngStreams::new(11);
    let (mut b, mut b_plus) = (0u64, 0u64);
    for _ in 0..100_000 {
        let plan = build_batch_plan(&cfg, &mut streams);
        b += plan.true_size() as u64;
        b_plus += plan.padded_size() as u64;
    }
    let sampled = b_plus as f64 / b as f64 - 1.0;
    let half = exact / bound;
    check(
        (bound - 0.00252).abs() < 1e-15
            && exact > 0.0
            && exact <= bound
            && (0.4..=0.6).contains(&half)
            && (library - exact).abs() < 1e-9
            && sampled > 0.0
            && sampled <= bound,
        format!("bound {bound:.5}; exact {exact:.6} ({half:.3} of bound); sampled over 1e5 plans {sampled:.6}"),
    )
}

fn physical_batch_ordering() -> Outcome {
    let (sweep, t) = timed(|| sweep_physical_batch(50_000, 0.5, 900..=1024));
    let sweep = sweep.map_err(|e| e.to_string())?;
    let at = |p: usize| sweep.curve.rows().iter().find(|r| r.physical_batch == Some(p)).map(|r| r.expected_excess);
    let (e1007, e1024) = (at(1007).ok_or("no p=1007 row")?, at(1024).ok_or("no p=1024 row")?);
    let (best_p, best) = sweep.best().ok_or("empty sweep")?;
    check(
        e1007 < e1024 && t < Duration::from_secs(10),
        format!(
            "excess(1007) = {e1007:.3} < excess(1024) = {e1024:.3}; best in [900,1024] p={best_p} ({best:.3}); sweep {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn poisson_equivalence() -> Outcome {
    let mut check_ok = SamplerCheck::new(8, 0.3, 1_000_000, 99);
    check_ok.physical_batch = 3;
    let good = check_ok.run().map_err(|e| e.to_string())?;
    let mut corrupted = check_ok;
    corrupted.sampler_rate = 0.35;
    let bad = corrupted.run().map_err(|e| e.to_string())?;
    check(
        good.passes(1e-3) && !bad.passes(1e-3),
        format!(
            "chi2 = {:.2} (df {}), p = {:.4}; control q'=0.35: p = {:.3e}",
            good.statistic, good.df, good.p_value, bad.p_value
        ),
    )
}

fn step_config(sigma: f64, l: f64, lr: f64, steps: u64) -> StepConfig {
    StepConfig::new(ClipSpec::new(1.0).unwrap(), NoiseSpec::new(sigma, l, steps).unwrap(), lr).unwrap()
}

fn masked_step_equivalence() -> Outcome {
    let data = linearly_separable(1000, 5, 8).map_err(|e| e.to_string())?;
    let model = LogisticRegression::new(5);
    let sampler = SamplerConfig::new(1000, 120.0, 32).map_err(|e| e.to_string())?;
    let cfg = step_config(0.8, 120.0, 0.5, 20);
    let trainer = |mode| {
        Trainer::new(&model, &data, sampler, cfg, mode, model.init_params(5), RngStreams::new(2024), Sequential)
            .map_err(|e| e.to_string())
    };
    let (mut masked, mut exact) = (trainer(SamplingMode::Masked)?, trainer(SamplingMode::ExactPoisson)?);
    let mut padded_steps = 0;
    for t in 0..20 {
        let rm = masked.step().map_err(|e| e.to_string())?;
        exact.step().map_err(|e| e.to_string())?;
        padded_steps += usize::from(rm.padded_size > rm.true_size);
        if masked.params() != exact.params() {
            return Err(format!("trajectories differ at step {t}"));
        }
    }

    // Padding leak: rows outside the active set are perturbed before each step.
    let mut streams = RngStreams::new(7);
    let mut params = model.init_params(1);
    let mut perturbed_rows = 0;
    for t in 0..20 {
        streams.begin_step(t);
        let plan = build_batch_plan(&sampler, &mut streams);
        let mut shadow = data.clone();
        for i in (0..data.len()).filter(|i| !plan.active_indices().contains(i)) {
            shadow.features_mut(i).iter_mut().for_each(|x| *x = *x * 1e4 - 333.0);
            perturbed_rows += 1;
        }
        let run =
            |d, s: &mut RngStreams| dp_sgd_step(&model, &params, d, t, StepBatch::Masked(&plan), &cfg, s, &Sequential);
        let (clean, _) = run(&data, &mut streams.clone()).map_err(|e| e.to_string())?;
        let (dirty, _) = run(&shadow, &mut streams).map_err(|e| e.to_string())?;
        if clean != dirty {
            return Err(format!("padding leaked into the update at step {t}"));
        }
        params = clean;
    }
    check(
        padded_steps > 0,
        format!("20 steps bitwise identical ({padded_steps} padded); leak test over {perturbed_rows} perturbed rows: zero difference"),
    )
}

fn clipping_and_ghost_norms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let c = 1.0;
    let spec = ClipSpec::new(c).map_err(|e| e.to_string())?;
    let mut worst_clip = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=64);
        let scale = 10f64.powf(rng.random_range(-6.0..8.0));
        let g: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let clipped = clip_gradient(&GradVector::from(g), &spec).map_err(|e| e.to_string())?;
        worst_clip = worst_clip.max(l2_norm(&clipped));
    }
    let mut worst_rel = 0.0f64;
    for _ in 0..1_000 {
        let (din, dout) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let bias = rng.random_bool(0.5);
        let a: Vec<f64> = (0..din).map(|_| rng.random_range(-3.0..3.0)).collect();
        let e: Vec<f64> = (0..dout).map(|_| rng.random_range(-3.0..3.0)).collect();
        // Materialize the weight gradient e aᵀ (and the bias gradient e).
        let mut sq = 0.0;
        for ei in &e {
            for aj in &a {
                sq += (ei * aj).powi(2);
            }
            if bias {
                sq += ei * ei;
            }
        }
        let explicit = sq.sqrt();
        let ghost = ghost_norm_dense(&a, &e, bias);
        worst_rel = worst_rel.max((ghost - explicit).abs() / explicit);
    }
    check(
        worst_clip <= c + 1e-12 && worst_rel <= 1e-9,
        format!("max post-clip norm {worst_clip:.16} over 1e4 gradients; max ghost rel. error {worst_rel:.2e} over 1e3 shapes"),
    )
}

fn ratio_pow2(num: &BigUint, shift: u64) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let drop = num.bits().saturating_sub(64);
    let top = (num >> drop).to_u64().unwrap() as f64;
    let e = drop as i64 - shift as i64;
    let half = (e / 2) as i32;
    top * 2f64.powi(half) * 2f64.powi((e - half as i64) as i32)
}

fn neumaier_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

fn binomial_numerics() -> Outcome {
    const N: u64 = 50_000;
    let mut worst_sum = 0.0f64;
    for q in [0.5, 0.01, 0.3, 0.99] {
        let table = BinomialTable::new(N, q).map_err(|e| e.to_string())?;
        let total = neumaier_sum(table.pmf());
        worst_sum = worst_sum.max((total - 1.0).abs());
    }
    // Exact tails at q = 1/2: S(B) = Σ_{j>B} C(N, j) / 2^N.
    let mut c = BigUint::one();
    let mut coeffs = vec![c.clone()];
    for i in 0..N {
        c = c * (N - i) / (i + 1);
        coeffs.push(c.clone());
    }
    let mut suffix = BigUint::zero();
    let mut tails = vec![BigUint::zero(); N as usize + 2];
    for i in (0..=N as usize).rev() {
        suffix += &coeffs[i];
        tails[i] = suffix.clone();
    }
    let mut worst_rel = 0.0f64;
    for k in 0..20u64 {
        let b = 24_300 + 70 * k;
        let exact = ratio_pow2(&tails[b as usize + 1], N);
        let ours = binom_survival(N, 0.5, b).map_err(|e| e.to_string())?;
        worst_rel = worst_rel.max((ours - exact).abs() / exact);
    }
    check(
        worst_sum <= 1e-12 && worst_rel <= 1e-12,
        format!("max |Σ pmf - 1| = {worst_sum:.2e}; max survival rel. error vs big-int = {worst_rel:.2e} at 20 bounds"),
    )
}

fn masked_beats_truncated() -> Outcome {
    let mut cfg = SweepConfig::reference();
    cfg.physical_batches = vec![64, 256];
    cfg.rates = (20..=80).map(|i| i as f64 / 100.0).collect();
    let (curve, t) = timed(|| sweep_excess(&cfg));
    let curve = curve.map_err(|e| e.to_string())?;
    let mut compared = 0;
    let mut worst_gap = f64::INFINITY;
    for m in curve.rows().iter().filter(|r| r.method.as_str() == "masked") {
        for tr in curve.rows().iter().filter(|r| r.method.as_str() == "truncated" && r.rate == m.rate) {
            compared += 1;
            worst_gap = worst_gap.min(tr.expected_excess - m.expected_excess);
            if m.expected_excess >= tr.expected_excess {
                return Err(format!(
                    "q={} p={:?} eps={:?}: masked {} >= truncated {}",
                    m.rate, m.physical_batch, tr.epsilon, m.expected_excess, tr.expected_excess
                ));
            }
        }
    }
    check(
        compared == 61 * 2 * 2,
        format!(
            "masked < truncated at {compared} grid points (min gap {worst_gap:.2}); sweep {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn training_sanity() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_logistic.csv");
    let data = read_dataset(&path).map_err(|e| e.to_string())?;
    let mut opts = TrainOptions::new(250.0, 64, 50);
    opts.model = ModelKind::Logistic;
    opts.mode = Mode::Masked;
    opts.sigma = 0.1;
    opts.clip = 1.0;
    opts.learning_rate = 2.0;
    let report = run_training(&opts, &data, None).map_err(|e| e.to_string())?;
    let acc = report.final_metrics.accuracy.ok_or("no accuracy")?;
    check(
        acc >= 0.9 && report.steps.len() <= 50,
        format!("accuracy {acc:.4} after {} steps (N={}, L=250, p=64, σ=0.1, C=1)", report.steps.len(), data.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("golden masked excess", golden_excess),
        ("upper-bound anchor", upper_bound_anchor),
        ("physical batch ordering", physical_batch_ordering),
        ("binomial + WOR equals Poisson", poisson_equivalence),
        ("masked/exact step equivalence", masked_step_equivalence),
        ("clipping and ghost norms", clipping_and_ghost_norms),
        ("binomial numerics", binomial_numerics),
        ("masked beats truncated", masked_beats_truncated),
        ("training sanity", training_sanity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let (outcome, t) = timed(f);
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name}: {detail} [{:.2} s]", t.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
