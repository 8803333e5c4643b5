use super::*;
use alloc::vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grad(v: &[f64]) -> GradVector {
    GradVector::from(v.to_vec())
}

fn step_cfg(c: f64, sigma: f64, l: f64, lr: f64) -> StepConfig {
    StepConfig::new(ClipSpec::new(c).unwrap(), NoiseSpec::new(sigma, l, 1).unwrap(), lr).unwrap()
}

#[test]
fn clip_examples() {
    let spec = ClipSpec::new(1.0).unwrap();
    let g = grad(&[0.3, 0.4]);
    assert_eq!(clip_gradient(&g, &spec).unwrap(), g);

    let spec = ClipSpec::new(2.5).unwrap();
    assert_eq!(clip_gradient(&grad(&[3.0, 4.0]), &spec).unwrap(), grad(&[1.5, 2.0]));

    assert!(clip_gradient(&grad(&[f64::NAN, 1.0]), &spec).is_err());
    assert!(clip_gradient(&grad(&[f64::INFINITY]), &spec).is_err());
    assert!(ClipSpec::new(0.0).is_err());
    assert!(ClipSpec::new(-1.0).is_err());
}

#[test]
fn clip_preserves_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = ClipSpec::new(4.63).unwrap();
    for _ in 0..200 {
        let g: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = clip_gradient(&grad(&g), &spec).unwrap();
        assert!(l2_norm(&c) <= 4.63 + 1e-12);
        let cos = g.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>() / (l2_norm(&g) * l2_norm(&c));
        assert!((cos - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ghost_norm_examples() {
    assert_eq!(ghost_norm_dense(&[0.0, 0.0], &[1.0, 2.0], false), 0.0);
    assert_eq!(ghost_norm_dense(&[1.0, 0.0], &[2.0, 0.0], false), 2.0);
    // With bias the gradient also contains e itself.
    assert_eq!(ghost_norm_dense(&[0.0, 0.0], &[3.0, 4.0], true), 5.0);
}

#[test]
fn ghost_norm_matches_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let explicit = libm::sqrt(e.iter().flat_map(|ei| a.iter().map(move |aj| (ei * aj).powi(2))).sum());
        let ghost = ghost_norm_dense(&a, &e, false);
        assert!((ghost - explicit).abs() <= 1e-9 * explicit);
    }
}

#[test]
fn box_muller_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = standard_normal_vector(&mut rng, 200_001);
    assert_eq!(z.len(), 200_001);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 3.0 / n.sqrt());
    assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt());
}

#[test]
fn per_example_grads_cases() {
    let data = linearly_separable(20, 3, 0).unwrap();
    let model = LogisticRegression::new(3);
    let params = vec![0.1, -0.2, 0.3, 0.05];
    assert!(per_example_grads(&model, &params, &data, &[]).is_empty());
    let ids = [4, 0, 17, 4];
    let batch = per_example_grads(&model, &params, &data, &ids);
    for (g, &i) in batch.iter().zip(&ids) {
        assert_eq!(g, &model.grad(&params, data.example(i)));
    }
}

#[test]
fn noiseless_single_example_is_scaled_sgd() {
    let data = Dataset::new(2, vec![0.1, 0.2, 5.0, 5.0], vec![0.3, 1.0]).unwrap();
    let model = LinearRegression::new(2);
    let params = ParamVector::from(vec![0.2, -0.1, 0.05]);
    let g = model.grad(&params, data.example(0));
    assert!(l2_norm(&g) <= 1.0);
    let cfg = step_cfg(1.0, 0.0, 4.0, 0.5);
    let mut streams = RngStreams::new(0);
    let (next, report) = dp_sgd_step(
        &model,
        &params,
        &data,
        0,
        StepBatch::Exact { indices: &[0], physical_batch: 2 },
        &cfg,
        &mut streams,
        &Sequential,
    )
    .unwrap();
    for k in 0..3 {
        assert_eq!(next[k], params[k] - 0.5 * (g[k] / 4.0));
    }
    assert_eq!(report.true_size, 1);
    assert_eq!(report.fraction_clipped, 0.0);
}

#[test]
fn empty_plan_takes_pure_noise_step() {
    let data = linearly_separable(10, 3, 0).unwrap();
    let model = LogisticRegression::new(3);
    let cfg = step_cfg(1.5, 2.0, 4.0, 0.1);
    let sampler = SamplerConfig::new(10, 1e-9, 2).unwrap();
    let mut streams = RngStreams::new(5);
    let plan = build_batch_plan(&sampler, &mut streams);
    assert_eq!(plan.true_size(), 0);
    let params = ParamVector::zeros(4);
    let mut reference = streams.clone();
    let (next, report) =
        dp_sgd_step(&model, &params, &data, 0, StepBatch::Masked(&plan), &cfg, &mut streams, &Sequential).unwrap();
    let z = standard_normal_vector(reference.noise_stream(), 4);
    for k in 0..4 {
        assert_eq!(next[k], -0.1 * ((0.0 + 3.0 * z[k]) / 4.0));
    }
    assert_eq!(report.norm_max, None);
    assert_eq!(report.samples_processed, 0);
}

#[test]
fn dimension_mismatch_is_reported() {
    let data = linearly_separable(10, 3, 0).unwrap();
    let model = LogisticRegression::new(3);
    let cfg = step_cfg(1.0, 0.0, 4.0, 0.1);
    let err = dp_sgd_step(
        &model,
        &ParamVector::zeros(7),
        &data,
        0,
        StepBatch::Exact { indices: &[1], physical_batch: 1 },
        &cfg,
        &mut RngStreams::new(0),
        &Sequential,
    )
    .unwrap_err();
    assert_eq!(err, Error::DimensionMismatch { expected: 4, actual: 7 });

    let wrong_model = LogisticRegression::new(2);
    assert!(dp_sgd_step(
        &wrong_model,
        &ParamVector::zeros(3),
        &data,
        0,
        StepBatch::Exact { indices: &[1], physical_batch: 1 },
        &cfg,
        &mut RngStreams::new(0),
        &Sequential,
    )
    .is_err());

    assert!(dp_sgd_step(
        &model,
        &ParamVector::zeros(4),
        &data,
        0,
        StepBatch::Exact { indices: &[10], physical_batch: 1 },
        &cfg,
        &mut RngStreams::new(0),
        &Sequential,
    )
    .is_err());
}

#[test]
fn masked_and_exact_steps_agree_bitwise() {
    let data = linearly_separable(300, 4, 9).unwrap();
    let model = LogisticRegression::new(4);
    let sampler = SamplerConfig::new(300, 45.0, 16).unwrap();
    let cfg = step_cfg(0.8, 1.1, 45.0, 0.7);
    for seed in 0..5 {
        let mut a = RngStreams::new(seed);
        let mut b = RngStreams::new(seed);
        a.begin_step(0);
        b.begin_step(0);
        let plan = build_batch_plan(&sampler, &mut a);
        let exact = draw_poisson_batch(&sampler, &mut b);
        assert!(plan.padded_size() > plan.true_size());
        let params = ParamVector::from(vec![0.3, -0.2, 0.1, 0.4, -0.05]);
        let (pa, ra) =
            dp_sgd_step(&model, &params, &data, 0, StepBatch::Masked(&plan), &cfg, &mut a, &Sequential).unwrap();
        let (pb, rb) = dp_sgd_step(
            &model,
            &params,
            &data,
            0,
            StepBatch::Exact { indices: &exact, physical_batch: 16 },
            &cfg,
            &mut b,
            &Sequential,
        )
        .unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ra.norm_max, rb.norm_max);
        assert_eq!(ra.fraction_clipped, rb.fraction_clipped);
        assert_eq!(ra.samples_processed, plan.padded_size());
        assert_eq!(rb.samples_processed, plan.true_size());
    }
}

#[test]
fn tree_accumulation_is_close_to_sequential() {
    let data = linearly_separable(400, 6, 1).unwrap();
    let model = Mlp::new(6, 8);
    let sampler = SamplerConfig::new(400, 150.0, 32).unwrap();
    let seq = step_cfg(1.0, 0.5, 150.0, 0.3);
    let tree = seq.with_accumulation(Accumulation::Tree);
    let init = model.init_params(3);
    let run = |cfg| {
        train(&model, &data, sampler, cfg, SamplingMode::Masked, init.clone(), 5, RngStreams::new(8), Sequential)
            .unwrap()
            .0
    };
    let (a, b) = (run(seq), run(tree));
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn ghost_clipping_matches_explicit_clipping() {
    let data = linearly_separable(200, 5, 2).unwrap();
    let model = Mlp::new(5, 7);
    let sampler = SamplerConfig::new(200, 60.0, 16).unwrap();
    let explicit = step_cfg(0.05, 0.3, 60.0, 0.5);
    let ghost = explicit.with_clip_method(ClipMethod::Ghost);
    let init = model.init_params(1);
    let run = |cfg| {
        train(&model, &data, sampler, cfg, SamplingMode::Masked, init.clone(), 4, RngStreams::new(2), Sequential)
            .unwrap()
    };
    let (pa, ra) = run(explicit);
    let (pb, rb) = run(ghost);
    assert!(ra.iter().all(|r| r.fraction_clipped > 0.0));
    for (x, y) in pa.iter().zip(pb.iter()) {
        assert!((x - y).abs() <= 1e-12);
    }
    for (x, y) in ra.iter().zip(&rb) {
        assert!((x.norm_max.unwrap() - y.norm_max.unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn padding_never_leaks() {
    let mut data = linearly_separable(200, 3, 4).unwrap();
    let model = LogisticRegression::new(3);
    let sampler = SamplerConfig::new(200, 30.0, 16).unwrap();
    let cfg = step_cfg(1.0, 0.7, 30.0, 0.4);
    let mut streams = RngStreams::new(21);
    streams.begin_step(0);
    let plan = build_batch_plan(&sampler, &mut streams.clone());
    let params = ParamVector::from(vec![0.1, 0.2, -0.3, 0.0]);
    let (before, _) =
        dp_sgd_step(&model, &params, &data, 0, StepBatch::Masked(&plan), &cfg, &mut streams.clone(), &Sequential)
            .unwrap();
    for &i in &plan.indices()[plan.true_size()..] {
        data.features_mut(i).iter_mut().for_each(|x| *x = *x * 1e3 - 17.0);
    }
    let (after, _) =
        dp_sgd_step(&model, &params, &data, 0, StepBatch::Masked(&plan), &cfg, &mut streams, &Sequential).unwrap();
    assert!(plan.padded_size() > plan.true_size());
    assert_eq!(before, after);
}

#[test]
fn noise_std_scales_with_clip_norm() {
    let data = linearly_separable(4, 9, 0).unwrap();
    let model = LogisticRegression::new(9);
    let sigma = 1.3;
    let l = 2.0;
    let lr = 1.0;
    let mut stds = Vec::new();
    for c in [1.0, 2.0] {
        let cfg = step_cfg(c, sigma, l, lr);
        let mut streams = RngStreams::new(77);
        let params = ParamVector::zeros(10);
        let mut samples = Vec::new();
        for t in 0..1000 {
            let (next, _) = dp_sgd_step(
                &model,
                &params,
                &data,
                t,
                StepBatch::Exact { indices: &[], physical_batch: 1 },
                &cfg,
                &mut streams,
                &Sequential,
            )
            .unwrap();
            samples.extend(next.iter().map(|v| -v * l / lr));
        }
        let n = samples.len() as f64;
        let var = samples.iter().map(|v| v * v).sum::<f64>() / n;
        let std = var.sqrt();
        let expected = sigma * c;
        assert!((std - expected).abs() <= 3.0 * expected / (2.0 * n).sqrt(), "C={c}: {std}");
        stds.push(std);
    }
    // Same noise stream, so the ratio is exact up to rounding.
    assert!((stds[1] / stds[0] - 2.0).abs() < 1e-12);
}

#[test]
fn zero_steps_returns_initial_parameters() {
    let data = linearly_separable(50, 3, 0).unwrap();
    let model = LogisticRegression::new(3);
    let sampler = SamplerConfig::new(50, 10.0, 5).unwrap();
    let init = ParamVector::from(vec![0.5, 0.25, -1.0, 2.0]);
    let (params, reports) = train(
        &model,
        &data,
        sampler,
        step_cfg(1.0, 1.0, 10.0, 0.1),
        SamplingMode::Masked,
        init.clone(),
        0,
        RngStreams::new(0),
        Sequential,
    )
    .unwrap();
    assert_eq!(params, init);
    assert!(reports.is_empty());
}

#[test]
fn full_batch_noiseless_regression_descends() {
    let data = linear_regression(32, 3, 0.1, 5).unwrap();
    let model = LinearRegression::new(3);
    let sampler = SamplerConfig::new(32, 32.0, 32).unwrap();
    let cfg = step_cfg(1e6, 0.0, 32.0, 0.05);
    let mut trainer = Trainer::new(
        &model,
        &data,
        sampler,
        cfg,
        SamplingMode::Masked,
        model.init_params(0),
        RngStreams::new(1),
        Sequential,
    )
    .unwrap();
    let mut last = evaluate(&model, trainer.params(), &data).unwrap().loss;
    for _ in 0..4 {
        let report = trainer.step().unwrap();
        assert_eq!((report.true_size, report.padded_size), (32, 32));
        let loss = evaluate(&model, trainer.params(), &data).unwrap().loss;
        assert!(loss < last);
        last = loss;
    }
}

#[test]
fn logistic_training_reaches_high_accuracy() {
    let data = linearly_separable(1000, 5, 11).unwrap();
    let model = LogisticRegression::new(5);
    let sampler = SamplerConfig::new(1000, 250.0, 64).unwrap();
    let cfg = step_cfg(1.0, 0.1, 250.0, 2.0);
    let (params, reports) = train(
        &model,
        &data,
        sampler,
        cfg,
        SamplingMode::Masked,
        model.init_params(0),
        50,
        RngStreams::new(3),
        Sequential,
    )
    .unwrap();
    assert_eq!(reports.len(), 50);
    for r in &reports {
        assert!(r.clipped_norm_max.unwrap() <= 1.0 + 1e-12);
        assert!((0.0..=1.0).contains(&r.fraction_clipped));
    }
    let acc = evaluate(&model, &params, &data).unwrap().accuracy.unwrap();
    assert!(acc >= 0.9, "accuracy {acc}");
}

#[test]
fn shuffle_baseline_uses_fixed_batches_covering_an_epoch() {
    let data = linearly_separable(40, 2, 0).unwrap();
    let model = LogisticRegression::new(2);
    let sampler = SamplerConfig::new(40, 10.0, 4).unwrap();
    let (_, reports) = train(
        &model,
        &data,
        sampler,
        step_cfg(1.0, 0.0, 10.0, 0.1),
        SamplingMode::ShuffleBaseline,
        model.init_params(0),
        8,
        RngStreams::new(0),
        Sequential,
    )
    .unwrap();
    assert!(reports.iter().all(|r| r.true_size == 10 && r.padded_size == 10));
}

#[test]
fn trainer_rejects_mismatched_dataset() {
    let data = linearly_separable(40, 2, 0).unwrap();
    let model = LogisticRegression::new(2);
    let sampler = SamplerConfig::new(41, 10.0, 4).unwrap();
    assert!(Trainer::new(
        &model,
        &data,
        sampler,
        step_cfg(1.0, 0.0, 10.0, 0.1),
        SamplingMode::Masked,
        model.init_params(0),
        RngStreams::new(0),
        Sequential,
    )
    .is_err());
}
