use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::conditioning::MixupStrategy;
use crate::data::SeriesWindow;
use crate::nn::{finite_diff_check, AdamConfig, AdamState, ForwardCtx, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        width: 8,
        embedding_hidden: 6,
        diffusion_steps: 20,
        ..ModelConfig::new(2, 12, 6)
    }
}

fn sine_window(d: usize, l: usize, h: usize, phase: f64) -> SeriesWindow {
    let f = |i: usize, t: usize| 3.0 + (0.4 * t as f64 + phase + i as f64).sin() * (1.0 + i as f64);
    SeriesWindow::new(
        Tensor::from_fn(&[d, l], |j| f(j / l, j % l)),
        Tensor::from_fn(&[d, h], |j| f(j / h, l + j % h)),
        0,
    )
    .unwrap()
}

fn normalized_batch(cfg: &ModelConfig, n: usize) -> (Tensor, Tensor) {
    let ws: Vec<SeriesWindow> = (0..n)
        .map(|i| instance_normalize(&sine_window(cfg.variables, cfg.lookback, cfg.horizon, i as f64)).unwrap().0)
        .collect();
    let refs: Vec<&SeriesWindow> = ws.iter().collect();
    crate::data::stack_windows(&refs).unwrap()
}

#[test]
fn diffuse_matches_schedule_per_element() {
    let model = TimeDiff::new(tiny_config(), 0).unwrap();
    let (_, y) = normalized_batch(model.config(), 3);
    let noise = Tensor::randn(y.shape(), &mut rng(1));
    let ks = [1, 7, 20];
    let xk = model.net.diffuse(&y, &ks, &noise).unwrap();
    for (i, &k) in ks.iter().enumerate() {
        let expect = model.net.schedule.forward_sample(&y.index(i), k, &noise.index(i)).unwrap();
        assert!(xk.index(i).max_abs_diff(&expect).unwrap() < 1e-15);
    }
    assert!(model.net.diffuse(&y, &[0, 1, 2], &noise).is_err());
}

#[test]
fn oracle_prediction_gives_zero_loss_for_both_heads() {
    for head in [Head::Data, Head::Noise] {
        let cfg = ModelConfig { head, ..tiny_config() };
        let model = TimeDiff::new(cfg, 0).unwrap();
        let (x, y) = normalized_batch(model.config(), 4);
        let draws = model.net.draw(4, &mut rng(2)).unwrap();
        let parts = model.net.loss_forward(&model.store, &x, &y, &draws, &mut ForwardCtx::eval()).unwrap();
        let truth = match head {
            Head::Data => &y,
            Head::Noise => &draws.noise,
        };
        assert_eq!(&parts.target, truth);
        assert_eq!(squared_error(truth, &parts.target).unwrap(), 0.0);
        assert!(parts.loss > 0.0);
    }
}

#[test]
fn squared_error_examples() {
    let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::new(&[2], vec![3.0, 2.0]).unwrap();
    assert_eq!(squared_error(&a, &b).unwrap(), 2.0);
    assert!(squared_error(&a, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn mse_eval_examples() {
    let t = vec![Tensor::from_fn(&[2, 3], |i| i as f64), Tensor::full(&[2, 3], -1.0)];
    assert_eq!(mse_eval(&t, &t).unwrap(), 0.0);
    let shifted: Vec<Tensor> = t.iter().map(|x| x.map(|v| v + 1.0)).collect();
    assert_eq!(mse_eval(&shifted, &t).unwrap(), 1.0);
    let f = [Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap()];
    let g = [Tensor::new(&[1, 2], vec![3.0, 2.0]).unwrap()];
    assert_eq!(mse_eval(&f, &g).unwrap(), 2.0);
    assert!(mse_eval(&f, &t).is_err());
    assert!(mse_eval(&f, &[Tensor::zeros(&[2, 1])]).is_err());
}

fn end_to_end_gradcheck(cfg: ModelConfig) -> GradCheckSummary {
    let mut model = TimeDiff::new(cfg, 3).unwrap();
    // a trained-looking AR map so that z_ar carries signal
    let ar = model.net.ar.weight;
    *model.store.get_mut(ar) = Tensor::randn(model.store.get(ar).shape(), &mut rng(4)).scale(0.1);
    let (x, y) = normalized_batch(model.config(), 3);
    let draws = model.net.draw(3, &mut rng(5)).unwrap();
    let net = model.net.clone();
    let targets = model.trainable_params();
    let loss = |s: &crate::nn::ParamStore| {
        let mut r = rng(6);
        Ok(net.loss_forward(s, &x, &y, &draws, &mut ForwardCtx::train(&mut r))?.loss)
    };
    let grad = |s: &crate::nn::ParamStore| {
        let mut r = rng(6);
        Ok(net.loss_and_grads(s, &x, &y, &draws, &mut ForwardCtx::train(&mut r))?.1)
    };
    let report = finite_diff_check(&mut model.store, &targets, loss, grad, 10, 1e-5, 7).unwrap();
    GradCheckSummary {
        groups: report.groups.len(),
        worst: report.max_rel_error(),
    }
}

struct GradCheckSummary {
    groups: usize,
    worst: f64,
}

#[test]
fn end_to_end_gradients_data_head() {
    let s = end_to_end_gradcheck(tiny_config());
    assert!(s.groups > 20);
    assert!(s.worst < 1e-4, "{}", s.worst);
}

#[test]
fn end_to_end_gradients_noise_head_hard_mixup() {
    let cfg = ModelConfig {
        head: Head::Noise,
        mixup: MixupStrategy::Hard { tau: 0.5 },
        ..tiny_config()
    };
    let s = end_to_end_gradcheck(cfg);
    assert!(s.worst < 1e-4, "{}", s.worst);
}

#[test]
fn end_to_end_gradients_without_mixup_or_ar() {
    let cfg = ModelConfig {
        mixup: MixupStrategy::Off,
        use_ar: false,
        ..tiny_config()
    };
    let s = end_to_end_gradcheck(cfg);
    assert!(s.worst < 1e-4, "{}", s.worst);
}

#[test]
fn ar_receives_no_gradient() {
    let model = TimeDiff::new(tiny_config(), 0).unwrap();
    let (x, y) = normalized_batch(model.config(), 2);
    let draws = model.net.draw(2, &mut rng(1)).unwrap();
    let (_, grads) = model
        .net
        .loss_and_grads(&model.store, &x, &y, &draws, &mut ForwardCtx::train(&mut rng(2)))
        .unwrap();
    assert!(grads.get(model.net.ar.weight).data().iter().all(|&g| g == 0.0));
    let trainable = model.trainable_params();
    assert!(!trainable.contains(&model.net.ar.weight) && !trainable.contains(&model.net.ar.bias));
}

#[test]
fn every_trainable_group_receives_gradient() {
    let model = TimeDiff::new(tiny_config(), 0).unwrap();
    let (x, y) = normalized_batch(model.config(), 3);
    let draws = model.net.draw(3, &mut rng(1)).unwrap();
    let (_, grads) = model
        .net
        .loss_and_grads(&model.store, &x, &y, &draws, &mut ForwardCtx::train(&mut rng(2)))
        .unwrap();
    for id in model.trainable_params() {
        let g = grads.get(id).data();
        assert!(g.iter().any(|&v| v.abs() > 1e-9), "{}", model.store.name(id));
    }
}

#[test]
fn train_step_is_reproducible() {
    let base = TimeDiff::new(tiny_config(), 0).unwrap();
    let (x, y) = normalized_batch(base.config(), 4);
    let run = || {
        let mut m = base.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &m.store, m.trainable_params());
        let mut r = rng(11);
        (0..3).map(|_| train_step(&mut m, &mut adam, &x, &y, &mut r).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn debug_step_matches_plain_step_and_posterior_formula() {
    for head in [Head::Data, Head::Noise] {
        let base = TimeDiff::new(ModelConfig { head, ..tiny_config() }, 0).unwrap();
        let (x, y) = normalized_batch(base.config(), 5);
        let fresh = |m: &TimeDiff| AdamState::new(AdamConfig::default(), &m.store, m.trainable_params());

        let mut plain = base.clone();
        let mut adam = fresh(&plain);
        let loss = train_step(&mut plain, &mut adam, &x, &y, &mut rng(4)).unwrap();

        let mut traced = base.clone();
        let mut adam = fresh(&traced);
        let step = train_step_debug(&mut traced, &mut adam, &x, &y, &mut rng(4), &mut rng(99)).unwrap();
        assert_eq!(step.loss.to_bits(), loss.to_bits());
        assert_eq!(traced.store.entries(), plain.store.entries());

        // independent per-element posterior step
        let sched = &base.net.schedule;
        let mut abar = vec![1.0f64];
        for b in sched.betas() {
            abar.push(abar.last().unwrap() * (1.0 - b));
        }
        let inner = step.xk.len() / step.ks.len();
        for (i, &k) in step.ks.iter().enumerate() {
            let beta = sched.betas()[k - 1];
            let c0 = abar[k - 1].sqrt() * beta / (1.0 - abar[k]);
            let ck = (1.0 - beta).sqrt() * (1.0 - abar[k - 1]) / (1.0 - abar[k]);
            let sigma = ((1.0 - abar[k - 1]) / (1.0 - abar[k]) * beta).sqrt();
            for j in i * inner..(i + 1) * inner {
                let xk = step.xk.data()[j];
                let p = step.prediction.data()[j];
                let x0 = match head {
                    Head::Data => p,
                    Head::Noise => (xk - (1.0 - abar[k]).sqrt() * p) / abar[k].sqrt(),
                };
                let expected = c0 * x0 + ck * xk + sigma * step.z.data()[j];
                assert!((step.previous.data()[j] - expected).abs() < 1e-10, "{head:?} k={k}");
            }
        }
    }
}

#[test]
fn single_window_overfits() {
    let cfg = ModelConfig { dropout: 0.0, ..tiny_config() };
    let mut model = TimeDiff::new(cfg, 0).unwrap();
    let (x, y) = normalized_batch(model.config(), 1);
    let mut adam = AdamState::new(AdamConfig::default(), &model.store, model.trainable_params());
    let mut r = rng(3);
    let losses: Vec<f64> = (0..200)
        .map(|_| train_step(&mut model, &mut adam, &x, &y, &mut r).unwrap())
        .collect();
    let tail = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail * 10.0 <= losses[0], "first {} tail {}", losses[0], tail);
}

#[test]
fn noise_variant_requires_noise_head() {
    let mut model = TimeDiff::new(tiny_config(), 0).unwrap();
    let (x, y) = normalized_batch(model.config(), 2);
    let mut adam = AdamState::new(AdamConfig::default(), &model.store, model.trainable_params());
    assert!(train_noise_variant(&mut model, &mut adam, &x, &y, &mut rng(0)).is_err());
    let mut model = TimeDiff::new(ModelConfig { head: Head::Noise, ..tiny_config() }, 0).unwrap();
    let mut adam = AdamState::new(AdamConfig::default(), &model.store, model.trainable_params());
    assert!(train_noise_variant(&mut model, &mut adam, &x, &y, &mut rng(0)).unwrap() > 0.0);
}

#[test]
fn oracle_denoiser_reconstructs_through_normalization() {
    let cfg = tiny_config();
    let schedule = crate::schedule::DiffusionSchedule::cosine(100, 1e-4, 0.1).unwrap();
    let windows: Vec<SeriesWindow> = (0..3).map(|i| sine_window(2, 12, 6, i as f64)).collect();
    let lookbacks = Tensor::stack(&windows.iter().map(|w| w.lookback.clone()).collect::<Vec<_>>()).unwrap();
    let targets = Tensor::stack(&windows.iter().map(|w| w.target.clone()).collect::<Vec<_>>()).unwrap();
    let (_, stats) = normalize_lookbacks(&lookbacks).unwrap();
    let x0 = Tensor::stack(
        &stats
            .iter()
            .enumerate()
            .map(|(i, s)| s.apply(&targets.index(i)).unwrap())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let shape = [3, cfg.variables, cfg.horizon];
    for (head, steps) in [(Head::Data, 100), (Head::Noise, 100), (Head::Data, 20), (Head::Noise, 7)] {
        for mode in [NoiseMode::Deterministic, NoiseMode::Stochastic] {
            let path = sampling_path(&schedule, steps).unwrap();
            let (out, calls) = ancestral_sample(&schedule, head, &path, &shape, mode, &mut rng(9), |xk, k| match head {
                Head::Data => Ok(x0.clone()),
                Head::Noise => schedule.noise_from_data(xk, k, &x0),
            })
            .unwrap();
            assert_eq!(calls, steps);
            let raw = denormalize_batch(&out, &stats).unwrap();
            let err = raw.max_abs_diff(&targets).unwrap();
            assert!(err < 1e-6, "{head:?} {steps} {mode:?}: {err}");
        }
    }
}

#[test]
fn sampler_rejects_bad_paths() {
    let schedule = crate::schedule::DiffusionSchedule::cosine(10, 1e-4, 0.1).unwrap();
    let f = |x: &Tensor, _k: usize| Ok(x.clone());
    for path in [vec![], vec![3, 5], vec![11]] {
        let r = ancestral_sample(&schedule, Head::Data, &path, &[1], NoiseMode::Stochastic, &mut rng(0), f);
        assert!(r.is_err(), "{path:?}");
    }
}

fn trained_tiny(cfg: ModelConfig) -> TimeDiff {
    let mut m = TimeDiff::new(cfg, 0).unwrap();
    m.trained = true;
    m
}

#[test]
fn untrained_model_refuses_inference() {
    let m = TimeDiff::new(tiny_config(), 0).unwrap();
    let lb = sine_window(2, 12, 6, 0.0).lookback;
    assert!(matches!(m.sample(&lb, 20, &mut rng(0)), Err(crate::Error::Untrained(_))));
}

#[test]
fn sample_shape_and_seeded_determinism() {
    let m = trained_tiny(tiny_config());
    let lb = sine_window(2, 12, 6, 0.0).lookback;
    let a = m.sample(&lb, 20, &mut rng(5)).unwrap();
    let b = m.sample(&lb, 20, &mut rng(5)).unwrap();
    let c = m.sample(&lb, 20, &mut rng(6)).unwrap();
    assert_eq!(a.shape(), &[2, 6]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(m.sample(&lb, 21, &mut rng(5)).is_err());
}

#[test]
fn single_sample_prediction_equals_manual_sampling() {
    let m = trained_tiny(tiny_config());
    let lb = sine_window(2, 12, 6, 0.3).lookback;
    let p = m.predict(&lb, 1, 10, &mut rng(8)).unwrap();
    let stats = NormStats::from_lookback(&lb).unwrap();
    let normed = stats.apply(&lb).unwrap().tile(1);
    let (s, calls) = m.sample_normalized(&normed, 10, NoiseMode::Stochastic, &mut rng(8)).unwrap();
    assert_eq!(calls, 10);
    assert_eq!(p, stats.invert(&s.index(0)).unwrap());
}

#[test]
fn deterministic_mode_average_equals_single_draw() {
    let m = trained_tiny(tiny_config());
    let lb = sine_window(2, 12, 6, 0.1).lookback.tile(1);
    let (one, _) = m.predict_batch(&lb, 1, 20, NoiseMode::Deterministic, true, &mut rng(1)).unwrap();
    let (ten, _) = m.predict_batch(&lb, 10, 20, NoiseMode::Deterministic, true, &mut rng(2)).unwrap();
    assert!(one.max_abs_diff(&ten).unwrap() < 1e-12);
}

#[test]
fn predict_batch_rows_are_independent_of_batch_order() {
    let m = trained_tiny(tiny_config());
    let a = sine_window(2, 12, 6, 0.1).lookback;
    let b = sine_window(2, 12, 6, 2.0).lookback;
    let ab = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
    let (out, _) = m.predict_batch(&ab, 3, 20, NoiseMode::Deterministic, true, &mut rng(0)).unwrap();
    let (solo, _) = m.predict_batch(&b.tile(1), 3, 20, NoiseMode::Deterministic, true, &mut rng(0)).unwrap();
    assert!(out.index(1).max_abs_diff(&solo.index(0)).unwrap() < 1e-12);
}

#[test]
fn forecasts_ignore_targets_and_thread_count() {
    let m = trained_tiny(tiny_config());
    let windows: Vec<SeriesWindow> = (0..19).map(|i| sine_window(2, 12, 6, i as f64 * 0.3)).collect();
    let mut opts = EvalOptions::new(2, 10, 42);
    let base = forecast_windows(&m, &windows, &opts, Scale::Raw).unwrap();
    let mut corrupted = windows.clone();
    for w in &mut corrupted {
        w.target = w.target.map(|_| f64::NAN);
    }
    opts.threads = 3;
    let other = forecast_windows(&m, &corrupted, &opts, Scale::Raw).unwrap();
    assert_eq!(base.len(), 19);
    for (a, b) in base.iter().zip(&other) {
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn normalized_scale_evaluation_matches_manual() {
    let m = trained_tiny(tiny_config());
    let windows: Vec<SeriesWindow> = (0..3).map(|i| sine_window(2, 12, 6, i as f64)).collect();
    let opts = EvalOptions::new(1, 5, 1);
    let raw = evaluate_windows(&m, &windows, &opts, Scale::Raw).unwrap();
    let norm = evaluate_windows(&m, &windows, &opts, Scale::Normalized).unwrap();
    let mut manual = Vec::new();
    let mut targets = Vec::new();
    for (w, f) in windows.iter().zip(&raw.forecasts) {
        let s = NormStats::from_lookback(&w.lookback).unwrap();
        manual.push(s.apply(f).unwrap());
        targets.push(s.apply(&w.target).unwrap());
    }
    assert!((mse_eval(&manual, &targets).unwrap() - norm.mse).abs() < 1e-10);
    assert_eq!(raw.per_window.len(), 3);
}

#[test]
fn early_stopper_rule() {
    let mut s = EarlyStopper::new(2);
    assert_eq!(s.observe(1.0), Verdict::Improved);
    assert_eq!(s.observe(0.5), Verdict::Improved);
    assert_eq!(s.observe(0.5), Verdict::Stale);
    assert_eq!(s.observe(0.4), Verdict::Improved);
    assert_eq!(s.observe(0.9), Verdict::Stale);
    assert_eq!(s.observe(0.8), Verdict::Stop);
    assert_eq!(s.best, Some(0.4));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut m = trained_tiny(tiny_config());
    let id = m.net.denoiser.output.weight;
    m.store.get_mut(id).data_mut()[0] = std::f64::consts::PI * 1e-300;
    let mut adam = AdamState::new(AdamConfig::default(), &m.store, m.trainable_params());
    let (x, y) = normalized_batch(m.config(), 2);
    train_step(&mut m, &mut adam, &x, &y, &mut rng(0)).unwrap();
    let ckpt = Checkpoint::from_model(&m, &TrainConfig::default(), Some(OptimizerState::from_adam(&adam, &m.store)), 4, 0.125);
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let restored = back.to_model().unwrap();
    assert_eq!(restored.store, m.store);
    assert_eq!(restored.net.schedule, m.net.schedule);
    let adam2 = back.optimizer.as_ref().unwrap().to_adam(&restored.store).unwrap();
    assert_eq!(adam2, adam);
    let lb = sine_window(2, 12, 6, 0.0).lookback;
    assert_eq!(
        restored.sample(&lb, 5, &mut rng(1)).unwrap(),
        m.sample(&lb, 5, &mut rng(1)).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
}

#[test]
fn checkpoint_rejects_corruption() {
    let m = trained_tiny(tiny_config());
    let bytes = Checkpoint::from_model(&m, &TrainConfig::default(), None, 0, f64::INFINITY)
        .to_bytes()
        .unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(crate::Error::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut wrong_version = bytes;
    wrong_version[8] = 9;
    assert!(Checkpoint::from_bytes(&wrong_version).is_err());
}
