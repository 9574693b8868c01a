use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::Head;
use super::model::TimeDiff;
use super::norm::{denormalize_batch, normalize_lookbacks, NormStats};
use crate::data::SeriesWindow;
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, Tensor};
use crate::schedule::DiffusionSchedule;

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "DIFFCAST_THREADS";
/// Windows per evaluation chunk; each chunk owns an independent rng stream.
pub const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `x^K ~ N(0, I)` and posterior noise at every step but the last.
    Stochastic,
    /// `x^K = 0` and no injected noise: every draw is identical.
    Deterministic,
}

/// Decreasing steps visited by the sampler; the final move goes to 0.
pub fn sampling_path(schedule: &DiffusionSchedule, steps: usize) -> Result<Vec<usize>> {
    schedule.strided_subschedule(steps)
}

/// Ancestral sampling with an arbitrary predictor `predict(x^k, k)`.
/// Returns the sample and the number of predictor calls.
pub fn ancestral_sample<F>(
    schedule: &DiffusionSchedule,
    head: Head,
    path: &[usize],
    shape: &[usize],
    mode: NoiseMode,
    rng: &mut ChaCha8Rng,
    mut predict: F,
) -> Result<(Tensor, usize)>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    if path.is_empty() || path.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(format!("sampling path must strictly decrease: {path:?}")));
    }
    let mut x = match mode {
        NoiseMode::Stochastic => Tensor::randn(shape, rng),
        NoiseMode::Deterministic => Tensor::zeros(shape),
    };
    for (i, &t) in path.iter().enumerate() {
        let s = path.get(i + 1).copied().unwrap_or(0);
        let transition = schedule.jump(t, s)?;
        let pred = predict(&x, t)?;
        let noise = match mode {
            NoiseMode::Stochastic if s > 0 => Tensor::randn(shape, rng),
            _ => Tensor::zeros(shape),
        };
        x = match head {
            Head::Data => transition.step_from_data(&x, &pred, &noise)?,
            Head::Noise => transition.step_from_noise(&x, &pred, &noise)?,
        };
    }
    Ok((x, path.len()))
}

/// Evaluation knobs shared by validation, test and the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: NoiseMode,
    pub threads: usize,
}

impl EvalOptions {
    pub fn new(samples: usize, steps: usize, seed: u64) -> Self {
        Self {
            samples,
            steps,
            seed,
            mode: NoiseMode::Stochastic,
            threads: 1,
        }
    }
}

/// Reads the thread cap from the environment; defaults to the available cores.
pub fn eval_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(cores, |n| n.min(cores.max(1)))
}

impl TimeDiff {
    /// Samples normalized forecasts `[B, d, H]` for normalized lookbacks `[B, d, L]`.
    pub fn sample_normalized(
        &self,
        lookback: &Tensor,
        steps: usize,
        mode: NoiseMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, usize)> {
        let net = &self.net;
        let b = lookback.dim(0);
        let cond = net.condition_infer(&self.store, lookback)?;
        let path = sampling_path(&net.schedule, steps)?;
        let mut ctx = ForwardCtx::eval();
        ancestral_sample(&net.schedule, net.config.head, &path, &net.batch_shape(b), mode, rng, |x, k| {
            Ok(net.denoiser.forward(&self.store, x, &vec![k; b], &cond.c, &mut ctx)?.0)
        })
    }

    /// Mean of `samples` draws per lookback for a raw `[B, d, L]` batch.
    /// With `denormalize = false` the result stays on the normalized scale.
    pub fn predict_batch(
        &self,
        lookbacks: &Tensor,
        samples: usize,
        steps: usize,
        mode: NoiseMode,
        denormalize: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Vec<NormStats>)> {
        self.ensure_trained()?;
        if samples == 0 {
            return Err(Error::InvalidArgument("samples must be >= 1".into()));
        }
        let cfg = &self.net.config;
        let b = lookbacks.dim(0);
        lookbacks.expect_shape("predict", &[b, cfg.variables, cfg.lookback])?;
        let (normed, stats) = normalize_lookbacks(lookbacks)?;
        let tiled = normed.tile(samples).reshape(&[samples * b, cfg.variables, cfg.lookback])?;
        let (draws, _) = self.sample_normalized(&tiled, steps, mode, rng)?;
        let inner = cfg.variables * cfg.horizon;
        let mut mean = vec![0.0; b * inner];
        for chunk in draws.data().chunks(b * inner) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= samples as f64;
        }
        let mean = Tensor::new(&[b, cfg.variables, cfg.horizon], mean)?;
        let out = if denormalize { denormalize_batch(&mean, &stats)? } else { mean };
        Ok((out, stats))
    }

    /// One forecast `[d, H]` for a raw `[d, L]` lookback.
    pub fn sample(&self, lookback: &Tensor, steps: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        self.predict(lookback, 1, steps, rng)
    }

    /// Pointwise mean of `samples` forecasts for a raw `[d, L]` lookback.
    pub fn predict(&self, lookback: &Tensor, samples: usize, steps: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let batch = lookback.tile(1);
        let (out, _) = self.predict_batch(&batch, samples, steps, NoiseMode::Stochastic, true, rng)?;
        Ok(out.index(0))
    }
}

/// Which scale [`forecast_windows`] reports in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Raw,
    Normalized,
}

/// Forecasts for every window from its lookback alone.
///
/// Windows are processed in chunks of [`EVAL_CHUNK`]; chunk `j` draws from
/// stream `j` of a ChaCha8 generator seeded with `opts.seed`, so results do
/// not depend on the thread count.
pub fn forecast_windows(
    model: &TimeDiff,
    windows: &[SeriesWindow],
    opts: &EvalOptions,
    scale: Scale,
) -> Result<Vec<Tensor>> {
    model.ensure_trained()?;
    let lookbacks: Vec<&Tensor> = windows.iter().map(|w| &w.lookback).collect();
    let chunks: Vec<&[&Tensor]> = lookbacks.chunks(EVAL_CHUNK).collect();
    let run = |j: usize| -> Result<Vec<Tensor>> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(j as u64);
        let items: Vec<Tensor> = chunks[j].iter().map(|t| (*t).clone()).collect();
        let batch = Tensor::stack(&items)?;
        let (out, _) = model.predict_batch(
            &batch,
            opts.samples,
            opts.steps,
            opts.mode,
            scale == Scale::Raw,
            &mut rng,
        )?;
        Ok((0..items.len()).map(|i| out.index(i)).collect())
    };
    let threads = opts.threads.clamp(1, chunks.len().max(1));
    let mut results: Vec<Option<Result<Vec<Tensor>>>> = (0..chunks.len()).map(|_| None).collect();
    if threads == 1 {
        for (j, slot) in results.iter_mut().enumerate() {
            *slot = Some(run(j));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run = &run;
                    let n = chunks.len();
                    scope.spawn(move || (t..n).step_by(threads).map(|j| (j, run(j))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (j, r) in h.join().expect("evaluation thread panicked") {
                    results[j] = Some(r);
                }
            }
        });
    }
    let mut out = Vec::with_capacity(windows.len());
    for r in results {
        out.extend(r.expect("every chunk evaluated")?);
    }
    Ok(out)
}

/// Mean squared error over every variable, step and window.
pub fn mse_eval(forecasts: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    if forecasts.len() != targets.len() {
        return Err(Error::shape("mse_eval", &[targets.len()], &[forecasts.len()]));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (f, t) in forecasts.iter().zip(targets) {
        f.expect_same_shape("mse_eval", t)?;
        sum += f.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += f.len();
    }
    if count == 0 {
        return Err(Error::EmptyData("no forecasts to score".into()));
    }
    Ok(sum / count as f64)
}

/// Per-window MSE and overall MSE of model forecasts against window targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    pub per_window: Vec<f64>,
    pub forecasts: Vec<Tensor>,
}

/// Scores `model` on `windows`. Targets are read only after every forecast
/// has been produced.
pub fn evaluate_windows(
    model: &TimeDiff,
    windows: &[SeriesWindow],
    opts: &EvalOptions,
    scale: Scale,
) -> Result<Evaluation> {
    let forecasts = forecast_windows(model, windows, opts, scale)?;
    let targets = windows
        .iter()
        .map(|w| match scale {
            Scale::Raw => Ok(w.target.clone()),
            Scale::Normalized => NormStats::from_lookback(&w.lookback)?.apply(&w.target),
        })
        .collect::<Result<Vec<_>>>()?;
    let per_window = forecasts
        .iter()
        .zip(&targets)
        .map(|(f, t)| mse_eval(std::slice::from_ref(f), std::slice::from_ref(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        mse: mse_eval(&forecasts, &targets)?,
        per_window,
        forecasts,
    })
}
