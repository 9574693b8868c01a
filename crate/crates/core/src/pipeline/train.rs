use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, OptimizerState};
use super::config::{ModelConfig, TrainConfig};
use super::model::{train_step, TimeDiff};
use super::norm::instance_normalize;
use super::sample::{evaluate_windows, EvalOptions, Scale};
use crate::conditioning::{ar_pretrain, ArPretrainConfig};
use crate::data::{sliding_windows, stack_windows, SeriesWindow, Splits};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};

/// Rng stream reserved for validation sampling.
const VALID_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch, weighted by batch size.
    pub train_loss: f64,
    /// Normalized-scale validation MSE with a single sample per window.
    pub valid_mse: f64,
}

/// Outcome of feeding one validation score to an [`EarlyStopper`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stale,
    Stop,
}

/// Stops after `patience` consecutive scores that fail to beat the best.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: Option<f64>,
    pub stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, score: f64) -> Verdict {
        if self.best.is_none_or(|b| score < b) {
            self.best = Some(score);
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Stale
            }
        }
    }
}

pub struct TrainOutcome {
    /// Model restored to the best validation epoch.
    pub model: TimeDiff,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub ar_history: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Instance-normalized copies of the windows.
pub fn normalized_windows(windows: &[SeriesWindow]) -> Result<Vec<SeriesWindow>> {
    windows.iter().map(|w| Ok(instance_normalize(w)?.0)).collect()
}

/// Windows of the training and validation splits at their configured strides.
pub fn split_windows(
    model: &ModelConfig,
    train: &TrainConfig,
    splits: &Splits,
) -> Result<(Vec<SeriesWindow>, Vec<SeriesWindow>)> {
    let (l, h) = (model.lookback, model.horizon);
    if splits.train.variables() != model.variables {
        return Err(Error::Config(format!(
            "model expects {} variables, data has {}",
            model.variables,
            splits.train.variables()
        )));
    }
    let tw = sliding_windows(&splits.train, l, h, train.train_stride)?;
    let vw = sliding_windows(&splits.valid, l, h, train.eval_stride)?;
    if tw.is_empty() || vw.is_empty() {
        return Err(Error::EmptyData("training and validation need at least one window".into()));
    }
    Ok((tw, vw))
}

pub fn train_loop(model_cfg: &ModelConfig, train_cfg: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    train_loop_observed(model_cfg, train_cfg, splits, |_| {})
}

/// Trains with early stopping and calls `observe` after every epoch.
///
/// The AR initializer is fitted first and stays frozen afterwards. The
/// returned model holds the parameters of the epoch with the lowest
/// validation MSE.
pub fn train_loop_observed(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate(model_cfg)?;
    let (train_raw, valid) = split_windows(model_cfg, train_cfg, splits)?;
    let train = normalized_windows(&train_raw)?;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = TimeDiff::with_rng(model_cfg.clone(), &mut rng)?;

    let ar_history = if model_cfg.use_ar && train_cfg.ar_epochs > 0 {
        let cfg = ArPretrainConfig {
            epochs: train_cfg.ar_epochs,
            batch_size: train_cfg.batch_size,
            adam: AdamConfig::default(),
        };
        ar_pretrain(&model.net.ar, &mut model.store, &train, &cfg, &mut rng)?
    } else {
        Vec::new()
    };

    let adam_cfg = AdamConfig {
        learning_rate: train_cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &model.store, model.trainable_params());
    let mut valid_opts = EvalOptions::new(1, train_cfg.valid_steps, train_cfg.seed);
    valid_opts.seed = train_cfg.seed.wrapping_add(VALID_STREAM);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, TimeDiff, AdamState)> = None;
    let mut stopper = EarlyStopper::new(train_cfg.patience);
    let mut stopped_early = false;

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<&SeriesWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = stack_windows(&batch)?;
            let loss = train_step(&mut model, &mut adam, &x, &y, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {bi}: {msg}")),
                    other => other,
                })?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }

        model.trained = true;
        let valid_mse = evaluate_windows(&model, &valid, &valid_opts, Scale::Normalized)?.mse;
        if !valid_mse.is_finite() {
            return Err(Error::NonFinite(format!("validation MSE at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            valid_mse,
        };
        observe(&record);
        history.push(record);

        match stopper.observe(valid_mse) {
            Verdict::Improved => best = Some((valid_mse, epoch, model.clone(), adam.clone())),
            Verdict::Stale => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_valid, best_epoch, model, adam) = best.expect("max_epochs >= 1");
    let checkpoint = Checkpoint::from_model(
        &model,
        train_cfg,
        Some(OptimizerState::from_adam(&adam, &model.store)),
        best_epoch,
        best_valid,
    );
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
        ar_history,
        best_epoch,
        stopped_early,
    })
}
