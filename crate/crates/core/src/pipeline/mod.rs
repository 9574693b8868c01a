//! Training and inference orchestration: instance normalization, the
//! diffusion objective, early-stopped training, sampling and checkpoints.

mod checkpoint;
mod config;
mod model;
mod norm;
mod sample;
mod train;

pub use checkpoint::{Checkpoint, OptimizerState, FORMAT_VERSION, MAGIC};
pub use config::{Head, ModelConfig, TrainConfig};
pub use model::{
    squared_error, train_noise_variant, train_step, train_step_debug, DebugStep, LossParts, StepDraws, TimeDiff, TimeDiffNet,
    AR_PREFIX, COND_PREFIX, DENOISER_PREFIX,
};
pub use norm::{
    denormalize, denormalize_batch, instance_normalize, normalize_lookbacks, NormStats, STD_FLOOR,
};
pub use sample::{
    ancestral_sample, eval_threads, evaluate_windows, forecast_windows, mse_eval, sampling_path,
    EvalOptions, Evaluation, NoiseMode, Scale, EVAL_CHUNK, THREADS_ENV,
};
pub use train::{
    normalized_windows, split_windows, train_loop, train_loop_observed, EarlyStopper, EpochRecord,
    TrainOutcome, Verdict,
};

#[cfg(test)]
mod tests;
