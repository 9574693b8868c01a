//! Command implementations behind the `diffcast` binary. Every command
//! validates its full configuration before touching the filesystem.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::MixupStrategy;
use crate::data::{
    adf_statistic, chronological_split, load_csv, sliding_windows, synth_generate, write_csv,
    RawSeries, Splits, SynthKind,
};
use crate::error::{Error, Result};
use crate::gradsuite::{gradient_suite, SuiteReport, SUITE_PROBES, SUITE_TOLERANCE};
use crate::pipeline::{
    eval_threads, evaluate_windows, train_loop_observed, Checkpoint, EvalOptions, Evaluation,
    Head, ModelConfig, Scale, TrainConfig,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const HARD_SEGMENT_TAUS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Mixup choice as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixupKind {
    None,
    Soft,
    Hard,
    Segment,
}

/// Flat run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV input; when absent a synthetic series is generated.
    pub dataset_path: Option<PathBuf>,
    pub synth_kind: SynthKind,
    pub synth_n: usize,
    pub synth_d: usize,
    pub synth_noise_std: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub split_ratios: [u32; 3],
    pub train_stride: usize,
    pub eval_stride: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub ar_epochs: usize,
    /// Forecasts averaged per window at test time.
    pub samples: usize,
    /// Sampler steps at test time.
    pub sampler_steps: usize,
    /// Sampler steps for the per-epoch validation forecast.
    pub valid_steps: usize,
    pub width: usize,
    pub embedding_hidden: usize,
    pub dropout: f64,
    pub mixup: MixupKind,
    /// Threshold for hard and segment mixup.
    pub tau: f64,
    pub use_ar: bool,
    pub head: Head,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Seeds per ablation cell, starting at `seed`.
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(1, 96, 24);
        let t = TrainConfig::default();
        Self {
            dataset_path: None,
            synth_kind: SynthKind::SineMix,
            synth_n: 2000,
            synth_d: 2,
            synth_noise_std: 0.1,
            lookback: m.lookback,
            horizon: m.horizon,
            split_ratios: [6, 2, 2],
            train_stride: t.train_stride,
            eval_stride: t.eval_stride,
            diffusion_steps: m.diffusion_steps,
            beta_start: m.beta_start,
            beta_end: m.beta_end,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            learning_rate: t.learning_rate,
            patience: t.patience,
            ar_epochs: t.ar_epochs,
            samples: 10,
            sampler_steps: m.diffusion_steps,
            valid_steps: t.valid_steps,
            width: m.width,
            embedding_hidden: m.embedding_hidden,
            dropout: m.dropout,
            mixup: MixupKind::Soft,
            tau: 0.5,
            use_ar: true,
            head: Head::Data,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            repeats: 1,
        }
    }
}

/// Which split a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "valid" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split '{other}' (train|valid|test)"))),
        }
    }
}

impl SplitName {
    pub fn label(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }

    fn pick(self, splits: &Splits) -> &RawSeries {
        match self {
            Self::Train => &splits.train,
            Self::Valid => &splits.valid,
            Self::Test => &splits.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Conditioning,
    Mixup,
    Head,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditioning" => Ok(Self::Conditioning),
            "mixup" => Ok(Self::Mixup),
            "head" => Ok(Self::Head),
            other => Err(Error::Config(format!("unknown suite '{other}' (conditioning|mixup|head)"))),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn mixup_strategy(&self) -> MixupStrategy {
        match self.mixup {
            MixupKind::None => MixupStrategy::Off,
            MixupKind::Soft => MixupStrategy::Soft,
            MixupKind::Hard => MixupStrategy::Hard { tau: self.tau },
            MixupKind::Segment => MixupStrategy::Segment { tau: self.tau },
        }
    }

    pub fn model_config(&self, variables: usize) -> ModelConfig {
        ModelConfig {
            variables,
            lookback: self.lookback,
            horizon: self.horizon,
            diffusion_steps: self.diffusion_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            width: self.width,
            embedding_hidden: self.embedding_hidden,
            cond_depth: 2,
            dropout: self.dropout,
            mixup: self.mixup_strategy(),
            use_ar: self.use_ar,
            head: self.head,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            patience: self.patience,
            ar_epochs: self.ar_epochs,
            train_stride: self.train_stride,
            eval_stride: self.eval_stride,
            valid_steps: self.valid_steps,
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            threads: eval_threads(),
            ..EvalOptions::new(self.samples, self.sampler_steps, self.seed)
        }
    }

    /// Checks every field that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.split_ratios.contains(&0) {
            return Err(Error::Config("split_ratios must be positive".into()));
        }
        if self.dataset_path.is_none() && (self.synth_n == 0 || self.synth_d == 0) {
            return Err(Error::Config("synth_n and synth_d must be positive".into()));
        }
        if !(self.synth_noise_std >= 0.0 && self.synth_noise_std.is_finite()) {
            return Err(Error::Config("synth_noise_std must be >= 0".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if self.sampler_steps == 0 || self.sampler_steps > self.diffusion_steps {
            return Err(Error::Config(format!(
                "sampler_steps must be in 1..={}, got {}",
                self.diffusion_steps, self.sampler_steps
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        let m = self.model_config(self.synth_d.max(1));
        m.validate().map_err(as_config)?;
        self.train_config().validate(&m).map_err(as_config)
    }

    /// Loads (or generates) the series and splits it; fails if any split is
    /// too short for one window.
    pub fn load_splits(&self) -> Result<Splits> {
        let series = match &self.dataset_path {
            Some(p) => load_csv(p)?,
            None => synth_generate(self.synth_kind, self.synth_d, self.synth_n, self.synth_noise_std, self.seed)?,
        };
        chronological_split(&series, self.split_ratios, self.lookback + self.horizon)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Artifacts of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid: f64,
}

/// Trains and writes `checkpoint.bin` plus `loss_history.csv` under `out_dir`.
/// History rows are appended as epochs finish.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let splits = cfg.load_splits()?;
    let model_cfg = cfg.model_config(splits.train.variables());
    let train_cfg = cfg.train_config();
    model_cfg.validate().map_err(as_config)?;
    crate::pipeline::split_windows(&model_cfg, &train_cfg, &splits)?;

    create_dir(&cfg.out_dir)?;
    let history_path = cfg.out_dir.join(LOSS_HISTORY_FILE);
    let mut history = fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    writeln!(history, "epoch,train_loss,valid_mse").map_err(|e| Error::io(&history_path, e))?;
    let mut write_err = None;
    let outcome = train_loop_observed(&model_cfg, &train_cfg, &splits, |r| {
        if write_err.is_none() {
            if let Err(e) = writeln!(history, "{},{},{}", r.epoch, r.train_loss, r.valid_mse) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&history_path, e));
    }
    let checkpoint_path = cfg.out_dir.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&checkpoint_path)?;
    Ok(TrainReport {
        checkpoint_path,
        history_path,
        epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_valid: outcome.checkpoint.best_valid,
    })
}

/// Forecasts the `H` steps after the last `L` rows of `input` and writes
/// them as CSV (one row per step, one column per variable).
pub fn cmd_predict(
    checkpoint: &Path,
    input: &Path,
    samples: usize,
    steps: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    model.ensure_trained()?;
    let cfg = model.config().clone();
    let steps = steps.unwrap_or(cfg.diffusion_steps);
    if samples == 0 {
        return Err(Error::Config("samples must be >= 1".into()));
    }
    if steps == 0 || steps > cfg.diffusion_steps {
        return Err(Error::Config(format!("steps must be in 1..={}, got {steps}", cfg.diffusion_steps)));
    }
    let series = load_csv(input)?;
    if series.variables() != cfg.variables {
        return Err(Error::Config(format!(
            "checkpoint expects {} variables, input has {}",
            cfg.variables,
            series.variables()
        )));
    }
    if series.len() < cfg.lookback {
        return Err(Error::SplitTooShort {
            name: "input",
            len: series.len(),
            needed: cfg.lookback,
        });
    }
    let lookback = series.tail(cfg.lookback)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let forecast = model.predict(&lookback, samples, steps, &mut rng)?;
    let h = cfg.horizon;
    let columns = (0..cfg.variables)
        .map(|v| forecast.data()[v * h..(v + 1) * h].to_vec())
        .collect();
    let result = RawSeries::new(series.names.clone(), columns)?;
    create_dir(out)?;
    let path = out.join("forecast.csv");
    write_csv(&result, &path)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub split: SplitName,
    pub windows: usize,
    pub evaluation: Evaluation,
    pub report_path: PathBuf,
}

/// Scores a checkpoint on one split of the configured dataset. Writes a
/// key-value report, per-window MSEs and plot data for the first window.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, split: SplitName) -> Result<EvalReport> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    model.ensure_trained()?;
    if cfg.sampler_steps > model.config().diffusion_steps {
        return Err(Error::Config("sampler_steps exceeds the checkpoint's diffusion steps".into()));
    }
    let splits = cfg.load_splits()?;
    let series = split.pick(&splits);
    let mc = model.config();
    if series.variables() != mc.variables {
        return Err(Error::Config(format!(
            "checkpoint expects {} variables, data has {}",
            mc.variables,
            series.variables()
        )));
    }
    let windows = sliding_windows(series, mc.lookback, mc.horizon, cfg.eval_stride)?;
    let evaluation = evaluate_windows(&model, &windows, &cfg.eval_options(), Scale::Raw)?;

    create_dir(&cfg.out_dir)?;
    let tag = split.label();
    let mut report = String::new();
    let _ = writeln!(report, "split={tag}");
    let _ = writeln!(report, "mse={}", evaluation.mse);
    let _ = writeln!(report, "windows={}", windows.len());
    let _ = writeln!(report, "samples={}", cfg.samples);
    let _ = writeln!(report, "sampler_steps={}", cfg.sampler_steps);
    let _ = writeln!(report, "seed={}", cfg.seed);
    let _ = writeln!(report, "checkpoint={}", checkpoint.display());
    let _ = writeln!(report, "config={}", serde_json::to_string(cfg)?);
    let report_path = cfg.out_dir.join(format!("metrics_{tag}.txt"));
    write_file(&report_path, &report)?;

    let mut per_window = String::from("window,origin,mse\n");
    for (i, (w, m)) in windows.iter().zip(&evaluation.per_window).enumerate() {
        let _ = writeln!(per_window, "{i},{},{m}", w.origin);
    }
    write_file(&cfg.out_dir.join(format!("windows_{tag}.csv")), &per_window)?;

    let mut plot = String::from("step");
    for n in &series.names {
        let _ = write!(plot, ",truth_{n},forecast_{n}");
    }
    plot.push('\n');
    if let (Some(w), Some(f)) = (windows.first(), evaluation.forecasts.first()) {
        for t in 0..mc.horizon {
            let _ = write!(plot, "{}", t + 1);
            for v in 0..mc.variables {
                let _ = write!(plot, ",{},{}", w.target.get2(v, t), f.get2(v, t));
            }
            plot.push('\n');
        }
    }
    write_file(&cfg.out_dir.join(format!("plot_{tag}.csv")), &plot)?;

    Ok(EvalReport {
        split,
        windows: windows.len(),
        evaluation,
        report_path,
    })
}

/// One ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub mixup: String,
    pub use_ar: bool,
    pub head: Head,
    pub seed_mses: Vec<f64>,
}

impl AblationRow {
    pub fn mean_mse(&self) -> f64 {
        self.seed_mses.iter().sum::<f64>() / self.seed_mses.len() as f64
    }
}

/// Variants of a suite, each as a modified copy of `cfg`.
pub fn ablation_variants(cfg: &RunConfig, suite: Suite) -> Vec<(String, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    match suite {
        Suite::Conditioning => vec![
            ("mixup+ar".into(), with(&|c| {
                c.mixup = MixupKind::Soft;
                c.use_ar = true;
            })),
            ("mixup_only".into(), with(&|c| {
                c.mixup = MixupKind::Soft;
                c.use_ar = false;
            })),
            ("ar_only".into(), with(&|c| {
                c.mixup = MixupKind::None;
                c.use_ar = true;
            })),
            ("neither".into(), with(&|c| {
                c.mixup = MixupKind::None;
                c.use_ar = false;
            })),
        ],
        Suite::Mixup => {
            let mut v = vec![("soft".to_string(), with(&|c| c.mixup = MixupKind::Soft))];
            for kind in [MixupKind::Hard, MixupKind::Segment] {
                for tau in HARD_SEGMENT_TAUS {
                    let name = format!("{}_{tau}", if kind == MixupKind::Hard { "hard" } else { "segment" });
                    v.push((name, with(&|c| {
                        c.mixup = kind;
                        c.tau = tau;
                    })));
                }
            }
            v
        }
        Suite::Head => vec![
            ("data".into(), with(&|c| c.head = Head::Data)),
            ("noise".into(), with(&|c| c.head = Head::Noise)),
        ],
    }
}

/// Trains one variant on the given splits and returns its test MSE.
pub fn run_variant(cfg: &RunConfig, splits: &Splits) -> Result<f64> {
    let model_cfg = cfg.model_config(splits.train.variables());
    let outcome = crate::pipeline::train_loop(&model_cfg, &cfg.train_config(), splits)?;
    let windows = sliding_windows(&splits.test, cfg.lookback, cfg.horizon, cfg.eval_stride)?;
    Ok(evaluate_windows(&outcome.model, &windows, &cfg.eval_options(), Scale::Raw)?.mse)
}

/// Runs a suite with `repeats` shared seeds per cell and writes
/// `ablation_<suite>.csv`.
pub fn cmd_ablate(cfg: &RunConfig, suite: Suite) -> Result<(PathBuf, Vec<AblationRow>)> {
    cfg.validate()?;
    let variants = ablation_variants(cfg, suite);
    for (_, v) in &variants {
        v.validate()?;
    }
    // data is generated once from the base seed and shared by every cell
    let splits = cfg.load_splits()?;
    let mc = cfg.model_config(splits.train.variables());
    crate::pipeline::split_windows(&mc, &cfg.train_config(), &splits)?;
    create_dir(&cfg.out_dir)?;

    let mut rows = Vec::new();
    for (name, v) in variants {
        let mut seed_mses = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let run = RunConfig {
                seed: cfg.seed + r as u64,
                ..v.clone()
            };
            seed_mses.push(run_variant(&run, &splits)?);
        }
        rows.push(AblationRow {
            variant: name,
            mixup: v.mixup_strategy().label(),
            use_ar: v.use_ar,
            head: v.head,
            seed_mses,
        });
    }
    let mut csv = String::from("variant,mixup,ar,head,seeds,mean_mse\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.variant,
            r.mixup,
            r.use_ar,
            r.head.label(),
            r.seed_mses.len(),
            r.mean_mse()
        );
    }
    let label = match suite {
        Suite::Conditioning => "conditioning",
        Suite::Mixup => "mixup",
        Suite::Head => "head",
    };
    let path = cfg.out_dir.join(format!("ablation_{label}.csv"));
    write_file(&path, &csv)?;
    Ok((path, rows))
}

/// Runs the finite-difference suite. Fails if any group exceeds the tolerance.
pub fn cmd_gradcheck(seed: u64) -> Result<SuiteReport> {
    let report = gradient_suite(seed, SUITE_PROBES)?;
    if !report.passes(SUITE_TOLERANCE) {
        let worst = report
            .rows()
            .into_iter()
            .filter(|r| r.3 >= SUITE_TOLERANCE)
            .map(|r| format!("{}/{}={:e}", r.0, r.1, r.3))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::GradientCheck(worst));
    }
    Ok(report)
}

/// Writes the configured synthetic series to `out_dir/synth_<kind>.csv`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.synth_n == 0 || cfg.synth_d == 0 {
        return Err(Error::Config("synth_n and synth_d must be positive".into()));
    }
    let series = synth_generate(cfg.synth_kind, cfg.synth_d, cfg.synth_n, cfg.synth_noise_std, cfg.seed)?;
    create_dir(&cfg.out_dir)?;
    let kind = serde_json::to_value(cfg.synth_kind)?;
    let path = cfg.out_dir.join(format!("synth_{}.csv", kind.as_str().unwrap_or("series")));
    write_csv(&series, &path)?;
    Ok(path)
}

/// ADF statistic of every column of a CSV file.
pub fn cmd_adf(input: &Path, lags: usize) -> Result<Vec<(String, f64)>> {
    let series = load_csv(input)?;
    series
        .names
        .iter()
        .zip(&series.columns)
        .map(|(n, c)| Ok((n.clone(), adf_statistic(c, lags)?)))
        .collect()
}
