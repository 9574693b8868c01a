use serde::{Deserialize, Serialize};

use crate::conditioning::MixupStrategy;
use crate::error::{Error, Result};

/// What the denoiser regresses onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// The clean horizon `x^0`.
    Data,
    /// The injected noise `ε`.
    Noise,
}

impl Head {
    pub fn label(self) -> &'static str {
        match self {
            Head::Data => "data",
            Head::Noise => "noise",
        }
    }
}

/// Architecture and diffusion settings. Everything needed to rebuild the
/// parameter layout of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variables: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub width: usize,
    pub embedding_hidden: usize,
    pub cond_depth: usize,
    pub dropout: f64,
    pub mixup: MixupStrategy,
    pub use_ar: bool,
    pub head: Head,
}

impl ModelConfig {
    /// Full-size defaults for `d` variables, lookback `l` and horizon `h`.
    pub fn new(variables: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            variables,
            lookback,
            horizon,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.1,
            width: 256,
            embedding_hidden: 128,
            cond_depth: 2,
            dropout: 0.1,
            mixup: MixupStrategy::Soft,
            use_ar: true,
            head: Head::Data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("variables", self.variables),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("embedding_hidden", self.embedding_hidden),
            ("cond_depth", self.cond_depth),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.diffusion_steps < 2 {
            return Err(Error::Config(format!(
                "diffusion_steps must be >= 2, got {}",
                self.diffusion_steps
            )));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.width < 4 || !self.width.is_multiple_of(2) {
            return Err(Error::Config(format!("width must be even and >= 4, got {}", self.width)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        self.mixup.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Optimization and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub ar_epochs: usize,
    /// Stride between consecutive training windows.
    pub train_stride: usize,
    /// Stride between consecutive validation and test windows.
    pub eval_stride: usize,
    /// Sampler steps used for the per-epoch validation forecast.
    pub valid_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 100,
            learning_rate: 1e-3,
            patience: 10,
            ar_epochs: 20,
            train_stride: 1,
            eval_stride: 1,
            valid_steps: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("train_stride", self.train_stride),
            ("eval_stride", self.eval_stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.valid_steps == 0 || self.valid_steps > model.diffusion_steps {
            return Err(Error::Config(format!(
                "valid_steps must be in 1..={}, got {}",
                model.diffusion_steps, self.valid_steps
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let m = ModelConfig::new(2, 96, 24);
        m.validate().unwrap();
        TrainConfig::default().validate(&m).unwrap();
        assert_eq!(m.diffusion_steps, 100);
        assert_eq!((m.beta_start, m.beta_end), (1e-4, 0.1));
        let t = TrainConfig::default();
        assert_eq!((t.batch_size, t.max_epochs, t.learning_rate), (64, 100, 1e-3));
    }

    #[test]
    fn rejects_invalid() {
        let mut m = ModelConfig::new(2, 96, 0);
        assert!(m.validate().is_err());
        m.horizon = 24;
        m.diffusion_steps = 1;
        assert!(m.validate().is_err());
        m.diffusion_steps = 100;
        m.width = 7;
        assert!(m.validate().is_err());
        m.width = 8;
        m.mixup = MixupStrategy::Hard { tau: 1.5 };
        assert!(m.validate().is_err());
        m.mixup = MixupStrategy::Soft;
        let t = TrainConfig {
            valid_steps: 101,
            ..TrainConfig::default()
        };
        assert!(t.validate(&m).is_err());
    }
}
