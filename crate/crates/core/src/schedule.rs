//! Variance schedule and the closed-form Gaussian diffusion algebra.
//!
//! Steps are 1-based (`1..=K`); step 0 denotes clean data with
//! `alpha_bar(0) = 1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    /// `alpha_bar[k]` for k in 0..=K.
    alpha_bars: Vec<f64>,
    /// `1 - alpha_bar[k]`, accumulated directly to keep small values exact.
    one_minus_alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Raised-cosine interpolation of beta between the two endpoints:
    /// `beta_k = start + (end - start) * (1 - cos(pi (k-1)/(K-1))) / 2`.
    pub fn cosine(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| {
                if i == 0 {
                    beta_start
                } else if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * (1.0 - (PI * i as f64 / span).cos()) / 2.0
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("empty beta schedule".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        let mut one_minus = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        one_minus.push(0.0);
        for &b in &betas {
            let prev = *alpha_bars.last().expect("seeded");
            let prev_om = *one_minus.last().expect("seeded");
            alpha_bars.push(prev * (1.0 - b));
            one_minus.push(prev_om + prev * b);
        }
        Ok(Self {
            betas,
            alpha_bars,
            one_minus_alpha_bars: one_minus,
        })
    }

    /// Number of diffusion steps K.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::StepOutOfRange {
                k,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// Panics unless `1 <= k <= K`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        1.0 - self.beta(k)
    }

    /// Defined for `0 <= k <= K`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn one_minus_alpha_bar(&self, k: usize) -> f64 {
        self.one_minus_alpha_bars[k]
    }

    /// Posterior variance `(1 - abar_{k-1}) / (1 - abar_k) * beta_k`.
    pub fn beta_tilde(&self, k: usize) -> f64 {
        self.one_minus_alpha_bar(k - 1) / self.one_minus_alpha_bar(k) * self.beta(k)
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.beta_tilde(k).sqrt()
    }

    /// `x^k = sqrt(abar_k) x^0 + sqrt(1 - abar_k) eps`.
    pub fn forward_sample(&self, x0: &Tensor, k: usize, noise: &Tensor) -> Result<Tensor> {
        self.check(k)?;
        let a = self.alpha_bar(k).sqrt();
        let b = self.one_minus_alpha_bar(k).sqrt();
        x0.zip_map(noise, |x, e| a * x + b * e)
    }

    /// Inverse of [`forward_sample`](Self::forward_sample) given the same noise.
    pub fn recover_x0(&self, xk: &Tensor, k: usize, noise: &Tensor) -> Result<Tensor> {
        self.check(k)?;
        let a = self.alpha_bar(k).sqrt();
        let b = self.one_minus_alpha_bar(k).sqrt();
        xk.zip_map(noise, |x, e| (x - b * e) / a)
    }

    /// Noise implied by a data prediction: `(x^k - sqrt(abar_k) x0) / sqrt(1 - abar_k)`.
    pub fn noise_from_data(&self, xk: &Tensor, k: usize, x0: &Tensor) -> Result<Tensor> {
        self.check(k)?;
        let a = self.alpha_bar(k).sqrt();
        let b = self.one_minus_alpha_bar(k).sqrt();
        xk.zip_map(x0, |x, d| (x - a * d) / b)
    }

    /// The single-step transition `k -> k-1`.
    pub fn transition(&self, k: usize) -> Result<Transition> {
        self.check(k)?;
        Ok(Transition::new(self, k, k - 1, self.beta(k)))
    }

    /// A composite transition `from -> to` (`to < from`) treating the gap as
    /// one step with `alpha = abar_from / abar_to`.
    pub fn jump(&self, from: usize, to: usize) -> Result<Transition> {
        self.check(from)?;
        if to >= from {
            return Err(Error::InvalidArgument(format!(
                "jump must decrease the step, got {from} -> {to}"
            )));
        }
        if to + 1 == from {
            return self.transition(from);
        }
        let beta = (self.alpha_bar(to) - self.alpha_bar(from)) / self.alpha_bar(to);
        Ok(Transition::new(self, from, to, beta))
    }

    /// Posterior mean of `q(x^{k-1} | x^k, x^0)`.
    pub fn posterior_mean(&self, x0: &Tensor, xk: &Tensor, k: usize) -> Result<Tensor> {
        self.transition(k)?.posterior_mean(x0, xk)
    }

    /// Backward step with a data-prediction model.
    pub fn denoise_step_data(
        &self,
        xk: &Tensor,
        k: usize,
        x_pred: &Tensor,
        noise: &Tensor,
    ) -> Result<Tensor> {
        self.transition(k)?.step_from_data(xk, x_pred, noise)
    }

    /// Backward step with a noise-prediction model.
    pub fn denoise_step_noise(
        &self,
        xk: &Tensor,
        k: usize,
        eps_pred: &Tensor,
        noise: &Tensor,
    ) -> Result<Tensor> {
        self.transition(k)?.step_from_noise(xk, eps_pred, noise)
    }

    /// Evenly spaced decreasing subset of `K..=1` with `steps` entries,
    /// always containing K and (for `steps >= 2`) 1.
    pub fn strided_subschedule(&self, steps: usize) -> Result<Vec<usize>> {
        let k = self.steps();
        if steps == 0 || steps > k {
            return Err(Error::InvalidArgument(format!(
                "sampler steps must be in 1..={k}, got {steps}"
            )));
        }
        if steps == 1 {
            return Ok(vec![k]);
        }
        let span = (k - 1) as f64;
        let denom = (steps - 1) as f64;
        Ok((0..steps)
            .map(|i| k - (i as f64 * span / denom).round() as usize)
            .collect())
    }
}

/// Coefficients of one (possibly composite) backward transition `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    /// Effective beta of the transition.
    pub beta: f64,
    /// Coefficient on `x^from` in the posterior mean.
    pub coef_xt: f64,
    /// Coefficient on the clean-data estimate in the posterior mean.
    pub coef_x0: f64,
    /// Standard deviation of the injected noise (posterior std).
    pub sigma: f64,
    one_minus_alpha_bar_from: f64,
}

impl Transition {
    fn new(s: &DiffusionSchedule, from: usize, to: usize, beta: f64) -> Self {
        let alpha = 1.0 - beta;
        let om_from = s.one_minus_alpha_bar(from);
        let om_to = s.one_minus_alpha_bar(to);
        Self {
            from,
            to,
            beta,
            coef_xt: alpha.sqrt() * om_to / om_from,
            coef_x0: s.alpha_bar(to).sqrt() * beta / om_from,
            sigma: (om_to / om_from * beta).sqrt(),
            one_minus_alpha_bar_from: om_from,
        }
    }

    pub fn alpha(&self) -> f64 {
        1.0 - self.beta
    }

    pub fn posterior_mean(&self, x0: &Tensor, xt: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.coef_x0, self.coef_xt);
        x0.zip_map(xt, |x0, xt| a * x0 + b * xt)
    }

    pub fn step_from_data(&self, xt: &Tensor, x_pred: &Tensor, noise: &Tensor) -> Result<Tensor> {
        let mut out = self.posterior_mean(x_pred, xt)?;
        out.axpy(self.sigma, noise)?;
        Ok(out)
    }

    /// Mean of the noise-prediction parameterization.
    pub fn noise_mean(&self, xt: &Tensor, eps_pred: &Tensor) -> Result<Tensor> {
        let sa = self.alpha().sqrt();
        let c = self.beta / (self.one_minus_alpha_bar_from.sqrt() * sa);
        xt.zip_map(eps_pred, |x, e| x / sa - c * e)
    }

    pub fn step_from_noise(&self, xt: &Tensor, eps_pred: &Tensor, noise: &Tensor) -> Result<Tensor> {
        let mut out = self.noise_mean(xt, eps_pred)?;
        out.axpy(self.sigma, noise)?;
        Ok(out)
    }
}
