use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Head, ModelConfig};
use crate::conditioning::{
    build_condition, future_mixup_infer, future_mixup_train, sample_mask, ArModel, CondNet,
    CondNetCache, Condition, MixMask, MixupStrategy,
};
use crate::denoiser::{Denoiser, DenoiserCache, DenoiserShape};
use crate::error::{Error, Result};
use crate::nn::{AdamState, ForwardCtx, Grads, ParamId, ParamStore, Tensor};
use crate::schedule::DiffusionSchedule;

pub const COND_PREFIX: &str = "cond";
pub const AR_PREFIX: &str = "ar";
pub const DENOISER_PREFIX: &str = "denoiser";

/// Layer handles and the diffusion schedule; holds no tensor values.
#[derive(Debug, Clone)]
pub struct TimeDiffNet {
    pub config: ModelConfig,
    pub schedule: DiffusionSchedule,
    pub cond: CondNet,
    pub ar: ArModel,
    pub denoiser: Denoiser,
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct TimeDiff {
    pub net: TimeDiffNet,
    pub store: ParamStore,
    /// Set once training has produced usable weights; inference refuses otherwise.
    pub trained: bool,
}

/// Random quantities of one training step, drawn before any forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraws {
    /// One diffusion step per batch element, uniform on `1..=K`.
    pub ks: Vec<usize>,
    pub noise: Tensor,
    pub mask: MixMask,
}

/// Intermediate values of one loss evaluation.
pub struct LossParts {
    pub loss: f64,
    pub prediction: Tensor,
    pub target: Tensor,
    cond_cache: CondNetCache,
    denoiser_cache: DenoiserCache,
    mask: Tensor,
}

pub fn squared_error(prediction: &Tensor, target: &Tensor) -> Result<f64> {
    prediction.expect_same_shape("squared_error", target)?;
    let n = prediction.len().max(1) as f64;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

impl TimeDiffNet {
    /// Registers every layer in `store`. Parameter order is a pure function
    /// of `config`, which is what checkpoint loading relies on.
    pub fn build<R: Rng + ?Sized>(config: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let schedule = DiffusionSchedule::cosine(config.diffusion_steps, config.beta_start, config.beta_end)?;
        let (d, l, h) = (config.variables, config.lookback, config.horizon);
        let cond = CondNet::new(store, COND_PREFIX, d, l, h, config.width, config.cond_depth, config.dropout, rng);
        let ar = ArModel::new(store, AR_PREFIX, d, l, h);
        let shape = DenoiserShape {
            embedding_hidden: config.embedding_hidden,
            dropout: config.dropout,
            ..DenoiserShape::new(d, config.width)
        };
        let denoiser = Denoiser::new(store, DENOISER_PREFIX, shape, rng)?;
        Ok(Self {
            config,
            schedule,
            cond,
            ar,
            denoiser,
        })
    }

    pub fn batch_shape(&self, batch: usize) -> [usize; 3] {
        [batch, self.config.variables, self.config.horizon]
    }

    pub fn draw<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<StepDraws> {
        let k = self.schedule.steps();
        let ks = (0..batch).map(|_| rng.random_range(1..=k)).collect();
        let shape = self.batch_shape(batch);
        let noise = Tensor::randn(&shape, rng);
        let mask = sample_mask(self.config.mixup, &shape, rng)?;
        Ok(StepDraws { ks, noise, mask })
    }

    /// One backward step `x^k -> x^{k-1}` per batch element from the
    /// network output. `z` is the posterior noise; it has no effect where k = 1.
    pub fn previous_step(&self, xk: &Tensor, ks: &[usize], prediction: &Tensor, z: &Tensor) -> Result<Tensor> {
        xk.expect_same_shape("previous_step", prediction)?;
        xk.expect_same_shape("previous_step", z)?;
        if ks.len() != xk.dim(0) {
            return Err(Error::InvalidArgument(format!("{} steps for a batch of {}", ks.len(), xk.dim(0))));
        }
        let mut out = Vec::with_capacity(xk.len());
        for (i, &k) in ks.iter().enumerate() {
            let t = self.schedule.transition(k)?;
            let (x, p, n) = (xk.index(i), prediction.index(i), z.index(i));
            let step = match self.config.head {
                Head::Data => t.step_from_data(&x, &p, &n)?,
                Head::Noise => t.step_from_noise(&x, &p, &n)?,
            };
            out.extend_from_slice(step.data());
        }
        Tensor::new(xk.shape(), out)
    }

    /// `x^k = sqrt(abar_k) x^0 + sqrt(1 - abar_k) ε`, with k per batch element.
    pub fn diffuse(&self, x0: &Tensor, ks: &[usize], noise: &Tensor) -> Result<Tensor> {
        x0.expect_same_shape("diffuse", noise)?;
        if ks.len() != x0.dim(0) {
            return Err(Error::InvalidArgument(format!("{} steps for a batch of {}", ks.len(), x0.dim(0))));
        }
        let inner = x0.len() / ks.len().max(1);
        let mut out = x0.clone();
        for (i, &k) in ks.iter().enumerate() {
            if k == 0 || k > self.schedule.steps() {
                return Err(Error::StepOutOfRange { k, max: self.schedule.steps() });
            }
            let a = self.schedule.alpha_bar(k).sqrt();
            let b = self.schedule.one_minus_alpha_bar(k).sqrt();
            let range = i * inner..(i + 1) * inner;
            for (o, e) in out.data_mut()[range.clone()].iter_mut().zip(&noise.data()[range]) {
                *o = a * *o + b * e;
            }
        }
        Ok(out)
    }

    fn ar_or_zero(&self, store: &ParamStore, lookback: &Tensor) -> Result<Tensor> {
        if self.config.use_ar {
            self.ar.forward(store, lookback)
        } else {
            Ok(Tensor::zeros(&self.batch_shape(lookback.dim(0))))
        }
    }

    /// Training condition: `z_mix` blends the network output with the truth.
    pub fn condition_train(
        &self,
        store: &ParamStore,
        lookback: &Tensor,
        target: &Tensor,
        mask: &MixMask,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Condition, CondNetCache)> {
        let (z, cache) = self.cond.forward(store, lookback, ctx)?;
        let z_mix = match self.config.mixup {
            MixupStrategy::Off => z,
            _ => future_mixup_train(&z, target, mask)?,
        };
        let z_ar = self.ar_or_zero(store, lookback)?;
        Ok((build_condition(&z_mix, &z_ar)?, cache))
    }

    /// Inference condition. Takes no horizon, so the truth cannot leak in.
    pub fn condition_infer(&self, store: &ParamStore, lookback: &Tensor) -> Result<Condition> {
        let (z, _) = self.cond.forward(store, lookback, &mut ForwardCtx::eval())?;
        let z_ar = self.ar_or_zero(store, lookback)?;
        build_condition(&future_mixup_infer(&z), &z_ar)
    }

    /// Forward pass of the training objective on a normalized batch.
    pub fn loss_forward(
        &self,
        store: &ParamStore,
        lookback: &Tensor,
        target: &Tensor,
        draws: &StepDraws,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<LossParts> {
        let xk = self.diffuse(target, &draws.ks, &draws.noise)?;
        let (cond, cond_cache) = self.condition_train(store, lookback, target, &draws.mask, ctx)?;
        let (prediction, denoiser_cache) = self.denoiser.forward(store, &xk, &draws.ks, &cond.c, ctx)?;
        let regression_target = match self.config.head {
            Head::Data => target.clone(),
            Head::Noise => draws.noise.clone(),
        };
        Ok(LossParts {
            loss: squared_error(&prediction, &regression_target)?,
            prediction,
            target: regression_target,
            cond_cache,
            denoiser_cache,
            mask: draws.mask.values.clone(),
        })
    }

    /// Gradients of the mean squared loss w.r.t. the conditioning network
    /// and the denoiser. The AR initializer receives none.
    pub fn loss_backward(&self, store: &ParamStore, parts: &LossParts) -> Result<Grads> {
        let mut grads = Grads::zeros_like(store);
        let n = parts.prediction.len() as f64;
        let g = parts.prediction.zip_map(&parts.target, |p, t| 2.0 * (p - t) / n)?;
        let g_c = self.denoiser.backward(store, &parts.denoiser_cache, &g, &mut grads)?;
        let d = self.config.variables;
        let g_mix = g_c.split_channels(&[d, d])?.swap_remove(0);
        let g_z = match self.config.mixup {
            MixupStrategy::Off => g_mix,
            _ => g_mix.mul(&parts.mask)?,
        };
        self.cond.backward(store, &parts.cond_cache, &g_z, &mut grads)?;
        Ok(grads)
    }

    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        lookback: &Tensor,
        target: &Tensor,
        draws: &StepDraws,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(f64, Grads)> {
        let parts = self.loss_forward(store, lookback, target, draws, ctx)?;
        let grads = self.loss_backward(store, &parts)?;
        Ok((parts.loss, grads))
    }

    /// Ids updated by the main optimizer: conditioning network and denoiser.
    pub fn trainable_params(&self, store: &ParamStore) -> Vec<ParamId> {
        let mut ids = store.weights_with_prefix(&format!("{COND_PREFIX}."));
        ids.extend(store.weights_with_prefix(&format!("{DENOISER_PREFIX}.")));
        ids
    }
}

impl TimeDiff {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = TimeDiffNet::build(config, &mut store, rng)?;
        Ok(Self {
            net,
            store,
            trained: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        self.net.trainable_params(&self.store)
    }

    pub fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::Untrained("model has not been trained; run training first".into()))
        }
    }
}

/// One optimizer step on a normalized batch. Returns the batch loss.
///
/// Draw order: step indices, noise, mask, then dropout masks.
pub fn train_step(
    model: &mut TimeDiff,
    adam: &mut AdamState,
    lookback: &Tensor,
    target: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let draws = model.net.draw(lookback.dim(0), rng)?;
    let mut ctx = ForwardCtx::train(rng);
    let (loss, grads) = model.net.loss_and_grads(&model.store, lookback, target, &draws, &mut ctx)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    ctx.commit(&mut model.store);
    adam.step(&mut model.store, &grads)?;
    Ok(loss)
}

/// What [`train_step_debug`] observed before the parameter update.
#[derive(Debug, Clone)]
pub struct DebugStep {
    pub loss: f64,
    pub ks: Vec<usize>,
    pub xk: Tensor,
    pub prediction: Tensor,
    /// Posterior noise used for `previous`.
    pub z: Tensor,
    pub previous: Tensor,
}

/// [`train_step`] that also materializes `x^{k-1}` for every element.
/// The loss does not depend on `x^{k-1}`, so plain training skips it.
/// Posterior noise comes from `chain_rng`; `rng` sees exactly the draws of
/// [`train_step`], so the update is identical.
pub fn train_step_debug(
    model: &mut TimeDiff,
    adam: &mut AdamState,
    lookback: &Tensor,
    target: &Tensor,
    rng: &mut ChaCha8Rng,
    chain_rng: &mut ChaCha8Rng,
) -> Result<DebugStep> {
    let draws = model.net.draw(lookback.dim(0), rng)?;
    let mut ctx = ForwardCtx::train(rng);
    let parts = model.net.loss_forward(&model.store, lookback, target, &draws, &mut ctx)?;
    if !parts.loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {}", parts.loss)));
    }
    let grads = model.net.loss_backward(&model.store, &parts)?;
    let xk = model.net.diffuse(target, &draws.ks, &draws.noise)?;
    let z = Tensor::randn(xk.shape(), chain_rng);
    let previous = model.net.previous_step(&xk, &draws.ks, &parts.prediction, &z)?;
    if previous.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("x^{k-1} during training".into()));
    }
    ctx.commit(&mut model.store);
    adam.step(&mut model.store, &grads)?;
    Ok(DebugStep {
        loss: parts.loss,
        ks: draws.ks,
        xk,
        prediction: parts.prediction,
        z,
        previous,
    })
}

/// [`train_step`] for a model configured with the noise head.
pub fn train_noise_variant(
    model: &mut TimeDiff,
    adam: &mut AdamState,
    lookback: &Tensor,
    target: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if model.net.config.head != Head::Noise {
        return Err(Error::InvalidArgument("model is not configured with the noise head".into()));
    }
    train_step(model, adam, lookback, target, rng)
}
