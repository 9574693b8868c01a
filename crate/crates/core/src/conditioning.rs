//! Condition construction: the convolutional conditioning network, future
//! mixup, and the linear autoregressive initializer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::data::{stack_windows, SeriesWindow};
use crate::error::{Error, Result};
use crate::nn::{
    AdamConfig, AdamState, Conv1d, ConvBlockCache, ConvStack, Dense, ForwardCtx, Grads, ParamId,
    ParamStore, Tensor,
};

/// Mean length of a masked run in segment mixup.
pub const SEGMENT_MASKED_MEAN: f64 = 3.0;

// ---------------------------------------------------------------------------
// Conditioning network F: d×L -> d×H

#[derive(Debug, Clone)]
pub struct CondNet {
    pub blocks: ConvStack,
    pub time_proj: Dense,
    pub head: Conv1d,
    pub variables: usize,
    pub lookback: usize,
    pub horizon: usize,
}

pub struct CondNetCache {
    blocks: Vec<ConvBlockCache>,
    features: Tensor,
    projected: Tensor,
}

impl CondNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        variables: usize,
        lookback: usize,
        horizon: usize,
        width: usize,
        depth: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            blocks: ConvStack::new(store, &format!("{name}.blocks"), variables, width, depth, dropout, rng),
            time_proj: Dense::new(store, &format!("{name}.time_proj"), lookback, horizon, rng),
            head: Conv1d::new(store, &format!("{name}.head"), width, variables, 1, rng),
            variables,
            lookback,
            horizon,
        }
    }

    /// `[B, d, L] -> [B, d, H]`.
    pub fn forward(
        &self,
        store: &ParamStore,
        lookback: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, CondNetCache)> {
        let b = lookback.dim(0);
        lookback.expect_shape("cond_net_forward", &[b, self.variables, self.lookback])?;
        let (features, blocks) = self.blocks.forward(store, lookback, ctx)?;
        let projected = self.time_proj.forward(store, &features)?;
        let out = self.head.forward(store, &projected)?;
        Ok((
            out,
            CondNetCache {
                blocks,
                features,
                projected,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &CondNetCache,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<()> {
        let g = self.head.backward(store, &cache.projected, grad_out, grads)?;
        let g = self.time_proj.backward(store, &cache.features, &g, grads)?;
        self.blocks.backward(store, &cache.blocks, &g, grads)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Future mixup

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixupStrategy {
    /// No mixup: the condition uses the network output alone.
    Off,
    /// Entries i.i.d. uniform on `[0, 1)`.
    Soft,
    /// Uniform entries binarized as `1{u < tau}`.
    Hard { tau: f64 },
    /// Alternating masked/unmasked runs with geometric lengths.
    Segment { tau: f64 },
}

impl MixupStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MixupStrategy::Hard { tau } | MixupStrategy::Segment { tau }
                if !(tau > 0.0 && tau < 1.0) =>
            {
                Err(Error::InvalidArgument(format!("mixup tau {tau} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MixupStrategy::Off => "none".into(),
            MixupStrategy::Soft => "soft".into(),
            MixupStrategy::Hard { tau } => format!("hard({tau})"),
            MixupStrategy::Segment { tau } => format!("segment({tau})"),
        }
    }
}

/// Mixing matrix `m`: weight on the network output, `1 - m` on the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MixMask {
    pub values: Tensor,
    pub strategy: MixupStrategy,
}

/// Draws a mask of the given shape. The last axis is time; each leading
/// index is an independent row.
pub fn sample_mask<R: Rng + ?Sized>(
    strategy: MixupStrategy,
    shape: &[usize],
    rng: &mut R,
) -> Result<MixMask> {
    strategy.validate()?;
    let values = match strategy {
        MixupStrategy::Off => Tensor::full(shape, 1.0),
        MixupStrategy::Soft => Tensor::from_fn(shape, |_| rng.random::<f64>()),
        MixupStrategy::Hard { tau } => {
            Tensor::from_fn(shape, |_| if rng.random::<f64>() < tau { 1.0 } else { 0.0 })
        }
        MixupStrategy::Segment { tau } => segment_mask(shape, tau, rng)?,
    };
    Ok(MixMask { values, strategy })
}

fn segment_mask<R: Rng + ?Sized>(shape: &[usize], tau: f64, rng: &mut R) -> Result<Tensor> {
    let len = *shape
        .last()
        .ok_or_else(|| Error::InvalidArgument("mask shape must be non-empty".into()))?;
    let total: usize = shape.iter().product();
    let masked_p = 1.0 / SEGMENT_MASKED_MEAN;
    let unmasked_mean = SEGMENT_MASKED_MEAN * (1.0 - tau) / tau;
    let unmasked_p = (1.0 / unmasked_mean).min(1.0);
    let masked = Geometric::new(masked_p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let unmasked = Geometric::new(unmasked_p).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut data = Vec::with_capacity(total);
    for _ in 0..total.checked_div(len).unwrap_or(0) {
        // Start in the masked state with its stationary probability.
        let mut state = rng.random::<f64>() < tau;
        let mut filled = 0;
        while filled < len {
            let run = 1 + if state {
                masked.sample(rng)
            } else {
                unmasked.sample(rng)
            } as usize;
            let run = run.min(len - filled);
            let v = if state { 1.0 } else { 0.0 };
            data.extend(std::iter::repeat_n(v, run));
            filled += run;
            state = !state;
        }
    }
    Tensor::new(shape, data)
}

/// `m ⊙ cond_out + (1 - m) ⊙ target`.
pub fn future_mixup_train(cond_out: &Tensor, target: &Tensor, mask: &MixMask) -> Result<Tensor> {
    cond_out.expect_same_shape("future_mixup_train", target)?;
    cond_out.expect_same_shape("future_mixup_train", &mask.values)?;
    let c = cond_out.data();
    let t = target.data();
    let m = mask.values.data();
    Tensor::new(
        cond_out.shape(),
        (0..c.len()).map(|i| m[i] * c[i] + (1.0 - m[i]) * t[i]).collect(),
    )
}

/// Inference-time mixup: the network output alone. There is no target
/// parameter, so the horizon cannot influence inference.
pub fn future_mixup_infer(cond_out: &Tensor) -> Tensor {
    cond_out.clone()
}

// ---------------------------------------------------------------------------
// Linear AR initializer

/// `z_ar = Σ_i W_i ⊙ X_i + B` with `W: [L, d, H]`, `B: [d, H]`.
#[derive(Debug, Clone)]
pub struct ArModel {
    pub weight: ParamId,
    pub bias: ParamId,
    pub variables: usize,
    pub lookback: usize,
    pub horizon: usize,
}

impl ArModel {
    /// Starts at the lookback-mean predictor (`W_i = 1/L`, `B = 0`).
    pub fn new(store: &mut ParamStore, name: &str, variables: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            weight: store.weight(
                format!("{name}.weight"),
                Tensor::full(&[lookback, variables, horizon], 1.0 / lookback as f64),
            ),
            bias: store.weight(format!("{name}.bias"), Tensor::zeros(&[variables, horizon])),
            variables,
            lookback,
            horizon,
        }
    }

    /// `[B, d, L] -> [B, d, H]`; all H columns at once.
    pub fn forward(&self, store: &ParamStore, lookback: &Tensor) -> Result<Tensor> {
        let b = lookback.dim(0);
        let (d, l, h) = (self.variables, self.lookback, self.horizon);
        lookback.expect_shape("ar_forward", &[b, d, l])?;
        let w = store.get(self.weight).data();
        let bias = store.get(self.bias).data();
        let x = lookback.data();
        let mut out = Vec::with_capacity(b * d * h);
        for bi in 0..b {
            for i in 0..d {
                let row = &x[(bi * d + i) * l..(bi * d + i + 1) * l];
                let mut acc = bias[i * h..(i + 1) * h].to_vec();
                for (li, &xv) in row.iter().enumerate() {
                    let wr = &w[(li * d + i) * h..(li * d + i + 1) * h];
                    for (a, wv) in acc.iter_mut().zip(wr) {
                        *a += wv * xv;
                    }
                }
                out.extend(acc);
            }
        }
        Tensor::new(&[b, d, h], out)
    }

    /// Parameter gradients of `<grad_out, forward(lookback)>`.
    pub fn backward(&self, lookback: &Tensor, grad_out: &Tensor, grads: &mut Grads) -> Result<()> {
        let b = lookback.dim(0);
        let (d, l, h) = (self.variables, self.lookback, self.horizon);
        lookback.expect_shape("ar_backward", &[b, d, l])?;
        grad_out.expect_shape("ar_backward", &[b, d, h])?;
        let x = lookback.data();
        let g = grad_out.data();
        {
            let gw = grads.get_mut(self.weight).data_mut();
            for bi in 0..b {
                for i in 0..d {
                    let gr = &g[(bi * d + i) * h..(bi * d + i + 1) * h];
                    for li in 0..l {
                        let xv = x[(bi * d + i) * l + li];
                        let dst = &mut gw[(li * d + i) * h..(li * d + i + 1) * h];
                        for (dv, gv) in dst.iter_mut().zip(gr) {
                            *dv += gv * xv;
                        }
                    }
                }
            }
        }
        let gb = grads.get_mut(self.bias).data_mut();
        for chunk in g.chunks(d * h) {
            for (dv, gv) in gb.iter_mut().zip(chunk) {
                *dv += gv;
            }
        }
        Ok(())
    }

    fn mean_squared_error(&self, store: &ParamStore, windows: &[SeriesWindow]) -> Result<f64> {
        let refs: Vec<&SeriesWindow> = windows.iter().collect();
        let (x, y) = stack_windows(&refs)?;
        let pred = self.forward(store, &x)?;
        Ok(pred.sub(&y)?.map(|v| v * v).mean())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ArPretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

/// Fits the AR initializer by Adam on mean squared error against the
/// targets. Returns the full-training-set loss after each epoch.
pub fn ar_pretrain(
    ar: &ArModel,
    store: &mut ParamStore,
    windows: &[SeriesWindow],
    config: &ArPretrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::EmptyData("AR pretraining needs at least one window".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(config.adam, store, vec![ar.weight, ar.bias]);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut grads = Grads::zeros_like(store);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SeriesWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let (x, y) = stack_windows(&batch)?;
            let pred = ar.forward(store, &x)?;
            let n = pred.len() as f64;
            let g = pred.sub(&y)?.scale(2.0 / n);
            grads.zero();
            ar.backward(&x, &g, &mut grads)?;
            adam.step(store, &grads)?;
        }
        history.push(ar.mean_squared_error(store, windows)?);
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Condition

/// Channel concatenation `[z_mix; z_ar]`, shape `[B, 2d, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub c: Tensor,
    variables: usize,
}

impl Condition {
    pub fn variables(&self) -> usize {
        self.variables
    }

    pub fn z_mix(&self) -> Result<Tensor> {
        Ok(self.split()?.0)
    }

    pub fn z_ar(&self) -> Result<Tensor> {
        Ok(self.split()?.1)
    }

    /// Recovers `(z_mix, z_ar)`.
    pub fn split(&self) -> Result<(Tensor, Tensor)> {
        let mut parts = self.c.split_channels(&[self.variables, self.variables])?;
        let z_ar = parts.pop().expect("two parts");
        let z_mix = parts.pop().expect("two parts");
        Ok((z_mix, z_ar))
    }
}

pub fn build_condition(z_mix: &Tensor, z_ar: &Tensor) -> Result<Condition> {
    z_mix.expect_same_shape("build_condition", z_ar)?;
    Ok(Condition {
        c: Tensor::concat_channels(&[z_mix, z_ar])?,
        variables: z_mix.dim(1),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;

    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn cond_net_shapes_and_determinism() {
        let mut store = ParamStore::new();
        let net = CondNet::new(&mut store, "f", 2, 8, 4, 16, 2, 0.1, &mut rng(0));
        let x = Tensor::randn(&[1, 2, 8], &mut rng(1));
        let (y, _) = net.forward(&store, &x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        let (y2, _) = net.forward(&store, &x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y, y2);
        let (z, _) = net
            .forward(&store, &Tensor::zeros(&[1, 2, 8]), &mut ForwardCtx::eval())
            .unwrap();
        assert!(z.is_finite());
        assert!(net
            .forward(&store, &Tensor::zeros(&[1, 3, 8]), &mut ForwardCtx::eval())
            .is_err());
    }

    #[test]
    fn soft_mask_moments() {
        let m = sample_mask(MixupStrategy::Soft, &[100, 100], &mut rng(4)).unwrap();
        assert!(m.values.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!((m.values.mean() - 0.5).abs() < 0.02);
    }

    #[test]
    fn hard_mask_is_binary_and_follows_tau() {
        let m = sample_mask(MixupStrategy::Hard { tau: 0.999 }, &[50, 200], &mut rng(5)).unwrap();
        assert!(m.values.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.values.mean() > 0.99);
        let m = sample_mask(MixupStrategy::Hard { tau: 0.3 }, &[100, 100], &mut rng(6)).unwrap();
        assert!((m.values.mean() - 0.3).abs() < 0.02);
        assert!(sample_mask(MixupStrategy::Hard { tau: 1.0 }, &[2, 2], &mut rng(0)).is_err());
        assert!(sample_mask(MixupStrategy::Segment { tau: 0.0 }, &[2, 2], &mut rng(0)).is_err());
    }

    /// Mean lengths of runs of `value` that do not touch a row boundary.
    fn interior_run_mean(mask: &Tensor, value: f64) -> f64 {
        let len = *mask.shape().last().unwrap();
        let mut runs = Vec::new();
        for row in mask.data().chunks(len) {
            let mut i = 0;
            while i < len {
                let mut j = i;
                while j < len && row[j] == row[i] {
                    j += 1;
                }
                if row[i] == value && i > 0 && j < len {
                    runs.push((j - i) as f64);
                }
                i = j;
            }
        }
        runs.iter().sum::<f64>() / runs.len() as f64
    }

    #[test]
    fn segment_run_lengths() {
        let m = sample_mask(MixupStrategy::Segment { tau: 0.5 }, &[100, 1000], &mut rng(7)).unwrap();
        assert!(m.values.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let unmasked = interior_run_mean(&m.values, 0.0);
        let masked = interior_run_mean(&m.values, 1.0);
        assert!((unmasked - 3.0).abs() < 0.1, "{unmasked}");
        assert!((masked - 3.0).abs() < 0.1, "{masked}");

        // tau = 0.2: unmasked mean 3 * 0.8 / 0.2 = 12
        let m = sample_mask(MixupStrategy::Segment { tau: 0.2 }, &[100, 1000], &mut rng(8)).unwrap();
        let unmasked = interior_run_mean(&m.values, 0.0);
        assert!((unmasked - 12.0).abs() < 0.5, "{unmasked}");
    }

    #[test]
    fn mixup_limits_and_midpoint() {
        let cond = Tensor::full(&[1, 1, 3], 2.0);
        let target = Tensor::full(&[1, 1, 3], 4.0);
        let mask = |v: f64| MixMask {
            values: Tensor::full(&[1, 1, 3], v),
            strategy: MixupStrategy::Soft,
        };
        assert_eq!(future_mixup_train(&cond, &target, &mask(0.0)).unwrap(), target);
        assert_eq!(future_mixup_train(&cond, &target, &mask(0.5)).unwrap().data(), &[3.0; 3]);
        let ones = future_mixup_train(&cond, &target, &mask(1.0)).unwrap();
        assert_eq!(ones, cond);
        assert_eq!(future_mixup_infer(&cond), ones);
        assert!(future_mixup_train(&cond, &Tensor::zeros(&[1, 1, 2]), &mask(0.0)).is_err());
    }

    fn ar_store(d: usize, l: usize, h: usize) -> (ParamStore, ArModel) {
        let mut store = ParamStore::new();
        let ar = ArModel::new(&mut store, "ar", d, l, h);
        (store, ar)
    }

    #[test]
    fn ar_examples() {
        let (mut store, ar) = ar_store(2, 3, 4);
        *store.get_mut(ar.weight) = Tensor::zeros(&[3, 2, 4]);
        let b = Tensor::randn(&[2, 4], &mut rng(1));
        *store.get_mut(ar.bias) = b.clone();
        let x = Tensor::randn(&[1, 2, 3], &mut rng(2));
        assert_eq!(ar.forward(&store, &x).unwrap().index(0), b);

        let (mut store, ar) = ar_store(2, 1, 3);
        *store.get_mut(ar.weight) = Tensor::full(&[1, 2, 3], 1.0);
        let x = Tensor::new(&[1, 2, 1], vec![5.0, -1.0]).unwrap();
        let z = ar.forward(&store, &x).unwrap();
        assert_eq!(z.data(), &[5.0, 5.0, 5.0, -1.0, -1.0, -1.0]);

        // d=1, L=2, H=2: W_{-1} = [1, 0], W_0 = [0, 1]
        let (mut store, ar) = ar_store(1, 2, 2);
        *store.get_mut(ar.weight) = Tensor::new(&[2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[1, 1, 2], vec![2.0, 3.0]).unwrap();
        assert_eq!(ar.forward(&store, &x).unwrap().data(), &[2.0, 3.0]);
        assert!(ar.forward(&store, &Tensor::zeros(&[1, 1, 3])).is_err());
    }

    #[test]
    fn ar_gradients_match_finite_differences() {
        let (mut store, ar) = ar_store(2, 5, 3);
        let mut r = rng(3);
        *store.get_mut(ar.weight) = Tensor::randn(&[5, 2, 3], &mut r);
        *store.get_mut(ar.bias) = Tensor::randn(&[2, 3], &mut r);
        let x = Tensor::randn(&[4, 2, 5], &mut r);
        let proj = Tensor::randn(&[4, 2, 3], &mut r);
        let loss = |s: &ParamStore| ar.forward(s, &x)?.dot(&proj);
        let grad = |s: &ParamStore| {
            let mut g = Grads::zeros_like(s);
            ar.backward(&x, &proj, &mut g)?;
            Ok(g)
        };
        let report = crate::nn::finite_diff_check(
            &mut store,
            &[ar.weight, ar.bias],
            loss,
            grad,
            12,
            1.0,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    fn window(series: &[f64], l: usize, h: usize, origin: usize) -> SeriesWindow {
        SeriesWindow::new(
            Tensor::new(&[1, l], series[origin..origin + l].to_vec()).unwrap(),
            Tensor::new(&[1, h], series[origin + l..origin + l + h].to_vec()).unwrap(),
            origin,
        )
        .unwrap()
    }

    #[test]
    fn ar_pretrain_constant_series() {
        let series = vec![2.5; 30];
        let windows: Vec<_> = (0..10).map(|o| window(&series, 8, 4, o)).collect();
        let (mut store, ar) = ar_store(1, 8, 4);
        let history =
            ar_pretrain(&ar, &mut store, &windows, &ArPretrainConfig::default(), &mut rng(0)).unwrap();
        assert_eq!(history.len(), 20);
        assert!(*history.last().unwrap() < 1e-4);
    }

    #[test]
    fn ar_pretrain_is_deterministic_and_monotone_on_trend() {
        let series: Vec<f64> = (0..60).map(|t| 0.05 * t as f64 - 1.0).collect();
        let windows: Vec<_> = (0..10).map(|o| window(&series, 8, 4, o)).collect();
        let run = || {
            let (mut store, ar) = ar_store(1, 8, 4);
            let h = ar_pretrain(&ar, &mut store, &windows, &ArPretrainConfig::default(), &mut rng(9))
                .unwrap();
            (store, h)
        };
        let (s1, h1) = run();
        let (s2, h2) = run();
        assert_eq!(s1, s2);
        assert_eq!(h1, h2);
        for w in h1.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{h1:?}");
        }
        assert!(h1.last().unwrap() < h1.first().unwrap());
    }

    #[test]
    fn ar_pretrain_rejects_empty() {
        let (mut store, ar) = ar_store(1, 2, 2);
        assert!(matches!(
            ar_pretrain(&ar, &mut store, &[], &ArPretrainConfig::default(), &mut rng(0)),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn condition_concat_and_split() {
        let z_mix = Tensor::new(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let z_ar = Tensor::new(&[1, 1, 2], vec![3.0, 4.0]).unwrap();
        let c = build_condition(&z_mix, &z_ar).unwrap();
        assert_eq!(c.c.shape(), &[1, 2, 2]);
        assert_eq!(c.c.data(), &[1.0, 2.0, 3.0, 4.0]);
        let c = build_condition(&Tensor::zeros(&[2, 3, 5]), &Tensor::zeros(&[2, 3, 5])).unwrap();
        assert_eq!(c.c.shape(), &[2, 6, 5]);
        assert!(build_condition(&Tensor::zeros(&[1, 3, 5]), &Tensor::zeros(&[1, 2, 5])).is_err());
    }

    proptest! {
        #[test]
        fn soft_mixup_is_convex(seed in 0u64..500) {
            let mut r = rng(seed);
            let cond = Tensor::randn(&[2, 3, 6], &mut r);
            let target = Tensor::randn(&[2, 3, 6], &mut r);
            let m = sample_mask(MixupStrategy::Soft, &[2, 3, 6], &mut r).unwrap();
            prop_assert!(m.values.data().iter().all(|&v| v < 1.0));
            let z = future_mixup_train(&cond, &target, &m).unwrap();
            for i in 0..z.len() {
                let (a, b) = (cond.data()[i], target.data()[i]);
                prop_assert!(z.data()[i] >= a.min(b) - 1e-12 && z.data()[i] <= a.max(b) + 1e-12);
            }
        }

        #[test]
        fn ar_is_affine(seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let (mut store, ar) = ar_store(2, 4, 3);
            let mut r = rng(seed);
            *store.get_mut(ar.weight) = Tensor::randn(&[4, 2, 3], &mut r);
            *store.get_mut(ar.bias) = Tensor::randn(&[2, 3], &mut r);
            let x = Tensor::randn(&[1, 2, 4], &mut r);
            let y = Tensor::randn(&[1, 2, 4], &mut r);
            let combo = x.scale(a).add(&y.scale(b)).unwrap();
            let lhs = ar.forward(&store, &combo).unwrap();
            let bias = store.get(ar.bias).clone().reshape(&[1, 2, 3]).unwrap();
            let rhs = ar.forward(&store, &x).unwrap().scale(a)
                .add(&ar.forward(&store, &y).unwrap().scale(b)).unwrap()
                .sub(&bias.scale(a + b - 1.0)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
        }

        #[test]
        fn condition_split_round_trip(seed in 0u64..500, d in 1usize..4, h in 1usize..6) {
            let mut r = rng(seed);
            let zm = Tensor::randn(&[2, d, h], &mut r);
            let za = Tensor::randn(&[2, d, h], &mut r);
            let (m, a) = build_condition(&zm, &za).unwrap().split().unwrap();
            prop_assert_eq!(m, zm);
            prop_assert_eq!(a, za);
        }
    }
}
