use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{ForwardCtx, Grads, Mode, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

fn expect_rank3(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, t] => Ok((b, c, t)),
        _ => Err(Error::shape(op, &[0, 0, 0], x.shape())),
    }
}

// ---------------------------------------------------------------------------
// Conv1d

/// 1-D convolution, stride 1, zero "same" padding of `(kernel - 1) / 2`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    /// Absent when a batch norm follows, whose shift makes it redundant.
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::without_bias(store, name, in_channels, out_channels, kernel, rng);
        conv.bias = Some(store.weight(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        conv
    }

    pub fn without_bias<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let bound = init_bound(in_channels * kernel);
        let weight = store.weight(
            format!("{name}.weight"),
            Tensor::uniform(&[out_channels, in_channels, kernel], bound, rng),
        );
        Self {
            weight,
            bias: None,
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// `col[(c*K + j), b*T + t] = x[b, c, t + j - pad]`.
    fn im2col(&self, x: &Tensor) -> Vec<f64> {
        let (b, c, t) = (x.dim(0), x.dim(1), x.dim(2));
        let k = self.kernel;
        let pad = self.pad() as isize;
        let bt = b * t;
        let mut col = vec![0.0; c * k * bt];
        let xd = x.data();
        for ci in 0..c {
            for j in 0..k {
                let row = &mut col[(ci * k + j) * bt..(ci * k + j + 1) * bt];
                let shift = j as isize - pad;
                for bi in 0..b {
                    let src = &xd[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                    let dst = &mut row[bi * t..(bi + 1) * t];
                    for ti in 0..t {
                        let s = ti as isize + shift;
                        if s >= 0 && (s as usize) < t {
                            dst[ti] = src[s as usize];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = expect_rank3("conv1d_forward", x)?;
        if c != self.in_channels {
            return Err(Error::shape(
                "conv1d_forward",
                &[b, self.in_channels, t],
                x.shape(),
            ));
        }
        if t == 0 {
            return Err(Error::InvalidArgument("conv1d input length must be >= 1".into()));
        }
        let co = self.out_channels;
        let ck = c * self.kernel;
        let col = self.im2col(x);
        let mut tmp = vec![0.0; co * b * t];
        gemm(
            Mat::new(store.get(self.weight).data(), co, ck),
            Mat::new(&col, ck, b * t),
            &mut tmp,
            0.0,
        );
        let zeros = vec![0.0; co];
        let bias = self.bias.map_or(&zeros[..], |id| store.get(id).data());
        let mut out = vec![0.0; b * co * t];
        for bi in 0..b {
            for o in 0..co {
                let src = &tmp[o * b * t + bi * t..o * b * t + (bi + 1) * t];
                let dst = &mut out[(bi * co + o) * t..(bi * co + o + 1) * t];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[o];
                }
            }
        }
        Tensor::new(&[b, co, t], out)
    }

    /// Accumulates kernel/bias gradients into `grads` and returns the input gradient.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let (b, c, t) = expect_rank3("conv1d_backward", x)?;
        let co = self.out_channels;
        grad_out.expect_shape("conv1d_backward", &[b, co, t])?;
        let k = self.kernel;
        let ck = c * k;
        let bt = b * t;

        let mut g = vec![0.0; co * bt];
        let gd = grad_out.data();
        for bi in 0..b {
            for o in 0..co {
                g[o * bt + bi * t..o * bt + (bi + 1) * t]
                    .copy_from_slice(&gd[(bi * co + o) * t..(bi * co + o + 1) * t]);
            }
        }

        let col = self.im2col(x);
        gemm(
            Mat::new(&g, co, bt),
            Mat::transposed(&col, bt, ck),
            grads.get_mut(self.weight).data_mut(),
            1.0,
        );
        if let Some(bias) = self.bias {
            let gb = grads.get_mut(bias).data_mut();
            for o in 0..co {
                gb[o] += g[o * bt..(o + 1) * bt].iter().sum::<f64>();
            }
        }

        let mut gcol = vec![0.0; ck * bt];
        gemm(
            Mat::transposed(store.get(self.weight).data(), ck, co),
            Mat::new(&g, co, bt),
            &mut gcol,
            0.0,
        );
        let pad = self.pad() as isize;
        let mut gx = vec![0.0; b * c * t];
        for ci in 0..c {
            for j in 0..k {
                let row = &gcol[(ci * k + j) * bt..(ci * k + j + 1) * bt];
                let shift = j as isize - pad;
                for bi in 0..b {
                    let src = &row[bi * t..(bi + 1) * t];
                    let dst = &mut gx[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                    for ti in 0..t {
                        let s = ti as isize + shift;
                        if s >= 0 && (s as usize) < t {
                            dst[s as usize] += src[ti];
                        }
                    }
                }
            }
        }
        Tensor::new(&[b, c, t], gx)
    }
}

// ---------------------------------------------------------------------------
// BatchNorm1d

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gain: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gain: store.weight(format!("{name}.gain"), Tensor::full(&[channels], 1.0)),
            bias: store.weight(format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: store.buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, BatchNormCache)> {
        let (b, c, t) = expect_rank3("batchnorm1d", x)?;
        if c != self.channels {
            return Err(Error::shape("batchnorm1d", &[b, self.channels, t], x.shape()));
        }
        let n = b * t;
        let xd = x.data();
        let (mean, var) = if ctx.is_train() {
            if n < 2 {
                return Err(Error::InvalidArgument(
                    "batch norm in train mode needs at least 2 values per channel".into(),
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    s += xd[(bi * c + ci) * t..(bi * c + ci + 1) * t].iter().sum::<f64>();
                }
                let m = s / n as f64;
                let mut v = 0.0;
                for bi in 0..b {
                    v += xd[(bi * c + ci) * t..(bi * c + ci + 1) * t]
                        .iter()
                        .map(|x| (x - m) * (x - m))
                        .sum::<f64>();
                }
                mean[ci] = m;
                var[ci] = v / n as f64;
            }
            let rm = store.get(self.running_mean).data();
            let rv = store.get(self.running_var).data();
            let unbias = n as f64 / (n as f64 - 1.0);
            let new_mean: Vec<f64> = (0..c)
                .map(|i| (1.0 - self.momentum) * rm[i] + self.momentum * mean[i])
                .collect();
            let new_var: Vec<f64> = (0..c)
                .map(|i| (1.0 - self.momentum) * rv[i] + self.momentum * var[i] * unbias)
                .collect();
            ctx.push_update(self.running_mean, Tensor::new(&[c], new_mean)?);
            ctx.push_update(self.running_var, Tensor::new(&[c], new_var)?);
            (mean, var)
        } else {
            (
                store.get(self.running_mean).data().to_vec(),
                store.get(self.running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gain = store.get(self.gain).data();
        let bias = store.get(self.bias).data();
        let mut x_hat = vec![0.0; b * c * t];
        let mut y = vec![0.0; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let r = (bi * c + ci) * t..(bi * c + ci + 1) * t;
                for i in r {
                    let h = (xd[i] - mean[ci]) * inv_std[ci];
                    x_hat[i] = h;
                    y[i] = gain[ci] * h + bias[ci];
                }
            }
        }
        Ok((
            Tensor::new(&[b, c, t], y)?,
            BatchNormCache {
                mode: ctx.mode,
                x_hat: Tensor::new(&[b, c, t], x_hat)?,
                inv_std,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &BatchNormCache,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        grad_out.expect_same_shape("batchnorm1d_backward", &cache.x_hat)?;
        let (b, c, t) = (grad_out.dim(0), grad_out.dim(1), grad_out.dim(2));
        let n = (b * t) as f64;
        let gy = grad_out.data();
        let xh = cache.x_hat.data();
        let gain = store.get(self.gain).data().to_vec();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                for i in (bi * c + ci) * t..(bi * c + ci + 1) * t {
                    sum_g[ci] += gy[i];
                    sum_gx[ci] += gy[i] * xh[i];
                }
            }
        }
        {
            let gg = grads.get_mut(self.gain).data_mut();
            for ci in 0..c {
                gg[ci] += sum_gx[ci];
            }
        }
        {
            let gb = grads.get_mut(self.bias).data_mut();
            for ci in 0..c {
                gb[ci] += sum_g[ci];
            }
        }
        let mut gx = vec![0.0; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                let scale = gain[ci] * cache.inv_std[ci];
                for i in (bi * c + ci) * t..(bi * c + ci + 1) * t {
                    gx[i] = match cache.mode {
                        Mode::Train => {
                            scale * (gy[i] - sum_g[ci] / n - xh[i] * sum_gx[ci] / n)
                        }
                        Mode::Eval => scale * gy[i],
                    };
                }
            }
        }
        Tensor::new(&[b, c, t], gx)
    }
}

// ---------------------------------------------------------------------------
// Activations and dropout

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward(x: &Tensor, grad_out: &Tensor, slope: f64) -> Result<Tensor> {
    x.zip_map(grad_out, |v, g| if v >= 0.0 { g } else { slope * g })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |v, g| {
        let s = sigmoid(v);
        g * (s + v * s * (1.0 - s))
    })
}

/// Inverted dropout. Returns the output and the applied scale mask
/// (`None` in eval mode or at rate 0).
pub fn dropout(
    x: &Tensor,
    rate: f64,
    ctx: &mut ForwardCtx<'_>,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if !ctx.is_train() || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(x.shape(), |_| if ctx.uniform() < rate { 0.0 } else { keep });
    Ok((x.mul(&mask)?, Some(mask)))
}

pub fn dropout_backward(mask: Option<&Tensor>, grad_out: &Tensor) -> Result<Tensor> {
    match mask {
        Some(m) => grad_out.mul(m),
        None => Ok(grad_out.clone()),
    }
}

// ---------------------------------------------------------------------------
// Dense

/// Fully connected layer over the last axis: `[N, in] -> [N, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(in_dim);
        Self {
            weight: store.weight(
                format!("{name}.weight"),
                Tensor::uniform(&[out_dim, in_dim], bound, rng),
            ),
            bias: store.weight(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    fn rows(&self, op: &'static str, x: &Tensor) -> Result<usize> {
        let last = *x.shape().last().unwrap_or(&0);
        if last != self.in_dim || x.shape().is_empty() {
            let mut expected = x.shape().to_vec();
            if let Some(l) = expected.last_mut() {
                *l = self.in_dim;
            }
            return Err(Error::shape(op, &expected, x.shape()));
        }
        Ok(x.len() / self.in_dim)
    }

    /// Applies the layer along the last axis of any-rank input.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let n = self.rows("dense_forward", x)?;
        let bias = store.get(self.bias).data();
        let mut out: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        gemm(
            Mat::new(x.data(), n, self.in_dim),
            Mat::transposed(store.get(self.weight).data(), self.in_dim, self.out_dim),
            &mut out,
            1.0,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = self.out_dim;
        Tensor::new(&shape, out)
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let n = self.rows("dense_backward", x)?;
        if grad_out.len() != n * self.out_dim {
            let mut expected = x.shape().to_vec();
            *expected.last_mut().expect("non-empty shape") = self.out_dim;
            return Err(Error::shape("dense_backward", &expected, grad_out.shape()));
        }
        gemm(
            Mat::transposed(grad_out.data(), self.out_dim, n),
            Mat::new(x.data(), n, self.in_dim),
            grads.get_mut(self.weight).data_mut(),
            1.0,
        );
        {
            let gb = grads.get_mut(self.bias).data_mut();
            for row in grad_out.data().chunks(self.out_dim) {
                for (g, v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut gx = vec![0.0; n * self.in_dim];
        gemm(
            Mat::new(grad_out.data(), n, self.out_dim),
            Mat::new(store.get(self.weight).data(), self.out_dim, self.in_dim),
            &mut gx,
            0.0,
        );
        Tensor::new(x.shape(), gx)
    }
}

// ---------------------------------------------------------------------------
// Conv block: conv -> batchnorm -> leaky relu -> dropout

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub norm: BatchNorm1d,
    pub negative_slope: f64,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache {
    input: Tensor,
    norm: BatchNormCache,
    pre_act: Tensor,
    mask: Option<Tensor>,
}

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv1d::without_bias(store, &format!("{name}.conv"), in_channels, out_channels, 3, rng),
            norm: BatchNorm1d::new(store, &format!("{name}.bn"), out_channels),
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
            dropout_rate,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, ConvBlockCache)> {
        let h = self.conv.forward(store, x)?;
        let (h, norm) = self.norm.forward(store, &h, ctx)?;
        let a = leaky_relu(&h, self.negative_slope);
        let (y, mask) = dropout(&a, self.dropout_rate, ctx)?;
        Ok((
            y,
            ConvBlockCache {
                input: x.clone(),
                norm,
                pre_act: h,
                mask,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &ConvBlockCache,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let g = dropout_backward(cache.mask.as_ref(), grad_out)?;
        let g = leaky_relu_backward(&cache.pre_act, &g, self.negative_slope)?;
        let g = self.norm.backward(store, &cache.norm, &g, grads)?;
        self.conv.backward(store, &cache.input, &g, grads)
    }
}

/// A sequential stack of conv blocks.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub blocks: Vec<ConvBlock>,
}

impl ConvStack {
    /// Blocks `in -> width -> ... -> width`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        width: usize,
        depth: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { width };
                ConvBlock::new(store, &format!("{name}.{i}"), cin, width, dropout_rate, rng)
            })
            .collect();
        Self { blocks }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, Vec<ConvBlockCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(store, &h, ctx)?;
            caches.push(cache);
            h = next;
        }
        Ok((h, caches))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        caches: &[ConvBlockCache],
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for (block, cache) in self.blocks.iter().zip(caches).rev() {
            g = block.backward(store, cache, &g, grads)?;
        }
        Ok(g)
    }
}
