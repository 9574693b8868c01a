//! The convolutional denoising network: diffusion-step embedding, input
//! projection, encoder and condition-fusing decoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    silu, silu_backward, Conv1d, ConvBlockCache, ConvStack, Dense, ForwardCtx, Grads, ParamStore,
    Tensor,
};

/// Raw sinusoidal embedding of step `k`: `sin(10^{4j/(w-1)} k)` for
/// `j = 0..w` followed by the matching cosines, `w = dim / 2`.
pub fn raw_step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let w = dim / 2;
    let denom = (w.max(2) - 1) as f64;
    let freqs: Vec<f64> = (0..w).map(|j| 10f64.powf(4.0 * j as f64 / denom)).collect();
    let kf = k as f64;
    freqs
        .iter()
        .map(|f| (f * kf).sin())
        .chain(freqs.iter().map(|f| (f * kf).cos()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct StepEmbedding {
    pub fc1: Dense,
    pub fc2: Dense,
    pub dim: usize,
}

pub struct StepEmbeddingCache {
    raw: Tensor,
    h1: Tensor,
    h2: Tensor,
}

impl StepEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Dense::new(store, &format!("{name}.fc1"), dim, hidden, rng),
            fc2: Dense::new(store, &format!("{name}.fc2"), hidden, dim, rng),
            dim,
        }
    }

    /// `SiLU(FC(SiLU(FC(raw(k)))))` for every step in `ks`: `[B, dim]`.
    pub fn forward(&self, store: &ParamStore, ks: &[usize]) -> Result<(Tensor, StepEmbeddingCache)> {
        let raw: Vec<f64> = ks
            .iter()
            .flat_map(|&k| raw_step_embedding(k, self.dim))
            .collect();
        let raw = Tensor::new(&[ks.len(), self.dim], raw)?;
        let h1 = self.fc1.forward(store, &raw)?;
        let a1 = silu(&h1);
        let h2 = self.fc2.forward(store, &a1)?;
        let out = silu(&h2);
        Ok((out, StepEmbeddingCache { raw, h1, h2 }))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &StepEmbeddingCache,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<()> {
        let g = silu_backward(&cache.h2, grad_out)?;
        let g = self.fc2.backward(store, &silu(&cache.h1), &g, grads)?;
        let g = silu_backward(&cache.h1, &g)?;
        self.fc1.backward(store, &cache.raw, &g, grads)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserShape {
    pub variables: usize,
    /// d' = d'' (latent channel width).
    pub width: usize,
    pub embedding_hidden: usize,
    pub input_blocks: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub dropout: f64,
}

impl DenoiserShape {
    pub fn new(variables: usize, width: usize) -> Self {
        Self {
            variables,
            width,
            embedding_hidden: 128,
            input_blocks: 2,
            encoder_blocks: 3,
            decoder_blocks: 3,
            dropout: crate::nn::DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub embedding: StepEmbedding,
    pub input_proj: ConvStack,
    pub encoder: ConvStack,
    pub decoder: ConvStack,
    pub output: Conv1d,
    pub shape: DenoiserShape,
}

pub struct DenoiserCache {
    embedding: StepEmbeddingCache,
    input_proj: Vec<ConvBlockCache>,
    encoder: Vec<ConvBlockCache>,
    decoder: Vec<ConvBlockCache>,
    decoder_out: Tensor,
    horizon: usize,
}

/// `[B, C]` -> `[B, C, T]` by repetition along time.
fn broadcast_time(p: &Tensor, t: usize) -> Tensor {
    let (b, c) = (p.dim(0), p.dim(1));
    let mut data = Vec::with_capacity(b * c * t);
    for v in p.data() {
        data.extend(std::iter::repeat_n(*v, t));
    }
    Tensor::new(&[b, c, t], data).expect("sized above")
}

fn sum_time(g: &Tensor) -> Tensor {
    let (b, c, t) = (g.dim(0), g.dim(1), g.dim(2));
    let data = g.data().chunks(t).map(|r| r.iter().sum()).collect();
    Tensor::new(&[b, c], data).expect("sized above")
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        shape: DenoiserShape,
        rng: &mut R,
    ) -> Result<Self> {
        if shape.width < 4 || !shape.width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "latent width must be even and >= 4, got {}",
                shape.width
            )));
        }
        if shape.input_blocks == 0 || shape.encoder_blocks == 0 || shape.decoder_blocks == 0 {
            return Err(Error::InvalidArgument("every conv stack needs at least one block".into()));
        }
        let (d, w) = (shape.variables, shape.width);
        Ok(Self {
            embedding: StepEmbedding::new(store, &format!("{name}.step_emb"), w, shape.embedding_hidden, rng),
            input_proj: ConvStack::new(store, &format!("{name}.input_proj"), d, w, shape.input_blocks, shape.dropout, rng),
            encoder: ConvStack::new(store, &format!("{name}.encoder"), 2 * w, w, shape.encoder_blocks, shape.dropout, rng),
            decoder: ConvStack::new(store, &format!("{name}.decoder"), 2 * d + w, w, shape.decoder_blocks, shape.dropout, rng),
            output: Conv1d::new(store, &format!("{name}.output"), w, d, 3, rng),
            shape,
        })
    }

    /// `x^k: [B, d, H] -> z_1: [B, d', H]`.
    pub fn input_projection(
        &self,
        store: &ParamStore,
        xk: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, Vec<ConvBlockCache>)> {
        self.input_proj.forward(store, xk, ctx)
    }

    /// Broadcast `p^k` over time, concatenate with `z_1` (`[B, 2d', H]`)
    /// and encode to `z_2: [B, d'', H]`.
    pub fn encode(
        &self,
        store: &ParamStore,
        z1: &Tensor,
        pk: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, Vec<ConvBlockCache>)> {
        let h = z1.dim(2);
        pk.expect_shape("encode", &[z1.dim(0), self.shape.width])?;
        let joined = Tensor::concat_channels(&[z1, &broadcast_time(pk, h)])?;
        self.encoder.forward(store, &joined, ctx)
    }

    /// Fuse `c: [B, 2d, H]` with `z_2` (`[B, 2d + d'', H]`) and decode to `[B, d, H]`.
    pub fn decode(
        &self,
        store: &ParamStore,
        c: &Tensor,
        z2: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, Vec<ConvBlockCache>, Tensor)> {
        let d = self.shape.variables;
        c.expect_shape("decode", &[z2.dim(0), 2 * d, z2.dim(2)])?;
        let joined = Tensor::concat_channels(&[c, z2])?;
        let (h, caches) = self.decoder.forward(store, &joined, ctx)?;
        let out = self.output.forward(store, &h)?;
        Ok((out, caches, h))
    }

    /// Full prediction `x_θ(x^k, k | c)`; one step index per batch element.
    pub fn forward(
        &self,
        store: &ParamStore,
        xk: &Tensor,
        ks: &[usize],
        c: &Tensor,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<(Tensor, DenoiserCache)> {
        let d = self.shape.variables;
        let b = xk.dim(0);
        if xk.shape().len() != 3 || xk.dim(1) != d {
            return Err(Error::shape("denoiser_forward", &[b, d, 0], xk.shape()));
        }
        if ks.len() != b {
            return Err(Error::InvalidArgument(format!(
                "{} step indices for a batch of {b}",
                ks.len()
            )));
        }
        let (pk, embedding) = self.embedding.forward(store, ks)?;
        let (z1, input_proj) = self.input_projection(store, xk, ctx)?;
        let (z2, encoder) = self.encode(store, &z1, &pk, ctx)?;
        let (out, decoder, decoder_out) = self.decode(store, c, &z2, ctx)?;
        Ok((
            out,
            DenoiserCache {
                embedding,
                input_proj,
                encoder,
                decoder,
                decoder_out,
                horizon: xk.dim(2),
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. `c`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &DenoiserCache,
        grad_out: &Tensor,
        grads: &mut Grads,
    ) -> Result<Tensor> {
        let (d, w) = (self.shape.variables, self.shape.width);
        let g = self.output.backward(store, &cache.decoder_out, grad_out, grads)?;
        let g = self.decoder.backward(store, &cache.decoder, &g, grads)?;
        let mut parts = g.split_channels(&[2 * d, w])?;
        let g_z2 = parts.pop().expect("two parts");
        let g_c = parts.pop().expect("two parts");
        let g = self.encoder.backward(store, &cache.encoder, &g_z2, grads)?;
        let mut parts = g.split_channels(&[w, w])?;
        let g_p = parts.pop().expect("two parts");
        let g_z1 = parts.pop().expect("two parts");
        debug_assert_eq!(g_p.dim(2), cache.horizon);
        self.embedding.backward(store, &cache.embedding, &sum_time(&g_p), grads)?;
        self.input_proj.backward(store, &cache.input_proj, &g_z1, grads)?;
        Ok(g_c)
    }
}
