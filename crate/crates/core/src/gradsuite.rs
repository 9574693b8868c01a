//! Central finite-difference checks over every layer and both training
//! objectives, with seeded inputs and projections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{ArModel, CondNet, MixupStrategy};
use crate::denoiser::{Denoiser, DenoiserShape, StepEmbedding};
use crate::error::Result;
use crate::nn::{
    dropout, dropout_backward, finite_diff_check, leaky_relu, leaky_relu_backward, silu,
    silu_backward, BatchNorm1d, Conv1d, ConvBlock, Dense, ForwardCtx, GradCheckReport, Grads,
    ParamId, ParamStore, Tensor,
};
use crate::pipeline::{Head, ModelConfig, TimeDiff};

pub const SUITE_STEP: f64 = 1e-5;
pub const SUITE_TOLERANCE: f64 = 1e-4;
pub const SUITE_PROBES: usize = 10;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub component: &'static str,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.report.max_rel_error())
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.entries.iter().all(|e| e.report.passes(tolerance))
    }

    /// `(component, parameter group, probes, max relative error)` rows.
    pub fn rows(&self) -> Vec<(&'static str, String, usize, f64)> {
        self.entries
            .iter()
            .flat_map(|e| {
                e.report
                    .groups
                    .iter()
                    .map(move |g| (e.component, g.name.clone(), g.probes, g.max_rel_error))
            })
            .collect()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random values kept at least 0.05 away from zero, clear of activation kinks.
fn off_kink(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, r).map(|v| v + 0.05 * v.signum())
}

struct Suite {
    seed: u64,
    probes: usize,
    report: SuiteReport,
}

impl Suite {
    fn check<L, G>(&mut self, component: &'static str, store: &mut ParamStore, ids: &[ParamId], loss: L, grad: G) -> Result<()>
    where
        L: Fn(&ParamStore) -> Result<f64>,
        G: Fn(&ParamStore) -> Result<Grads>,
    {
        let seed = self.seed.wrapping_add(self.report.entries.len() as u64);
        let report = finite_diff_check(store, ids, loss, grad, self.probes, SUITE_STEP, seed)?;
        self.report.entries.push(SuiteEntry { component, report });
        Ok(())
    }
}

/// Runs every check with `probes` probes per parameter group.
pub fn gradient_suite(seed: u64, probes: usize) -> Result<SuiteReport> {
    let mut s = Suite {
        seed,
        probes,
        report: SuiteReport::default(),
    };
    let mut r = rng(seed);

    // conv1d
    {
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "conv1d", 3, 4, 3, &mut r);
        let bias = conv.bias.expect("constructed with bias");
        *store.get_mut(bias) = Tensor::uniform(&[4], 1.0, &mut r);
        let input = store.weight("conv1d.input", Tensor::randn(&[2, 3, 7], &mut r));
        let proj = Tensor::randn(&[2, 4, 7], &mut r);
        s.check(
            "conv1d",
            &mut store,
            &[conv.weight, bias, input],
            |st| conv.forward(st, st.get(input))?.dot(&proj),
            |st| {
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = conv.backward(st, st.get(input), &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // batch norm, both modes
    for (component, train) in [("batchnorm_train", true), ("batchnorm_eval", false)] {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, component, 3);
        *store.get_mut(bn.gain) = Tensor::uniform(&[3], 2.0, &mut r);
        *store.get_mut(bn.bias) = Tensor::uniform(&[3], 2.0, &mut r);
        *store.get_mut(bn.running_mean) = Tensor::randn(&[3], &mut r);
        *store.get_mut(bn.running_var) = Tensor::uniform(&[3], 1.0, &mut r).map(|v| v.abs() + 0.5);
        let input = store.weight(format!("{component}.input"), Tensor::randn(&[3, 3, 5], &mut r));
        let proj = Tensor::randn(&[3, 3, 5], &mut r);
        let run = |st: &ParamStore| {
            let mut rr = rng(0);
            let mut ctx = if train { ForwardCtx::train(&mut rr) } else { ForwardCtx::eval() };
            bn.forward(st, st.get(input), &mut ctx)
        };
        s.check(
            component,
            &mut store,
            &[bn.gain, bn.bias, input],
            |st| run(st)?.0.dot(&proj),
            |st| {
                let (_, cache) = run(st)?;
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = bn.backward(st, &cache, &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // dense over the last axis of a rank-3 input
    {
        let mut store = ParamStore::new();
        let dense = Dense::new(&mut store, "dense", 6, 4, &mut r);
        *store.get_mut(dense.bias) = Tensor::uniform(&[4], 1.0, &mut r);
        let input = store.weight("dense.input", Tensor::randn(&[2, 3, 6], &mut r));
        let proj = Tensor::randn(&[2, 3, 4], &mut r);
        s.check(
            "dense",
            &mut store,
            &[dense.weight, dense.bias, input],
            |st| dense.forward(st, st.get(input))?.dot(&proj),
            |st| {
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = dense.backward(st, st.get(input), &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // parameter-free activations and dropout
    {
        let mut store = ParamStore::new();
        let input = store.weight("act.input", off_kink(&[4, 5], &mut r));
        let proj = Tensor::randn(&[4, 5], &mut r);
        s.check(
            "leaky_relu",
            &mut store,
            &[input],
            |st| leaky_relu(st.get(input), 0.1).dot(&proj),
            |st| {
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = leaky_relu_backward(st.get(input), &proj, 0.1)?;
                Ok(g)
            },
        )?;
        s.check(
            "silu",
            &mut store,
            &[input],
            |st| silu(st.get(input)).dot(&proj),
            |st| {
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = silu_backward(st.get(input), &proj)?;
                Ok(g)
            },
        )?;
        let run = |st: &ParamStore| {
            let mut rr = rng(1);
            dropout(st.get(input), 0.3, &mut ForwardCtx::train(&mut rr))
        };
        s.check(
            "dropout",
            &mut store,
            &[input],
            |st| run(st)?.0.dot(&proj),
            |st| {
                let (_, mask) = run(st)?;
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = dropout_backward(mask.as_ref(), &proj)?;
                Ok(g)
            },
        )?;
    }

    // conv block in train mode (conv, batch norm, leaky relu, dropout)
    {
        let mut store = ParamStore::new();
        let block = ConvBlock::new(&mut store, "conv_block", 2, 4, 0.1, &mut r);
        let input = store.weight("conv_block.input", Tensor::randn(&[3, 2, 6], &mut r));
        let proj = Tensor::randn(&[3, 4, 6], &mut r);
        let mut ids = store.weights_with_prefix("conv_block.");
        ids.retain(|&id| id != input);
        ids.push(input);
        let run = |st: &ParamStore| {
            let mut rr = rng(2);
            block.forward(st, st.get(input), &mut ForwardCtx::train(&mut rr))
        };
        s.check(
            "conv_block",
            &mut store,
            &ids,
            |st| run(st)?.0.dot(&proj),
            |st| {
                let (_, cache) = run(st)?;
                let mut g = Grads::zeros_like(st);
                *g.get_mut(input) = block.backward(st, &cache, &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // step embedding
    {
        let mut store = ParamStore::new();
        let emb = StepEmbedding::new(&mut store, "step_embedding", 8, 5, &mut r);
        let ks = [1, 17, 60];
        let proj = Tensor::randn(&[3, 8], &mut r);
        let ids = store.weights_with_prefix("step_embedding.");
        s.check(
            "step_embedding",
            &mut store,
            &ids,
            |st| emb.forward(st, &ks)?.0.dot(&proj),
            |st| {
                let (_, cache) = emb.forward(st, &ks)?;
                let mut g = Grads::zeros_like(st);
                emb.backward(st, &cache, &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // conditioning network and AR initializer
    {
        let mut store = ParamStore::new();
        let net = CondNet::new(&mut store, "cond_net", 2, 10, 4, 6, 2, 0.1, &mut r);
        let x = Tensor::randn(&[3, 2, 10], &mut r);
        let proj = Tensor::randn(&[3, 2, 4], &mut r);
        let ids = store.weights_with_prefix("cond_net.");
        let run = |st: &ParamStore| {
            let mut rr = rng(3);
            net.forward(st, &x, &mut ForwardCtx::train(&mut rr))
        };
        s.check(
            "cond_net",
            &mut store,
            &ids,
            |st| run(st)?.0.dot(&proj),
            |st| {
                let (_, cache) = run(st)?;
                let mut g = Grads::zeros_like(st);
                net.backward(st, &cache, &proj, &mut g)?;
                Ok(g)
            },
        )?;

        let ar = ArModel::new(&mut store, "ar_model", 2, 10, 4);
        *store.get_mut(ar.weight) = Tensor::randn(&[10, 2, 4], &mut r);
        s.check(
            "ar_model",
            &mut store,
            &[ar.weight, ar.bias],
            |st| ar.forward(st, &x)?.dot(&proj),
            |st| {
                let mut g = Grads::zeros_like(st);
                ar.backward(&x, &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // denoiser, including the gradient w.r.t. the condition
    {
        let mut store = ParamStore::new();
        let shape = DenoiserShape {
            embedding_hidden: 6,
            ..DenoiserShape::new(2, 6)
        };
        let den = Denoiser::new(&mut store, "denoiser", shape, &mut r)?;
        let xk = Tensor::randn(&[3, 2, 5], &mut r);
        let c = store.weight("denoiser.condition_input", Tensor::randn(&[3, 4, 5], &mut r));
        let ks = [3, 50, 100];
        let proj = Tensor::randn(&[3, 2, 5], &mut r);
        let ids = store.weights_with_prefix("denoiser.");
        let run = |st: &ParamStore| {
            let mut rr = rng(4);
            den.forward(st, &xk, &ks, st.get(c), &mut ForwardCtx::train(&mut rr))
        };
        s.check(
            "denoiser",
            &mut store,
            &ids,
            |st| run(st)?.0.dot(&proj),
            |st| {
                let (_, cache) = run(st)?;
                let mut g = Grads::zeros_like(st);
                *g.get_mut(c) = den.backward(st, &cache, &proj, &mut g)?;
                Ok(g)
            },
        )?;
    }

    // end-to-end objectives
    for (component, head, mixup) in [
        ("loss_data_head", Head::Data, MixupStrategy::Soft),
        ("loss_noise_head", Head::Noise, MixupStrategy::Soft),
    ] {
        let cfg = ModelConfig {
            width: 6,
            embedding_hidden: 6,
            head,
            mixup,
            ..ModelConfig::new(2, 10, 5)
        };
        let mut model = TimeDiff::with_rng(cfg, &mut r)?;
        let ar = model.net.ar.weight;
        *model.store.get_mut(ar) = Tensor::randn(model.store.get(ar).shape(), &mut r).scale(0.1);
        let x = Tensor::randn(&[3, 2, 10], &mut r);
        let y = Tensor::randn(&[3, 2, 5], &mut r);
        let draws = model.net.draw(3, &mut r)?;
        let net = model.net.clone();
        let ids = model.trainable_params();
        s.check(
            component,
            &mut model.store,
            &ids,
            |st| {
                let mut rr = rng(5);
                Ok(net.loss_forward(st, &x, &y, &draws, &mut ForwardCtx::train(&mut rr))?.loss)
            },
            |st| {
                let mut rr = rng(5);
                Ok(net.loss_and_grads(st, &x, &y, &draws, &mut ForwardCtx::train(&mut rr))?.1)
            },
        )?;
    }

    Ok(s.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_component_and_is_seeded() {
        let a = gradient_suite(1, 3).unwrap();
        let names: Vec<&str> = a.entries.iter().map(|e| e.component).collect();
        for want in [
            "conv1d",
            "batchnorm_train",
            "batchnorm_eval",
            "dense",
            "leaky_relu",
            "silu",
            "dropout",
            "conv_block",
            "step_embedding",
            "cond_net",
            "ar_model",
            "denoiser",
            "loss_data_head",
            "loss_noise_head",
        ] {
            assert!(names.contains(&want), "{want}");
        }
        let b = gradient_suite(1, 3).unwrap();
        assert_eq!(a.rows(), b.rows());
        assert!(a.passes(SUITE_TOLERANCE), "{:?}", a.rows());
    }
}
