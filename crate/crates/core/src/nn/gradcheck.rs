//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamId, ParamStore};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `grad` against central differences of `loss` at `probes`
/// seeded random coordinates of every tensor in `targets`.
///
/// `loss` must be a deterministic function of the store (any dropout masks
/// must be regenerated from a fixed seed on every call).
pub fn finite_diff_check<L, G>(
    store: &mut ParamStore,
    targets: &[ParamId],
    loss: L,
    grad: G,
    probes: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore) -> Result<f64>,
    G: Fn(&ParamStore) -> Result<Grads>,
{
    let analytic = grad(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(targets.len());
    for &id in targets {
        let n = store.get(id).len();
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let j = rng.random_range(0..n);
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + step;
            let up = loss(store)?;
            store.get_mut(id).data_mut()[j] = orig - step;
            let down = loss(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic.get(id).data()[j], numeric));
        }
        groups.push(GroupError {
            name: store.name(id).to_string(),
            probes,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { groups })
}
