use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};

/// Periods of the two sinusoids in `sine_mix`; the composite period is 120.
pub const SINE_MIX_PERIODS: (f64, f64) = (24.0, 60.0);
pub const SINE_MIX_PERIOD: usize = 120;
pub const TREND_SINE_PERIOD: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Two sinusoids with distinct periods plus Gaussian noise.
    SineMix,
    /// Linear trend plus a sinusoid plus Gaussian noise.
    TrendSine,
    /// Cumulative sum of Gaussian steps with standard deviation `noise_std`.
    RandomWalk,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine_mix" => Ok(SynthKind::SineMix),
            "trend_sine" => Ok(SynthKind::TrendSine),
            "random_walk" => Ok(SynthKind::RandomWalk),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

/// Deterministic synthetic series. Random draws are taken row by row
/// (time-major, then variable) from a ChaCha8 stream seeded with `seed`.
pub fn synth_generate(kind: SynthKind, d: usize, n: usize, noise_std: f64, seed: u64) -> Result<RawSeries> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("synthetic series needs n >= 1 and d >= 1".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = vec![Vec::with_capacity(n); d];
    let (p1, p2) = SINE_MIX_PERIODS;
    for t in 0..n {
        let tf = t as f64;
        for (v, col) in columns.iter_mut().enumerate() {
            let phase = v as f64 * PI / 3.0;
            let z: f64 = rng.sample(StandardNormal);
            let x = match kind {
                SynthKind::SineMix => {
                    (2.0 * PI * tf / p1 + phase).sin() + 0.5 * (2.0 * PI * tf / p2 + 2.0 * phase).sin() + noise_std * z
                }
                SynthKind::TrendSine => {
                    0.002 * (v + 1) as f64 * tf + (2.0 * PI * tf / TREND_SINE_PERIOD + phase).sin() + noise_std * z
                }
                SynthKind::RandomWalk => col.last().copied().unwrap_or(0.0) + noise_std * z,
            };
            col.push(x);
        }
    }
    RawSeries::new((0..d).map(|v| format!("x{v}")).collect(), columns)
}
