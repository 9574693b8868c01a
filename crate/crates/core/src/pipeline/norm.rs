use crate::data::SeriesWindow;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Lower bound applied to every per-variable standard deviation.
pub const STD_FLOOR: f64 = 1e-5;

/// Per-variable location and scale taken from a lookback window only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics of a `[d, L]` lookback.
    pub fn from_lookback(lookback: &Tensor) -> Result<Self> {
        if lookback.shape().len() != 2 || lookback.dim(1) == 0 {
            return Err(Error::shape("norm_stats", &[lookback.dim(0), 1], lookback.shape()));
        }
        let l = lookback.dim(1);
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for row in lookback.data().chunks(l) {
            let m = row.iter().sum::<f64>() / l as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / l as f64;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    pub fn variables(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` row-wise on a `[d, T]` tensor.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.rowwise(x, |v, m, s| (v - m) / s)
    }

    /// `x * std + mean` row-wise on a `[d, T]` tensor.
    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.rowwise(x, |v, m, s| v * s + m)
    }

    fn rowwise(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let d = self.variables();
        if x.shape().len() != 2 || x.dim(0) != d {
            return Err(Error::shape("instance_norm", &[d, 0], x.shape()));
        }
        let t = x.dim(1);
        let mut out = x.clone();
        for (i, row) in out.data_mut().chunks_mut(t.max(1)).enumerate() {
            for v in row {
                *v = f(*v, self.mean[i], self.std[i]);
            }
        }
        Ok(out)
    }
}

/// Standardizes both halves of a window with statistics of its lookback.
pub fn instance_normalize(window: &SeriesWindow) -> Result<(SeriesWindow, NormStats)> {
    let stats = NormStats::from_lookback(&window.lookback)?;
    let w = SeriesWindow::new(
        stats.apply(&window.lookback)?,
        stats.apply(&window.target)?,
        window.origin,
    )?;
    Ok((w, stats))
}

pub fn denormalize(window: &SeriesWindow, stats: &NormStats) -> Result<SeriesWindow> {
    SeriesWindow::new(stats.invert(&window.lookback)?, stats.invert(&window.target)?, window.origin)
}

/// Normalizes a `[B, d, L]` batch of lookbacks; one set of statistics per row.
pub fn normalize_lookbacks(batch: &Tensor) -> Result<(Tensor, Vec<NormStats>)> {
    if batch.shape().len() != 3 {
        return Err(Error::shape("normalize_lookbacks", &[0, 0, 0], batch.shape()));
    }
    let mut items = Vec::with_capacity(batch.dim(0));
    let mut stats = Vec::with_capacity(batch.dim(0));
    for i in 0..batch.dim(0) {
        let x = batch.index(i);
        let s = NormStats::from_lookback(&x)?;
        items.push(s.apply(&x)?);
        stats.push(s);
    }
    Ok((Tensor::stack(&items)?, stats))
}

/// Inverts [`normalize_lookbacks`] on a `[B, d, T]` batch.
pub fn denormalize_batch(batch: &Tensor, stats: &[NormStats]) -> Result<Tensor> {
    if batch.shape().len() != 3 || batch.dim(0) != stats.len() {
        return Err(Error::shape("denormalize_batch", &[stats.len(), 0, 0], batch.shape()));
    }
    let items = stats
        .iter()
        .enumerate()
        .map(|(i, s)| s.invert(&batch.index(i)))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn window(lookback: Vec<f64>, target: Vec<f64>, d: usize) -> SeriesWindow {
        let l = lookback.len() / d;
        let h = target.len() / d;
        SeriesWindow::new(
            Tensor::new(&[d, l], lookback).unwrap(),
            Tensor::new(&[d, h], target).unwrap(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn three_point_lookback() {
        let (w, s) = instance_normalize(&window(vec![1.0, 2.0, 3.0], vec![4.0], 1)).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in w.lookback.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((w.target.data()[0] - 2.0 / s.std[0]).abs() < 1e-12);
    }

    #[test]
    fn constant_lookback_hits_the_floor() {
        let (w, s) = instance_normalize(&window(vec![5.0; 4], vec![5.0, 6.0], 1)).unwrap();
        assert_eq!(s.std, vec![STD_FLOOR]);
        assert!(w.lookback.data().iter().all(|&v| v == 0.0));
        assert!(w.target.data()[1] > 0.0 && w.target.is_finite());
    }

    #[test]
    fn target_does_not_affect_statistics() {
        let (_, a) = instance_normalize(&window(vec![1.0, 4.0, 2.0], vec![0.0], 1)).unwrap();
        let (_, b) = instance_normalize(&window(vec![1.0, 4.0, 2.0], vec![1e6], 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_matches_single() {
        let x = Tensor::from_fn(&[3, 2, 5], |i| ((i * 7) % 11) as f64);
        let (n, stats) = normalize_lookbacks(&x).unwrap();
        for i in 0..3 {
            let s = NormStats::from_lookback(&x.index(i)).unwrap();
            assert_eq!(s, stats[i]);
            assert_eq!(n.index(i), s.apply(&x.index(i)).unwrap());
        }
        assert!(denormalize_batch(&n, &stats).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 2 * 7), d in 1usize..=2) {
            let l = if d == 1 { 10 } else { 5 };
            let lookback = vals[..d * l].to_vec();
            let target = vals[d * l..d * l + d * 2].to_vec();
            let w = window(lookback, target, d);
            let (n, s) = instance_normalize(&w).unwrap();
            let back = denormalize(&n, &s).unwrap();
            prop_assert!(back.lookback.max_abs_diff(&w.lookback).unwrap() < 1e-12);
            prop_assert!(back.target.max_abs_diff(&w.target).unwrap() < 1e-12);
        }
    }
}
