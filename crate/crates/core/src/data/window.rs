use crate::error::{Error, Result};
use crate::nn::Tensor;

/// One forecasting instance: a `d × L` lookback followed by a `d × H` target.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    pub lookback: Tensor,
    pub target: Tensor,
    /// Index of the first lookback row in the source split.
    pub origin: usize,
}

impl SeriesWindow {
    pub fn new(lookback: Tensor, target: Tensor, origin: usize) -> Result<Self> {
        match (lookback.shape(), target.shape()) {
            ([d, l], [d2, h]) if d == d2 && *l > 0 && *h > 0 => Ok(Self {
                lookback,
                target,
                origin,
            }),
            _ => Err(Error::shape("series_window", lookback.shape(), target.shape())),
        }
    }

    pub fn variables(&self) -> usize {
        self.lookback.dim(0)
    }

    pub fn lookback_len(&self) -> usize {
        self.lookback.dim(1)
    }

    pub fn horizon(&self) -> usize {
        self.target.dim(1)
    }
}

/// Stacks lookbacks and targets of a batch into `[B, d, L]` and `[B, d, H]`.
pub fn stack_windows(windows: &[&SeriesWindow]) -> Result<(Tensor, Tensor)> {
    let lookbacks: Vec<Tensor> = windows.iter().map(|w| w.lookback.clone()).collect();
    let targets: Vec<Tensor> = windows.iter().map(|w| w.target.clone()).collect();
    Ok((Tensor::stack(&lookbacks)?, Tensor::stack(&targets)?))
}
