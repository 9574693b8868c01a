//! Dataset ingestion, splitting, windowing, synthetic series and the ADF
//! stationarity statistic.

mod adf;
mod series;
mod synth;
mod window;

pub use adf::{adf_design, adf_statistic, DEFAULT_ADF_LAGS};
pub use series::{
    chronological_split, load_csv, sliding_windows, univariate_extract, write_csv, RawSeries,
    Splits, UnivariateMode,
};
pub use synth::{synth_generate, SynthKind, SINE_MIX_PERIOD, SINE_MIX_PERIODS};
pub use window::{stack_windows, SeriesWindow};
