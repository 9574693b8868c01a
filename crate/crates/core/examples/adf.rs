//! ADF statistics for a stationary, a trending and a unit-root series.

use diffcast::data::{adf_statistic, synth_generate, SynthKind, DEFAULT_ADF_LAGS};

fn main() -> diffcast::Result<()> {
    for kind in [SynthKind::SineMix, SynthKind::TrendSine, SynthKind::RandomWalk] {
        let series = synth_generate(kind, 1, 1000, 0.3, 1)?;
        let stat = adf_statistic(&series.columns[0], DEFAULT_ADF_LAGS)?;
        println!("{kind:?}: {stat:.3}");
    }
    Ok(())
}
