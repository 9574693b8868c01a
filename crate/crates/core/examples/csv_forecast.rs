//! Round trip through files: write a CSV, train from it, save and reload
//! the checkpoint, and forecast from the file's last lookback rows.

use diffcast::cli::{cmd_predict, cmd_synth, cmd_train, RunConfig};
use diffcast::data::load_csv;

fn main() -> diffcast::Result<()> {
    let dir = std::env::temp_dir().join("diffcast_csv_forecast");
    let mut cfg = RunConfig {
        synth_n: 800,
        lookback: 48,
        horizon: 12,
        width: 16,
        embedding_hidden: 16,
        max_epochs: 5,
        eval_stride: 4,
        valid_steps: 10,
        out_dir: dir.clone(),
        ..RunConfig::default()
    };
    let csv = cmd_synth(&cfg)?;
    println!("series written to {}", csv.display());

    cfg.dataset_path = Some(csv.clone());
    let report = cmd_train(&cfg)?;
    println!("checkpoint {} (best epoch {})", report.checkpoint_path.display(), report.best_epoch);

    let forecast = cmd_predict(&report.checkpoint_path, &csv, 10, Some(20), 0, &dir)?;
    let f = load_csv(&forecast)?;
    println!("forecast {} x {} written to {}", f.len(), f.variables(), forecast.display());
    for t in 0..f.len() {
        let row: Vec<String> = f.columns.iter().map(|c| format!("{:+.3}", c[t])).collect();
        println!("  h={:>2}  {}", t + 1, row.join("  "));
    }
    Ok(())
}
