//! Trains the four mixup/AR combinations on the same data and seed.

use diffcast::cli::{ablation_variants, run_variant, RunConfig, Suite};

fn main() -> diffcast::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let base = RunConfig {
        width: 32,
        embedding_hidden: 32,
        max_epochs: epochs,
        eval_stride: 8,
        valid_steps: 20,
        ..RunConfig::default()
    };
    let splits = base.load_splits()?;
    for (name, cfg) in ablation_variants(&base, Suite::Conditioning) {
        println!("{name:<12} test MSE {:.5}", run_variant(&cfg, &splits)?);
    }
    Ok(())
}
