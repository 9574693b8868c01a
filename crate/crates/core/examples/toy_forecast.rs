//! Trains a small model on a synthetic two-variable series and reports the
//! test MSE with 10 averaged samples. Pass an epoch count to change the budget.

use diffcast::data::{chronological_split, sliding_windows, synth_generate, SynthKind};
use diffcast::pipeline::{evaluate_windows, train_loop_observed, EvalOptions, ModelConfig, Scale, TrainConfig};

fn main() -> diffcast::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(15);
    let series = synth_generate(SynthKind::SineMix, 2, 2000, 0.1, 0)?;
    let splits = chronological_split(&series, [6, 2, 2], 96 + 24)?;

    let mut model = ModelConfig::new(2, 96, 24);
    model.width = 32;
    model.embedding_hidden = 32;
    let train = TrainConfig {
        max_epochs: epochs,
        eval_stride: 8,
        valid_steps: 20,
        ..TrainConfig::default()
    };
    let outcome = train_loop_observed(&model, &train, &splits, |r| {
        println!("epoch {:>3}  train {:.5}  valid {:.5}", r.epoch, r.train_loss, r.valid_mse);
    })?;
    println!("best epoch {}", outcome.best_epoch);

    let windows = sliding_windows(&splits.test, 96, 24, 8)?;
    let eval = evaluate_windows(&outcome.model, &windows, &EvalOptions::new(10, 100, 0), Scale::Raw)?;
    println!("test MSE {:.5} over {} windows", eval.mse, windows.len());
    Ok(())
}
