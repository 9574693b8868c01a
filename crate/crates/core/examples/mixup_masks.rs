//! Draws soft, hard and segment mixing masks and blends a network output
//! with the ground truth.

use diffcast::conditioning::{future_mixup_train, sample_mask, MixupStrategy};
use diffcast::nn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffcast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [1, 1, 48];
    for strategy in [
        MixupStrategy::Soft,
        MixupStrategy::Hard { tau: 0.5 },
        MixupStrategy::Segment { tau: 0.5 },
        MixupStrategy::Segment { tau: 0.9 },
    ] {
        let mask = sample_mask(strategy, &shape, &mut rng)?;
        let row: String = mask
            .values
            .data()
            .iter()
            .map(|&m| match m {
                m if m >= 0.75 => '#',
                m if m >= 0.5 => '+',
                m if m >= 0.25 => '-',
                _ => '.',
            })
            .collect();
        let mean = mask.values.data().iter().sum::<f64>() / 48.0;
        println!("{:<14} {row}  mean {mean:.2}", strategy.label());
    }

    let output = Tensor::full(&shape, 1.0);
    let truth = Tensor::zeros(&shape);
    let mask = sample_mask(MixupStrategy::Soft, &shape, &mut rng)?;
    let mixed = future_mixup_train(&output, &truth, &mask)?;
    // output 1 and truth 0 make the blend equal to the mask itself
    assert_eq!(mixed.data(), mask.values.data());
    println!("blend of ones with zeros reproduces the mask");
    Ok(())
}
