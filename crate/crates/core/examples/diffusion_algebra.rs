//! Forward noising, exact recovery, and ancestral sampling with an oracle
//! denoiser on the full chain and on a 20-step strided path.

use diffcast::nn::Tensor;
use diffcast::pipeline::{ancestral_sample, sampling_path, Head, NoiseMode};
use diffcast::schedule::DiffusionSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffcast::Result<()> {
    let sched = DiffusionSchedule::cosine(100, 1e-4, 0.1)?;
    println!("beta_1 = {}, beta_100 = {}", sched.beta(1), sched.beta(100));
    for k in [1, 25, 50, 75, 100] {
        println!("k = {k:>3}  abar = {:.6}  sigma = {:.6}", sched.alpha_bar(k), sched.sigma(k));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = Tensor::from_fn(&[1, 2, 24], |i| (i as f64 * 0.3).sin());
    let eps = Tensor::randn(x0.shape(), &mut rng);
    let x50 = sched.forward_sample(&x0, 50, &eps)?;
    let back = sched.recover_x0(&x50, 50, &eps)?;
    let err = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("recover_x0 round trip at k = 50: {err:.1e}");

    for steps in [100, 20] {
        let path = sampling_path(&sched, steps)?;
        let (x, evals) = ancestral_sample(&sched, Head::Data, &path, x0.shape(), NoiseMode::Stochastic, &mut rng, |_, _| {
            Ok(x0.clone())
        })?;
        let err = x.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("oracle sampler, {steps} steps: {evals} network calls, max error {err:.1e}");
    }
    Ok(())
}
