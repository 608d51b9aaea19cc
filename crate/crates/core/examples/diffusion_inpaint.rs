//! Masked sampling with an analytic predictor: the left half of a 1-D
//! signal is known, the right half is generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenestyle::diffusion::{default_schedule, sample, BlendMask, Latent, PointMassPredictor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = default_schedule();
    let n = 16;
    let known = Latent::from_vec((0..n).map(|i| if i < n / 2 { -0.5 } else { 0.0 }).collect());
    let mask = BlendMask::new((0..n).map(|i| u8::from(i >= n / 2)).collect(), vec![n])?;
    // every generated element should head for 0.8
    let predictor = PointMassPredictor::constant(0.8, &schedule);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z0 = sample(&predictor, &schedule, &[n], &mut rng, Some((&mask, &known)))?;
    println!("steps: {}", schedule.steps());
    for (i, v) in z0.data.iter().enumerate() {
        let region = if mask.generates(i) { "generated" } else { "known" };
        println!("{i:2} {region:9} {v:+.4}");
    }
    Ok(())
}
