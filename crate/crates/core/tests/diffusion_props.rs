use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenestyle::diffusion::{
    default_schedule, forward_sample, forward_step, make_schedule, sample, training_loss, BlendMask, Latent,
    PointMassPredictor, ZeroPredictor,
};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

proptest! {
    #[test]
    fn cumulative_alpha_strictly_decreases(steps in 1usize..400, lo in 1e-5..0.2f64, span in 0.0..0.7f64) {
        let s = make_schedule(steps, lo, lo + span).unwrap();
        let ab = s.alpha_bars();
        prop_assert_eq!(ab.len(), steps);
        prop_assert!(ab[0] < 1.0 && ab[steps - 1] > 0.0);
        for w in ab.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        for t in 1..=steps {
            prop_assert!((s.alpha_bar(t) - (1..=t).map(|k| 1.0 - s.beta(k)).product::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn known_region_is_bit_exact(seed in any::<u64>(), bits in prop::collection::vec(0u8..2, 48), known in prop::collection::vec(-3.0..3.0f64, 48)) {
        let s = default_schedule();
        let mask = BlendMask::new(bits.clone(), vec![6, 8]).unwrap();
        let known = Latent::new(known, vec![6, 8]).unwrap();
        let out = sample(&ZeroPredictor, &s, &[6, 8], &mut ChaCha8Rng::seed_from_u64(seed), Some((&mask, &known))).unwrap();
        for i in 0..48 {
            if bits[i] == 0 {
                prop_assert_eq!(out.data[i].to_bits(), known.data[i].to_bits());
            }
        }
    }

    #[test]
    fn all_ones_mask_is_plain_sampling(seed in any::<u64>()) {
        let s = make_schedule(20, 1e-3, 0.2).unwrap();
        let p = PointMassPredictor::constant(0.3, &s);
        let known = Latent::zeros(&[10]);
        let ones = BlendMask::filled(true, &[10]);
        let a = sample(&p, &s, &[10], &mut ChaCha8Rng::seed_from_u64(seed), Some((&ones, &known))).unwrap();
        let b = sample(&p, &s, &[10], &mut ChaCha8Rng::seed_from_u64(seed), None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_predictor_has_zero_loss(t in 1usize..=50, c in -2.0..2.0f64, eps in prop::collection::vec(-3.0..3.0f64, 16)) {
        let s = default_schedule();
        let z0 = Latent::from_vec(vec![c; 16]);
        let loss = training_loss(&PointMassPredictor::constant(c, &s), &z0, t, &Latent::from_vec(eps), &s).unwrap();
        prop_assert!(loss < 1e-9, "loss {loss}");
    }
}

#[test]
fn stepwise_chain_matches_closed_form_moments() {
    let s = default_schedule();
    let n = 100_000;
    let z0 = Latent::from_vec(vec![1.5; n]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut z = z0.clone();
    for t in 1..=s.steps() {
        z = forward_step(&z, t, &s, &mut rng).unwrap();
        if [1, 10, 25, 50].contains(&t) {
            let (mean, var) = moments(&z.data);
            let ab = s.alpha_bar(t);
            assert!((mean - ab.sqrt() * 1.5).abs() < 0.02, "t={t} mean {mean}");
            assert!((var - (1.0 - ab)).abs() < 0.02, "t={t} var {var}");
        }
    }
    // one-shot sampling at the last step agrees with the chain
    let eps = Latent::standard_normal(&[n], &mut rng);
    let direct = forward_sample(&z0, s.steps(), &eps, &s).unwrap();
    let (m1, v1) = moments(&direct.data);
    let (m2, v2) = moments(&z.data);
    assert!((m1 - m2).abs() < 0.02 && (v1 - v2).abs() < 0.02);
}

#[test]
fn point_mass_chain_lands_on_the_target() {
    let s = default_schedule();
    let target = -0.4;
    let p = PointMassPredictor::constant(target, &s);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let worst = (0..1000)
        .map(|_| (sample(&p, &s, &[1], &mut rng, None).unwrap().data[0] - target).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "worst {worst}");
}
