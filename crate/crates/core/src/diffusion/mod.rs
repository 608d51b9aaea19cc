//! Pixel-space denoising diffusion: noise schedules, the forward process,
//! the ancestral reverse sampler, the noise-prediction loss and the masked
//! inpainting sampler that keeps a known region fixed while generating the
//! rest.
//!
//! Steps are 1-based (`t` in `1..=T`); `alpha_bar(0) == 1` so `t = 0` is the
//! clean signal. The reverse variance is `sigma_t^2 = beta_t`.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask is not binary at element {0}")]
    NonBinaryMask(usize),
    #[error("step {t} outside 1..={steps}")]
    InvalidStep { t: usize, steps: usize },
}

/// beta, alpha and cumulative alpha tables for steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::InvalidRange("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::InvalidRange(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas; 1 at `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::InvalidStep { t, steps: self.steps() });
        }
        Ok(())
    }
}

/// Linearly spaced betas from `beta_start` (t = 1) to `beta_end` (t = T).
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidRange("T must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidRange(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let betas = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// The schedule used throughout the tests and the toy backend: T = 50,
/// beta linear from 1e-4 to 0.1.
pub fn default_schedule() -> NoiseSchedule {
    make_schedule(50, 1e-4, 0.1).expect("valid default schedule")
}

/// Flat real-valued array with a shape tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Latent {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, DiffusionError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DiffusionError::ShapeMismatch(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Latent { data, shape })
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Latent { data, shape: vec![n] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Latent { data: vec![0.0; shape.iter().product()], shape: shape.to_vec() }
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        Latent { data: (0..n).map(|_| rng.sample(StandardNormal)).collect(), shape: shape.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Latent, what: &str) -> Result<(), DiffusionError> {
        if self.shape != other.shape {
            return Err(DiffusionError::ShapeMismatch(format!("{what}: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Sample at a given step of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub z: Latent,
    pub t: usize,
}

/// Estimates the noise that was mixed into `z` at step `t`.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, z: &Latent, t: usize) -> Latent;
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, z: &Latent, _t: usize) -> Latent {
        Latent::zeros(&z.shape)
    }
}

/// Exact noise predictor for data concentrated on a single point `z0*`:
/// `eps = (z_t - sqrt(abar_t) z0*) / sqrt(1 - abar_t)`.
#[derive(Debug, Clone)]
pub struct PointMassPredictor {
    target: PointTarget,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone)]
enum PointTarget {
    Constant(f64),
    Field(Vec<f64>),
}

impl PointMassPredictor {
    pub fn new(target: Latent, schedule: &NoiseSchedule) -> Self {
        PointMassPredictor { target: PointTarget::Field(target.data), alpha_bars: schedule.alpha_bars().to_vec() }
    }

    /// Every element of the data point equals `value`; works for any shape.
    pub fn constant(value: f64, schedule: &NoiseSchedule) -> Self {
        PointMassPredictor { target: PointTarget::Constant(value), alpha_bars: schedule.alpha_bars().to_vec() }
    }

    fn target_at(&self, i: usize) -> f64 {
        match &self.target {
            PointTarget::Constant(v) => *v,
            PointTarget::Field(f) => f[i],
        }
    }
}

impl NoisePredictor for PointMassPredictor {
    fn predict(&self, z: &Latent, t: usize) -> Latent {
        let ab = if t == 0 { 1.0 } else { self.alpha_bars[t - 1] };
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = z
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| if sn > 0.0 { (v - sa * self.target_at(i)) / sn } else { 0.0 })
            .collect();
        Latent { data, shape: z.shape.clone() }
    }
}

/// Binary generation mask: 1 = generate, 0 = keep the known value.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    values: Vec<u8>,
    pub shape: Vec<usize>,
}

impl BlendMask {
    pub fn new(values: Vec<u8>, shape: Vec<usize>) -> Result<Self, DiffusionError> {
        if let Some(i) = values.iter().position(|v| *v > 1) {
            return Err(DiffusionError::NonBinaryMask(i));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(DiffusionError::ShapeMismatch(format!("mask shape {shape:?} vs {} values", values.len())));
        }
        Ok(BlendMask { values, shape })
    }

    /// Accepts 0.0 / 1.0 only.
    pub fn from_f64(values: &[f64], shape: Vec<usize>) -> Result<Self, DiffusionError> {
        let v = values
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if *x == 0.0 {
                    Ok(0u8)
                } else if *x == 1.0 {
                    Ok(1u8)
                } else {
                    Err(DiffusionError::NonBinaryMask(i))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(v, shape)
    }

    pub fn filled(value: bool, shape: &[usize]) -> Self {
        BlendMask { values: vec![value as u8; shape.iter().product()], shape: shape.to_vec() }
    }

    pub fn generates(&self, i: usize) -> bool {
        self.values[i] == 1
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

/// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`, with `t = 0` the identity.
pub fn forward_sample(z0: &Latent, t: usize, eps: &Latent, schedule: &NoiseSchedule) -> Result<Latent, DiffusionError> {
    z0.same_shape(eps, "z0 vs eps")?;
    if t > schedule.steps() {
        return Err(DiffusionError::InvalidStep { t, steps: schedule.steps() });
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data.iter().zip(&eps.data).map(|(z, e)| sa * z + sn * e).collect();
    Ok(Latent { data, shape: z0.shape.clone() })
}

/// One Markov transition `q(z_t | z_{t-1})`.
pub fn forward_step<R: Rng + ?Sized>(z_prev: &Latent, t: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Latent, DiffusionError> {
    schedule.check_step(t)?;
    Ok(forward_step_with_beta(z_prev, schedule.beta(t), rng))
}

/// `sqrt(1 - beta) z + sqrt(beta) g` for an arbitrary `beta` in [0, 1].
pub fn forward_step_with_beta<R: Rng + ?Sized>(z_prev: &Latent, beta: f64, rng: &mut R) -> Latent {
    let (keep, noise) = ((1.0 - beta).sqrt(), beta.sqrt());
    let data = z_prev
        .data
        .iter()
        .map(|z| {
            let g: f64 = rng.sample(StandardNormal);
            keep * z + noise * g
        })
        .collect();
    Latent { data, shape: z_prev.shape.clone() }
}

fn posterior_mean(z_t: &Latent, eps_hat: &Latent, t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    z_t.same_shape(eps_hat, "predictor output")?;
    let beta = schedule.beta(t);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    Ok(z_t.data.iter().zip(&eps_hat.data).map(|(z, e)| inv_sqrt_alpha * (z - coef * e)).collect())
}

/// Ancestral step `z_t -> z_{t-1}`. No noise is drawn at `t = 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    z_t: &Latent,
    t: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Latent, DiffusionError> {
    schedule.check_step(t)?;
    let eps_hat = predictor.predict(z_t, t);
    let mut mean = posterior_mean(z_t, &eps_hat, t, schedule)?;
    if t > 1 {
        let sigma = schedule.beta(t).sqrt();
        for m in &mut mean {
            let g: f64 = rng.sample(StandardNormal);
            *m += sigma * g;
        }
    }
    Ok(Latent { data: mean, shape: z_t.shape.clone() })
}

/// `|| eps - eps_theta(sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t) ||_2`.
pub fn training_loss(
    predictor: &dyn NoisePredictor,
    z0: &Latent,
    t: usize,
    eps: &Latent,
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    schedule.check_step(t)?;
    let z_t = forward_sample(z0, t, eps, schedule)?;
    let eps_hat = predictor.predict(&z_t, t);
    eps.same_shape(&eps_hat, "predictor output")?;
    Ok(eps.data.iter().zip(&eps_hat.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Reverse step followed by the mask blend: generated values where the mask
/// is 1, the known signal re-noised to level `t - 1` where it is 0.
///
/// Fresh noise for the known region is drawn only for mask-0 elements, after
/// the reverse step's own draws, so an all-ones mask consumes exactly the
/// same random stream as [`reverse_step`].
#[allow(clippy::too_many_arguments)]
pub fn masked_reverse_step<R: Rng + ?Sized>(
    z_t: &Latent,
    t: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    mask: &BlendMask,
    known_z0: &Latent,
    rng: &mut R,
) -> Result<Latent, DiffusionError> {
    if mask.shape != z_t.shape {
        return Err(DiffusionError::ShapeMismatch(format!("mask {:?} vs z {:?}", mask.shape, z_t.shape)));
    }
    z_t.same_shape(known_z0, "known_z0")?;
    let generated = reverse_step(z_t, t, predictor, schedule, rng)?;
    let level = t - 1;
    let ab = schedule.alpha_bar(level);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = generated
        .data
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if mask.generates(i) {
                *g
            } else if level == 0 {
                known_z0.data[i]
            } else {
                let e: f64 = rng.sample(StandardNormal);
                sa * known_z0.data[i] + sn * e
            }
        })
        .collect();
    Ok(Latent { data, shape: z_t.shape.clone() })
}

/// Runs the full chain from standard-normal `z_T` down to `z_0`, calling
/// `observe` after every step (including the initial state).
pub fn sample_with<R: Rng + ?Sized>(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    shape: &[usize],
    rng: &mut R,
    inpaint: Option<(&BlendMask, &Latent)>,
    mut observe: impl FnMut(&DiffusionState),
) -> Result<Latent, DiffusionError> {
    let mut state = DiffusionState { z: Latent::standard_normal(shape, rng), t: schedule.steps() };
    observe(&state);
    while state.t > 0 {
        let t = state.t;
        let z = match inpaint {
            Some((mask, known)) => masked_reverse_step(&state.z, t, predictor, schedule, mask, known, rng)?,
            None => reverse_step(&state.z, t, predictor, schedule, rng)?,
        };
        state = DiffusionState { z, t: t - 1 };
        observe(&state);
    }
    Ok(state.z)
}

pub fn sample<R: Rng + ?Sized>(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    shape: &[usize],
    rng: &mut R,
    inpaint: Option<(&BlendMask, &Latent)>,
) -> Result<Latent, DiffusionError> {
    sample_with(predictor, schedule, shape, rng, inpaint, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_step_schedule_by_hand() {
        // abar = (0.5, 0.5 * 0.5)
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alphas(), &[0.5, 0.5]);
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha_bars(), &[0.9]);
    }

    #[test]
    fn schedule_errors() {
        assert!(matches!(make_schedule(10, 0.1, 1.0), Err(DiffusionError::InvalidRange(_))));
        assert!(matches!(make_schedule(10, 0.0, 0.5), Err(DiffusionError::InvalidRange(_))));
        assert!(matches!(make_schedule(10, 0.3, 0.2), Err(DiffusionError::InvalidRange(_))));
        assert!(matches!(make_schedule(0, 0.1, 0.2), Err(DiffusionError::InvalidRange(_))));
    }

    #[test]
    fn forward_sample_by_hand() {
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        let z0 = Latent::from_vec(vec![1.0, 1.0]);
        let eps = Latent::from_vec(vec![0.0, 0.0]);
        // abar_2 = 0.25 -> sqrt = 0.5
        assert_eq!(forward_sample(&z0, 2, &eps, &s).unwrap().data, vec![0.5, 0.5]);
        // t = 0 is the identity
        let eps = Latent::from_vec(vec![3.0, -2.0]);
        assert_eq!(forward_sample(&z0, 0, &eps, &s).unwrap().data, z0.data);
        // zero signal leaves only the noise term
        let zero = Latent::zeros(&[2]);
        let out = forward_sample(&zero, 1, &eps, &s).unwrap();
        assert_eq!(out.data, vec![0.5f64.sqrt() * 3.0, 0.5f64.sqrt() * -2.0]);
    }

    #[test]
    fn shape_mismatch() {
        let s = default_schedule();
        let a = Latent::zeros(&[2]);
        let b = Latent::zeros(&[3]);
        assert!(matches!(forward_sample(&a, 1, &b, &s), Err(DiffusionError::ShapeMismatch(_))));
        assert!(matches!(training_loss(&ZeroPredictor, &a, 1, &b, &s), Err(DiffusionError::ShapeMismatch(_))));
    }

    #[test]
    fn degenerate_forward_step() {
        let z = Latent::from_vec(vec![1.5, -2.0, 0.25]);
        assert_eq!(forward_step_with_beta(&z, 0.0, &mut rng(1)).data, z.data);
    }

    #[test]
    fn zero_predictor_mean() {
        let s = default_schedule();
        let z = Latent::from_vec(vec![1.0, -3.0]);
        let out = reverse_step(&z, 1, &ZeroPredictor, &s, &mut rng(0)).unwrap();
        let a = s.alpha(1).sqrt();
        assert_eq!(out.data, vec![1.0 / a, -3.0 / a]);
    }

    #[test]
    fn final_step_draws_no_noise() {
        let s = default_schedule();
        let z = Latent::from_vec(vec![0.3, 0.7]);
        let p = PointMassPredictor::constant(3.0, &s);
        let a = reverse_step(&z, 1, &p, &s, &mut rng(1)).unwrap();
        let b = reverse_step(&z, 1, &p, &s, &mut rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_examples() {
        let s = default_schedule();
        let z0 = Latent::from_vec(vec![0.0, 0.0]);
        let eps = Latent::from_vec(vec![3.0, 4.0]);
        assert_eq!(training_loss(&ZeroPredictor, &z0, 7, &eps, &s).unwrap(), 5.0);

        let target = Latent::from_vec(vec![3.0, -1.0]);
        let oracle = PointMassPredictor::new(target.clone(), &s);
        let l = training_loss(&oracle, &target, 20, &eps, &s).unwrap();
        assert!(l < 1e-12, "{l}");
    }

    #[test]
    fn blend_by_hand() {
        // z_hat = [2, 2] from a reverse step, known region at t-1 = 0 is [0, 0]
        struct Fixed;
        impl NoisePredictor for Fixed {
            fn predict(&self, z: &Latent, _t: usize) -> Latent {
                Latent::zeros(&z.shape)
            }
        }
        let s = make_schedule(1, 0.19, 0.19).unwrap();
        // 1/sqrt(0.81) * 1.8 = 2
        let z = Latent::from_vec(vec![1.8, 1.8]);
        let mask = BlendMask::new(vec![1, 0], vec![2]).unwrap();
        let known = Latent::from_vec(vec![0.0, 0.0]);
        let out = masked_reverse_step(&z, 1, &Fixed, &s, &mask, &known, &mut rng(0)).unwrap();
        assert!((out.data[0] - 2.0).abs() < 1e-12);
        assert_eq!(out.data[1], 0.0);
    }

    #[test]
    fn non_binary_mask() {
        assert!(matches!(BlendMask::new(vec![0, 2], vec![2]), Err(DiffusionError::NonBinaryMask(1))));
        assert!(matches!(BlendMask::from_f64(&[0.0, 0.5], vec![2]), Err(DiffusionError::NonBinaryMask(1))));
    }

    #[test]
    fn all_ones_mask_matches_plain_step() {
        let s = default_schedule();
        let z = Latent::standard_normal(&[4, 4], &mut rng(5));
        let known = Latent::zeros(&[4, 4]);
        let mask = BlendMask::filled(true, &[4, 4]);
        let p = PointMassPredictor::constant(0.5, &s);
        for t in [1, 2, 30, 50] {
            let a = reverse_step(&z, t, &p, &s, &mut rng(9)).unwrap();
            let b = masked_reverse_step(&z, t, &p, &s, &mask, &known, &mut rng(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let s = make_schedule(1, 0.1, 0.1).unwrap();
        let a = sample(&ZeroPredictor, &s, &[3, 2], &mut rng(11), None).unwrap();
        let b = sample(&ZeroPredictor, &s, &[3, 2], &mut rng(11), None).unwrap();
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_steps() {
        let s = default_schedule();
        let z = Latent::zeros(&[1]);
        assert!(reverse_step(&z, 0, &ZeroPredictor, &s, &mut rng(0)).is_err());
        assert!(reverse_step(&z, 51, &ZeroPredictor, &s, &mut rng(0)).is_err());
        assert!(forward_step(&z, 0, &s, &mut rng(0)).is_err());
    }
}
