//! Symmetric α-stable increments and paths.
//!
//! The driving process has characteristic exponent `|ξ|^α`, equivalently
//! jump density `A_α |x|^{-1-α}` with `A_α` from [`alpha_constant`].
//! Increments are drawn exactly with the Chambers–Mallows–Stuck transform.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeedRecord;
use crate::special::gamma;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StableError {
    #[error("stability index must lie in (0, 2), got {0}")]
    InvalidAlpha(f64),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("path needs at least one step")]
    EmptyPath,
    #[error("jump threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
}

/// Stability index, restricted to the open interval `(0, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Self, StableError> {
        if value > 0.0 && value < 2.0 {
            Ok(Self(value))
        } else {
            Err(StableError::InvalidAlpha(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = StableError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Alpha::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// `A_α = α Γ((1+α)/2) 2^{α-1} / (√π Γ(1-α/2))`, the normalising constant of
/// the jump density.
pub fn alpha_constant(alpha: Alpha) -> f64 {
    let a = alpha.get();
    a * gamma(0.5 * (1.0 + a)) * 2f64.powf(a - 1.0) / (PI.sqrt() * gamma(1.0 - 0.5 * a))
}

/// Rate of jumps with `|x| > eps0`: `2 A_α eps0^{-α} / α`.
pub fn tail_rate(alpha: Alpha, eps0: f64) -> f64 {
    let a = alpha.get();
    2.0 * alpha_constant(alpha) * eps0.powf(-a) / a
}

/// Variance per unit time carried by the jumps with `|x| <= eps`:
/// `2 A_α eps^{2-α} / (2-α)`.
pub fn small_jump_variance(alpha: Alpha, eps: f64) -> f64 {
    let a = alpha.get();
    2.0 * alpha_constant(alpha) * eps.powf(2.0 - a) / (2.0 - a)
}

/// Draws increments `X_dt` of the symmetric stable process.
#[derive(Debug, Clone, Copy)]
pub struct StableSampler {
    alpha: Alpha,
    scale: f64,
}

impl StableSampler {
    pub fn new(alpha: Alpha, dt: f64) -> Result<Self, StableError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(StableError::InvalidStep(dt));
        }
        Ok(Self {
            alpha,
            scale: dt.powf(1.0 / alpha.get()),
        })
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    /// One draw of `X_1` (characteristic function `exp(-|ξ|^α)`).
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.alpha.get();
        let u: f64 = Open01.sample(rng);
        let v = PI * u - FRAC_PI_2;
        if a == 1.0 {
            return v.tan();
        }
        let e: f64 = Exp1.sample(rng);
        let av = a * v;
        av.sin() / v.cos().powf(1.0 / a) * ((v - av).cos() / e).powf((1.0 - a) / a)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.scale * self.sample_unit(rng)
    }
}

/// One increment of the stable process over a step of length `dt`.
pub fn sample_increment<R: Rng + ?Sized>(
    alpha: Alpha,
    dt: f64,
    rng: &mut R,
) -> Result<f64, StableError> {
    Ok(StableSampler::new(alpha, dt)?.sample(rng))
}

/// Increments of the driving process on a uniform grid, `X(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StablePathGrid {
    pub alpha: Alpha,
    pub dt: f64,
    pub increments: Vec<f64>,
    pub seed: Option<SeedRecord>,
}

impl StablePathGrid {
    /// A path with every increment zero. Used to freeze the noise in tests
    /// and deterministic probes.
    pub fn zero(alpha: Alpha, dt: f64, n_steps: usize) -> Self {
        Self {
            alpha,
            dt,
            increments: vec![0.0; n_steps],
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// `X(k dt)` for `k = 0..=n`, as running prefix sums.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for dx in &self.increments {
            acc += dx;
            out.push(acc);
        }
        out
    }
}

pub fn sample_path(
    alpha: Alpha,
    n_steps: usize,
    dt: f64,
    seed: &SeedRecord,
) -> Result<StablePathGrid, StableError> {
    if n_steps == 0 {
        return Err(StableError::EmptyPath);
    }
    let sampler = StableSampler::new(alpha, dt)?;
    let mut rng = seed.rng();
    let increments = (0..n_steps).map(|_| sampler.sample(&mut rng)).collect();
    Ok(StablePathGrid {
        alpha,
        dt,
        increments,
        seed: Some(seed.clone()),
    })
}

/// Upper bound on the mean number of explicitly simulated small jumps per step.
const MAX_SMALL_JUMPS_PER_STEP: f64 = 8.0;

/// Sampler for the small-jump part `X̃` (jumps with `|x| <= eps0`).
///
/// Jumps with `delta < |x| <= eps0` are simulated as a compound Poisson
/// process; the remainder below `delta` is replaced by a Gaussian of matched
/// variance. When the band would need more than a handful of jumps per step,
/// `delta = eps0` and the whole small part is Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct SmallJumpSampler {
    alpha: Alpha,
    eps0: f64,
    delta: f64,
    band_mean: f64,
    gaussian_sd: f64,
}

impl SmallJumpSampler {
    pub fn new(alpha: Alpha, eps0: f64, dt: f64) -> Result<Self, StableError> {
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(StableError::InvalidThreshold(eps0));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(StableError::InvalidStep(dt));
        }
        let a = alpha.get();
        // smallest delta with tail_rate(delta) * dt <= MAX_SMALL_JUMPS_PER_STEP
        let delta_min =
            (2.0 * alpha_constant(alpha) * dt / (a * MAX_SMALL_JUMPS_PER_STEP)).powf(1.0 / a);
        let delta = (eps0 / 20.0).max(delta_min).min(eps0);
        let band_mean = (tail_rate(alpha, delta) - tail_rate(alpha, eps0)).max(0.0) * dt;
        let gaussian_sd = (small_jump_variance(alpha, delta) * dt).sqrt();
        Ok(Self {
            alpha,
            eps0,
            delta,
            band_mean,
            gaussian_sd,
        })
    }

    pub fn cutoff(&self) -> f64 {
        self.delta
    }

    pub fn is_gaussian_only(&self) -> bool {
        self.delta >= self.eps0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let mut x = self.gaussian_sd * z;
        if self.band_mean > 0.0 {
            let count = Poisson::new(self.band_mean)
                .map(|p| p.sample(rng) as u64)
                .unwrap_or(0);
            let a = self.alpha.get();
            let ratio = (self.delta / self.eps0).powf(a);
            for _ in 0..count {
                // inverse CDF of the Pareto law truncated to (delta, eps0]
                let u: f64 = Open01.sample(rng);
                let size = self.delta * (1.0 - u * (1.0 - ratio)).powf(-1.0 / a);
                x += if rng.random::<bool>() { size } else { -size };
            }
        }
        x
    }
}

/// The driving path split as `X = J + X̃`, with `J` the compound Poisson
/// process of jumps larger than the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpDecomposition {
    pub alpha: Alpha,
    pub dt: f64,
    pub threshold: f64,
    /// Per-step increments of the small-jump part.
    pub small_part: Vec<f64>,
    pub jump_times: Vec<f64>,
    /// Grid step containing each jump.
    pub jump_steps: Vec<usize>,
    pub jump_sizes: Vec<f64>,
    /// Rate of `J`, jumps per unit time.
    pub rate: f64,
    pub seed: Option<SeedRecord>,
}

impl JumpDecomposition {
    /// Splits a concrete grid path: every increment exceeding the threshold
    /// in absolute value becomes a jump at the left end of its step.
    pub fn from_path(path: &StablePathGrid, eps0: f64) -> Result<Self, StableError> {
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(StableError::InvalidThreshold(eps0));
        }
        let mut small_part = Vec::with_capacity(path.len());
        let mut jump_times = Vec::new();
        let mut jump_steps = Vec::new();
        let mut jump_sizes = Vec::new();
        for (k, &dx) in path.increments.iter().enumerate() {
            if dx.abs() > eps0 {
                small_part.push(0.0);
                jump_times.push(k as f64 * path.dt);
                jump_steps.push(k);
                jump_sizes.push(dx);
            } else {
                small_part.push(dx);
            }
        }
        Ok(Self {
            alpha: path.alpha,
            dt: path.dt,
            threshold: eps0,
            small_part,
            jump_times,
            jump_steps,
            jump_sizes,
            rate: tail_rate(path.alpha, eps0),
            seed: path.seed.clone(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.small_part.len()
    }

    /// Per-step increments of `J + X̃`. Steps without a jump return the
    /// small-part increment untouched.
    pub fn reassemble(&self) -> Vec<f64> {
        let mut out = self.small_part.clone();
        for (&k, &size) in self.jump_steps.iter().zip(&self.jump_sizes) {
            out[k] += size;
        }
        out
    }

    pub fn to_path(&self) -> StablePathGrid {
        StablePathGrid {
            alpha: self.alpha,
            dt: self.dt,
            increments: self.reassemble(),
            seed: self.seed.clone(),
        }
    }
}

pub fn sample_decomposed_path(
    alpha: Alpha,
    eps0: f64,
    n_steps: usize,
    dt: f64,
    seed: &SeedRecord,
) -> Result<JumpDecomposition, StableError> {
    if n_steps == 0 {
        return Err(StableError::EmptyPath);
    }
    let small = SmallJumpSampler::new(alpha, eps0, dt)?;
    let rate = tail_rate(alpha, eps0);
    let horizon = n_steps as f64 * dt;

    let mut small_rng = seed.child("small").rng();
    let small_part = (0..n_steps).map(|_| small.sample(&mut small_rng)).collect();

    let mut jump_rng = seed.child("large").rng();
    let a = alpha.get();
    let mut jump_times = Vec::new();
    let mut jump_steps = Vec::new();
    let mut jump_sizes = Vec::new();
    let mut t = 0.0;
    loop {
        let gap: f64 = Exp1.sample(&mut jump_rng);
        t += gap / rate;
        if t >= horizon {
            break;
        }
        let u: f64 = Open01.sample(&mut jump_rng);
        let size = eps0 * u.powf(-1.0 / a);
        jump_times.push(t);
        jump_steps.push(((t / dt) as usize).min(n_steps - 1));
        jump_sizes.push(if jump_rng.random::<bool>() { size } else { -size });
    }
    Ok(JumpDecomposition {
        alpha,
        dt,
        threshold: eps0,
        small_part,
        jump_times,
        jump_steps,
        jump_sizes,
        rate,
        seed: Some(seed.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alpha(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    #[test]
    fn alpha_bounds() {
        assert!(Alpha::new(0.0).is_err());
        assert!(Alpha::new(2.0).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
        assert!(Alpha::new(1.999).is_ok());
    }

    #[test]
    fn alpha_constant_at_one_is_one_over_pi() {
        assert!((alpha_constant(alpha(1.0)) - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn alpha_constant_matches_high_precision_table() {
        // mpmath, 30 digits
        let table = [
            (0.001, 0.000_499_711_680_744_046_763_15),
            (0.25, 0.110_410_625_842_105_334_04),
            (0.5, 0.199_471_140_200_716_338_97),
            (1.5, 0.299_206_710_301_074_508_45),
            (1.9, 0.090_992_482_475_194_496_492),
        ];
        for (a, want) in table {
            let got = alpha_constant(alpha(a));
            assert!(((got - want) / want).abs() < 1e-12, "A({a}) = {got}");
        }
    }

    #[test]
    fn alpha_constant_vanishes_at_zero() {
        let small = alpha_constant(alpha(1e-3));
        assert!(small < 1e-3);
        assert!(alpha_constant(alpha(1e-6)) < small);
    }

    #[test]
    fn tail_rate_cauchy_unit_threshold() {
        assert!((tail_rate(alpha(1.0), 1.0) - 2.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut rng = SeedRecord::new(1, "t").rng();
        assert_eq!(
            sample_increment(alpha(1.0), 0.0, &mut rng),
            Err(StableError::InvalidStep(0.0))
        );
        let seed = SeedRecord::new(1, "t");
        assert_eq!(sample_path(alpha(1.0), 0, 0.1, &seed), Err(StableError::EmptyPath));
        assert!(matches!(
            sample_decomposed_path(alpha(1.0), 0.0, 10, 0.1, &seed),
            Err(StableError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn path_is_reproducible_and_cumulative() {
        let seed = SeedRecord::new(42, "path");
        let a = sample_path(alpha(1.3), 500, 0.01, &seed).unwrap();
        let b = sample_path(alpha(1.3), 500, 0.01, &seed).unwrap();
        assert_eq!(a, b);
        let cum = a.cumulative();
        assert_eq!(cum[0], 0.0);
        let mut acc = 0.0;
        for (k, dx) in a.increments.iter().enumerate() {
            acc += dx;
            assert_eq!(cum[k + 1], acc);
        }
    }

    #[test]
    fn decomposition_jumps_exceed_threshold() {
        let seed = SeedRecord::new(3, "dec");
        let d = sample_decomposed_path(alpha(1.0), 0.5, 2000, 0.05, &seed).unwrap();
        assert!(!d.jump_sizes.is_empty());
        assert!(d.jump_sizes.iter().all(|x| x.abs() > 0.5));
        assert!(d.jump_times.windows(2).all(|w| w[0] <= w[1]));
        assert!(d.jump_times.iter().all(|&t| t < 2000.0 * 0.05));
    }

    #[test]
    fn decomposition_of_concrete_path_reassembles_bit_exactly() {
        let seed = SeedRecord::new(9, "concrete");
        let path = sample_path(alpha(0.8), 4000, 0.01, &seed).unwrap();
        let d = JumpDecomposition::from_path(&path, 0.1).unwrap();
        assert!(d.jump_sizes.iter().all(|x| x.abs() > 0.1));
        let back = d.reassemble();
        assert_eq!(back.len(), path.len());
        for (x, y) in back.iter().zip(&path.increments) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn small_jump_sampler_falls_back_to_gaussian() {
        // a tiny threshold with a long step forces the Gaussian fallback
        let s = SmallJumpSampler::new(alpha(1.0), 1e-4, 1.0).unwrap();
        assert!(s.is_gaussian_only());
        let s = SmallJumpSampler::new(alpha(1.0), 0.1, 1e-3).unwrap();
        assert!(!s.is_gaussian_only());
        assert!((s.cutoff() - 0.005).abs() < 1e-15);
    }
}
