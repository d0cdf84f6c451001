//! Monte Carlo checks of the stationary law `uniform(circle) × N(0, 1)`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::potential::PotentialSpec;
use crate::rng::SeedRecord;
use crate::sde::{EulerIntegrator, SdeError, StateYS};
use crate::stable_levy::{Alpha, StableError, StableSampler};

/// Burn-in below this many time units is accepted but flagged.
pub const RECOMMENDED_MIN_BURN_IN: f64 = 10.0;
/// Thinning below this many time units is accepted but flagged.
pub const RECOMMENDED_MIN_THINNING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum StationaryError {
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("invalid {field}: {value}")]
    InvalidParameter { field: &'static str, value: f64 },
    #[error("sample sets differ in {0}; only sets from the same experiment can be merged")]
    IncompatibleMerge(&'static str),
    #[error("chi-square cells under-populated: smallest expected count {min_expected:.3} after merging s bins down to {s_bins}")]
    UnderPopulated { min_expected: f64, s_bins: usize },
    #[error("bin counts must be at least 2 (got {theta} x {s})")]
    TooFewBins { theta: usize, s: usize },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Stable(#[from] StableError),
}

/// Where and how often one chain is sampled, in time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_samples: usize,
    pub burn_in: f64,
    pub thinning: f64,
}

impl SamplingPlan {
    pub fn validate(&self, dt: f64) -> Result<(), StationaryError> {
        if self.n_samples == 0 {
            return Err(StationaryError::NoSamples);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(StationaryError::InvalidParameter {
                field: "dt",
                value: dt,
            });
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return Err(StationaryError::InvalidParameter {
                field: "burn_in",
                value: self.burn_in,
            });
        }
        if !(self.thinning >= dt && self.thinning.is_finite()) {
            return Err(StationaryError::InvalidParameter {
                field: "thinning",
                value: self.thinning,
            });
        }
        Ok(())
    }

    /// Human-readable notes for settings below the recommended minimums.
    pub fn advisories(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if self.burn_in < RECOMMENDED_MIN_BURN_IN {
            notes.push(format!(
                "burn_in {} is below the recommended {RECOMMENDED_MIN_BURN_IN}; \
                 samples may carry the initial transient",
                self.burn_in
            ));
        }
        if self.thinning < RECOMMENDED_MIN_THINNING {
            notes.push(format!(
                "thinning {} is below the recommended {RECOMMENDED_MIN_THINNING}; \
                 samples may be correlated",
                self.thinning
            ));
        }
        notes
    }

    fn steps(&self, dt: f64) -> (usize, usize) {
        let burn = (self.burn_in / dt).round() as usize;
        let thin = ((self.thinning / dt).round() as usize).max(1);
        (burn, thin)
    }
}

/// Post-burn-in samples of `(θ, S)` with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
    pub burn_in: f64,
    pub thinning: f64,
    pub dt: f64,
    pub alpha: Alpha,
    pub start: StateYS,
    pub potential: PotentialSpec,
    /// One record per chain that contributed.
    pub seeds: Vec<SeedRecord>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Concatenates two sets drawn under the same settings.
    pub fn merge(mut self, other: SampleSet) -> Result<SampleSet, StationaryError> {
        if self.dt != other.dt {
            return Err(StationaryError::IncompatibleMerge("dt"));
        }
        if self.alpha != other.alpha {
            return Err(StationaryError::IncompatibleMerge("alpha"));
        }
        if self.burn_in != other.burn_in || self.thinning != other.thinning {
            return Err(StationaryError::IncompatibleMerge("sampling plan"));
        }
        if self.potential != other.potential {
            return Err(StationaryError::IncompatibleMerge("potential"));
        }
        if self.start != other.start {
            return Err(StationaryError::IncompatibleMerge("start"));
        }
        self.theta.extend(other.theta);
        self.s.extend(other.s);
        self.seeds.extend(other.seeds);
        Ok(self)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        writeln!(
            out,
            "# alpha={},dt={},burn_in={},thinning={},start=({},{}),seeds={},cosine={:?},sine={:?}",
            self.alpha.get(),
            self.dt,
            self.burn_in,
            self.thinning,
            self.start.y,
            self.start.s,
            seeds.join(";"),
            self.potential.cosine_coeffs(),
            self.potential.sine_coeffs()
        )?;
        writeln!(out, "theta,s")?;
        for (t, s) in self.theta.iter().zip(&self.s) {
            writeln!(out, "{t},{s}")?;
        }
        Ok(())
    }
}

/// Samples one long chain started at `start`.
pub fn ergodic_samples(
    start: StateYS,
    plan: &SamplingPlan,
    alpha: Alpha,
    dt: f64,
    spec: &PotentialSpec,
    seed: &SeedRecord,
) -> Result<SampleSet, StationaryError> {
    plan.validate(dt)?;
    let sampler = StableSampler::new(alpha, dt)?;
    let mut rng = seed.rng();
    let mut chain = EulerIntegrator::new(start, dt, spec)?;
    let (burn, thin) = plan.steps(dt);
    for _ in 0..burn {
        chain.advance(sampler.sample(&mut rng))?;
    }
    let mut theta = Vec::with_capacity(plan.n_samples);
    let mut s = Vec::with_capacity(plan.n_samples);
    for _ in 0..plan.n_samples {
        for _ in 0..thin - 1 {
            chain.advance(sampler.sample(&mut rng))?;
        }
        let state = chain.advance(sampler.sample(&mut rng))?;
        theta.push(state.theta);
        s.push(state.s);
    }
    Ok(SampleSet {
        theta,
        s,
        burn_in: plan.burn_in,
        thinning: plan.thinning,
        dt,
        alpha,
        start,
        potential: spec.clone(),
        seeds: vec![seed.clone()],
    })
}

/// Splits the samples over `chains` independent chains (streams
/// `chain-0`, `chain-1`, ...) run in parallel and merged in order.
pub fn ergodic_ensemble(
    start: StateYS,
    plan: &SamplingPlan,
    chains: usize,
    alpha: Alpha,
    dt: f64,
    spec: &PotentialSpec,
    seed: &SeedRecord,
) -> Result<SampleSet, StationaryError> {
    plan.validate(dt)?;
    let chains = chains.clamp(1, plan.n_samples);
    let base = plan.n_samples / chains;
    let extra = plan.n_samples % chains;
    let sets: Vec<SampleSet> = (0..chains)
        .into_par_iter()
        .map(|i| {
            let leg = SamplingPlan {
                n_samples: base + usize::from(i < extra),
                ..*plan
            };
            ergodic_samples(start, &leg, alpha, dt, spec, &seed.child(&format!("chain-{i}")))
        })
        .collect::<Result<_, _>>()?;
    let mut it = sets.into_iter();
    let first = it.next().expect("at least one chain");
    it.try_fold(first, SampleSet::merge)
}

/// Integrated autocorrelation time `1 + 2 Σ ρ_k` in units of the sample
/// spacing, with the self-consistent window `M ≥ window_factor · τ(M)`.
pub fn integrated_autocorrelation(series: &[f64], window_factor: f64) -> f64 {
    let n = series.len();
    if n < 2 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centred.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let ck = centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * ck / c0;
        if lag as f64 >= window_factor * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Result of a pilot run used to choose the thinning interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimate {
    /// Integrated autocorrelation time of `S`, in time units.
    pub tau_s: f64,
    /// `factor · tau_s`, floored at one time step.
    pub thinning: f64,
    pub pilot_horizon: f64,
    pub spacing: f64,
}

/// Runs a pilot chain of length `horizon` after `burn_in`, records `S`
/// every `spacing` time units and sets thinning to `factor · τ_S`.
#[allow(clippy::too_many_arguments)]
pub fn pilot_thinning(
    start: StateYS,
    burn_in: f64,
    horizon: f64,
    spacing: f64,
    factor: f64,
    alpha: Alpha,
    dt: f64,
    spec: &PotentialSpec,
    seed: &SeedRecord,
) -> Result<PilotEstimate, StationaryError> {
    if !(horizon > spacing && spacing >= dt) {
        return Err(StationaryError::InvalidParameter {
            field: "pilot_horizon",
            value: horizon,
        });
    }
    let plan = SamplingPlan {
        n_samples: (horizon / spacing).floor() as usize,
        burn_in,
        thinning: spacing,
    };
    let set = ergodic_samples(start, &plan, alpha, dt, spec, seed)?;
    let spacing = plan.steps(dt).1 as f64 * dt;
    let tau_s = integrated_autocorrelation(&set.s, 5.0) * spacing;
    Ok(PilotEstimate {
        tau_s,
        thinning: (factor * tau_s).max(dt),
        pilot_horizon: horizon,
        spacing,
    })
}

/// `sup |F_n - F|` for the empirical CDF of `samples`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn uniform_circle_cdf(theta: f64) -> f64 {
    ((theta + PI) / TAU).clamp(0.0, 1.0)
}

pub fn standard_normal_cdf(s: f64) -> f64 {
    Normal::standard().cdf(s)
}

pub fn ks_uniform_theta(set: &SampleSet) -> f64 {
    ks_statistic(&set.theta, uniform_circle_cdf)
}

pub fn ks_normal_s(set: &SampleSet) -> f64 {
    ks_statistic(&set.s, standard_normal_cdf)
}

/// Two-sample statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov critical value `sqrt(-ln(level/2)/2)` scaled for
/// sample sizes `n` and `m` (`m = None` for the one-sample test).
pub fn ks_critical_value(level: f64, n: usize, m: Option<usize>) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    match m {
        None => c / (n as f64).sqrt(),
        Some(m) => c * ((n + m) as f64 / (n * m) as f64).sqrt(),
    }
}

/// Pearson statistic of the joint histogram against the product of its
/// empirical marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Independence {
    pub statistic: f64,
    pub dof: usize,
    pub theta_bins: usize,
    /// Number of `s` bins after tail merging.
    pub s_bins: usize,
    pub min_expected: f64,
}

impl Chi2Independence {
    pub fn quantile(&self, level: f64) -> f64 {
        chi2_quantile(level, self.dof)
    }
}

pub fn chi2_quantile(level: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("dof is positive")
        .inverse_cdf(level)
}

pub fn independence_chi2(
    set: &SampleSet,
    theta_bins: usize,
    s_bins: usize,
) -> Result<Chi2Independence, StationaryError> {
    independence_chi2_raw(&set.theta, &set.s, theta_bins, s_bins)
}

/// As [`independence_chi2`] on bare sequences.
pub fn independence_chi2_raw(
    theta: &[f64],
    s: &[f64],
    theta_bins: usize,
    s_bins: usize,
) -> Result<Chi2Independence, StationaryError> {
    if theta_bins < 2 || s_bins < 2 {
        return Err(StationaryError::TooFewBins {
            theta: theta_bins,
            s: s_bins,
        });
    }
    if theta.is_empty() {
        return Err(StationaryError::NoSamples);
    }
    let normal = Normal::standard();
    let edges: Vec<f64> = (1..s_bins)
        .map(|j| normal.inverse_cdf(j as f64 / s_bins as f64))
        .collect();
    // columns hold contiguous ranges of the original s bins
    let mut counts = vec![vec![0.0f64; s_bins]; theta_bins];
    for (&t, &x) in theta.iter().zip(s) {
        let i = (((t + PI) / TAU * theta_bins as f64) as usize).min(theta_bins - 1);
        let j = edges.partition_point(|&e| e < x);
        counts[i][j] += 1.0;
    }
    let n = theta.len() as f64;
    loop {
        let cols = counts[0].len();
        let row_tot: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_tot: Vec<f64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let min_row = row_tot.iter().copied().fold(f64::INFINITY, f64::min);
        let min_col = col_tot.iter().copied().fold(f64::INFINITY, f64::min);
        let min_expected = min_row * min_col / n;
        if min_expected >= 5.0 {
            let mut stat = 0.0;
            for (i, row) in counts.iter().enumerate() {
                for (j, &obs) in row.iter().enumerate() {
                    let e = row_tot[i] * col_tot[j] / n;
                    stat += (obs - e) * (obs - e) / e;
                }
            }
            return Ok(Chi2Independence {
                statistic: stat,
                dof: (theta_bins - 1) * (cols - 1),
                theta_bins,
                s_bins: cols,
                min_expected,
            });
        }
        let sparse_tail = col_tot[0].min(col_tot[cols - 1]) <= min_col;
        if cols <= 2 || !sparse_tail {
            return Err(StationaryError::UnderPopulated {
                min_expected,
                s_bins: cols,
            });
        }
        // fold the thinner tail column into its neighbour
        let (from, into) = if col_tot[0] <= col_tot[cols - 1] {
            (0, 1)
        } else {
            (cols - 1, cols - 2)
        };
        for row in counts.iter_mut() {
            row[into] += row[from];
            row.remove(from);
        }
    }
}

/// Pass thresholds for the goodness-of-fit suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GofThresholds {
    /// KS threshold at large `n`; the 1% critical value is used instead
    /// when it is larger (small samples).
    pub ks: f64,
    pub ks_small_sample_level: f64,
    pub var_low: f64,
    pub var_high: f64,
    pub chi2_level: f64,
    pub theta_bins: usize,
    pub s_bins: usize,
    /// Allowed `|mean(S)|` in units of `1/sqrt(n)`.
    pub mean_sigmas: f64,
}

impl Default for GofThresholds {
    fn default() -> Self {
        Self {
            ks: 0.05,
            ks_small_sample_level: 0.01,
            var_low: 0.9,
            var_high: 1.1,
            chi2_level: 0.99,
            theta_bins: 8,
            s_bins: 8,
            mean_sigmas: 4.0,
        }
    }
}

impl GofThresholds {
    pub fn ks_threshold(&self, n: usize) -> f64 {
        self.ks
            .max(ks_critical_value(self.ks_small_sample_level, n, None))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub n_effective: usize,
    pub ks_theta: f64,
    pub ks_s: f64,
    pub ks_threshold: f64,
    pub mean_s: f64,
    pub mean_s_threshold: f64,
    pub var_s: f64,
    pub var_range: (f64, f64),
    /// Absent when the table could not be populated; the check then fails.
    pub chi2: Option<Chi2Independence>,
    pub chi2_critical: Option<f64>,
    pub chi2_note: Option<String>,
    pub pass_ks_theta: bool,
    pub pass_ks_s: bool,
    pub pass_mean_s: bool,
    pub pass_var_s: bool,
    pub pass_chi2: bool,
}

impl GofReport {
    pub fn all_pass(&self) -> bool {
        self.pass_ks_theta && self.pass_ks_s && self.pass_mean_s && self.pass_var_s && self.pass_chi2
    }
}

pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

pub fn goodness_of_fit(
    set: &SampleSet,
    thresholds: &GofThresholds,
) -> Result<GofReport, StationaryError> {
    if set.is_empty() {
        return Err(StationaryError::NoSamples);
    }
    let n = set.len();
    let ks_theta = ks_uniform_theta(set);
    let ks_s = ks_normal_s(set);
    let ks_threshold = thresholds.ks_threshold(n);
    let (mean_s, var_s) = mean_and_variance(&set.s);
    let mean_s_threshold = thresholds.mean_sigmas * var_s.sqrt() / (n as f64).sqrt();
    let (chi2, chi2_note) = match independence_chi2(set, thresholds.theta_bins, thresholds.s_bins) {
        Ok(c) => (Some(c), None),
        Err(e @ StationaryError::UnderPopulated { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let chi2_critical = chi2.as_ref().map(|c| c.quantile(thresholds.chi2_level));
    Ok(GofReport {
        n_effective: n,
        ks_theta,
        ks_s,
        ks_threshold,
        mean_s,
        mean_s_threshold,
        var_s,
        var_range: (thresholds.var_low, thresholds.var_high),
        pass_ks_theta: ks_theta < ks_threshold,
        pass_ks_s: ks_s < ks_threshold,
        pass_mean_s: mean_s.abs() < mean_s_threshold,
        pass_var_s: (thresholds.var_low..=thresholds.var_high).contains(&var_s),
        pass_chi2: match (&chi2, chi2_critical) {
            (Some(c), Some(q)) => c.statistic < q,
            _ => false,
        },
        chi2,
        chi2_critical,
        chi2_note,
    })
}

/// Two-sample KS comparison of two chains, both marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartComparison {
    pub ks_theta: f64,
    pub ks_s: f64,
    pub critical: f64,
    pub level: f64,
    pub pass: bool,
}

pub fn compare_starts(a: &SampleSet, b: &SampleSet, level: f64) -> StartComparison {
    let ks_theta = ks_two_sample(&a.theta, &b.theta);
    let ks_s = ks_two_sample(&a.s, &b.s);
    let critical = ks_critical_value(level, a.len(), Some(b.len()));
    StartComparison {
        ks_theta,
        ks_s,
        critical,
        level,
        pass: ks_theta < critical && ks_s < critical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(n: usize, seed: &str, shift: f64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = SeedRecord::new(11, seed).rng();
        let theta = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let s = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect();
        (theta, s)
    }

    fn set_of(theta: Vec<f64>, s: Vec<f64>) -> SampleSet {
        SampleSet {
            theta,
            s,
            burn_in: 0.0,
            thinning: 1.0,
            dt: 1e-3,
            alpha: Alpha::new(1.0).unwrap(),
            start: StateYS::new(0.0, 0.0),
            potential: PotentialSpec::cosine(),
            seeds: vec![SeedRecord::new(0, "synthetic")],
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let plan = SamplingPlan {
            n_samples: 0,
            burn_in: 10.0,
            thinning: 1.0,
        };
        let r = ergodic_samples(
            StateYS::new(0.0, 0.0),
            &plan,
            Alpha::new(1.0).unwrap(),
            1e-3,
            &PotentialSpec::cosine(),
            &SeedRecord::new(0, "x"),
        );
        assert!(matches!(r, Err(StationaryError::NoSamples)));
    }

    #[test]
    fn short_burn_in_is_flagged_not_rejected() {
        let plan = SamplingPlan {
            n_samples: 3,
            burn_in: 0.1,
            thinning: 0.5,
        };
        assert_eq!(plan.advisories().len(), 2);
        assert!(plan.validate(1e-3).is_ok());
    }

    #[test]
    fn samples_are_spaced_and_reproducible() {
        let plan = SamplingPlan {
            n_samples: 5,
            burn_in: 0.5,
            thinning: 0.25,
        };
        let a = Alpha::new(1.5).unwrap();
        let spec = PotentialSpec::cosine();
        let seed = SeedRecord::new(3, "chain");
        let x = ergodic_samples(StateYS::new(0.1, 0.2), &plan, a, 1e-2, &spec, &seed).unwrap();
        let y = ergodic_samples(StateYS::new(0.1, 0.2), &plan, a, 1e-2, &spec, &seed).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.len(), 5);
        assert!(x.theta.iter().all(|t| *t > -PI && *t <= PI));
    }

    #[test]
    fn ks_on_exact_uniform_and_normal_draws() {
        let (theta, s) = synthetic(10_000, "exact", 0.0);
        let set = set_of(theta, s);
        assert!(ks_uniform_theta(&set) < 0.0136);
        assert!(ks_normal_s(&set) < 0.0136);
    }

    #[test]
    fn ks_point_mass_at_zero_is_half() {
        let set = set_of(vec![0.0; 100], vec![0.0; 100]);
        assert!((ks_uniform_theta(&set) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_rejects_shifted_mean() {
        let (theta, s) = synthetic(10_000, "shifted", 0.5);
        let set = set_of(theta, s);
        let d = ks_normal_s(&set);
        assert!(d > 0.15, "{d}");
        assert!((d - 0.19741265).abs() < 0.02);
    }

    #[test]
    fn two_sample_ks_by_hand() {
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]), 0.5);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn critical_values() {
        assert!((ks_critical_value(0.05, 10_000, None) - 0.01358).abs() < 1e-5);
        assert!((ks_critical_value(0.01, 10_000, Some(10_000)) - 0.02302).abs() < 1e-5);
        assert!((chi2_quantile(0.99, 49) - 74.91947430847816).abs() < 1e-6);
    }

    #[test]
    fn chi2_accepts_independent_and_rejects_comonotone() {
        let (theta, s) = synthetic(10_000, "indep", 0.0);
        let r = independence_chi2_raw(&theta, &s, 8, 8).unwrap();
        assert_eq!(r.dof, 49);
        assert!(r.statistic < 74.9195, "{}", r.statistic);
        let s: Vec<f64> = theta.iter().map(|t| t / PI).collect();
        let r = independence_chi2_raw(&theta, &s, 8, 8).unwrap();
        assert!(r.statistic > 1000.0);
    }

    #[test]
    fn chi2_merges_sparse_tails() {
        // narrow s leaves the outer equal-probability bins nearly empty
        let (theta, s) = synthetic(400, "sparse", 0.0);
        let s: Vec<f64> = s.iter().map(|x| 0.4 * x).collect();
        let r = independence_chi2_raw(&theta, &s, 3, 8).unwrap();
        assert!(r.s_bins < 8);
        assert!(r.min_expected >= 5.0);
        assert_eq!(r.dof, 2 * (r.s_bins - 1));
        let few = independence_chi2_raw(&theta[..10], &s[..10], 8, 8);
        assert!(matches!(few, Err(StationaryError::UnderPopulated { .. })));
    }

    #[test]
    fn autocorrelation_of_ar1() {
        // AR(1) with coefficient φ has τ = (1 + φ)/(1 - φ)
        let phi: f64 = 0.8;
        let mut rng = SeedRecord::new(5, "ar1").rng();
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + z;
                x
            })
            .collect();
        let tau = integrated_autocorrelation(&series, 5.0);
        assert!((tau - 9.0).abs() < 0.6, "{tau}");
    }

    #[test]
    fn merge_checks_provenance() {
        let (t, s) = synthetic(10, "m", 0.0);
        let a = set_of(t.clone(), s.clone());
        let mut b = set_of(t, s);
        let merged = a.clone().merge(b.clone()).unwrap();
        assert_eq!(merged.len(), 20);
        assert_eq!(merged.seeds.len(), 2);
        b.dt = 2e-3;
        assert!(matches!(
            a.merge(b),
            Err(StationaryError::IncompatibleMerge("dt"))
        ));
    }

    #[test]
    fn ensemble_does_not_depend_on_thread_count() {
        let plan = SamplingPlan {
            n_samples: 7,
            burn_in: 0.1,
            thinning: 0.1,
        };
        let a = Alpha::new(1.0).unwrap();
        let spec = PotentialSpec::cosine();
        let seed = SeedRecord::new(9, "ens");
        let start = StateYS::new(0.0, 0.0);
        let x = ergodic_ensemble(start, &plan, 3, a, 1e-2, &spec, &seed).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let y = pool
            .install(|| ergodic_ensemble(start, &plan, 3, a, 1e-2, &spec, &seed))
            .unwrap();
        assert_eq!(x, y);
        assert_eq!(x.len(), 7);
        assert_eq!(x.seeds.len(), 3);
    }
}
