//! Experiment orchestration: runs each check from an [`ExperimentConfig`],
//! writes CSV and JSON outputs and a manifest of content digests.
//!
//! Every leg writes only under its own directory `out_dir/<leg>/`. Reports
//! carry no timestamps so the same config and seed reproduce them byte for
//! byte; timestamps live only in the manifest.

mod config;

pub use config::{
    apply_override, ExperimentConfig, FlowCheckConfig, GeneratorCheckConfig, ModelConfig,
    SemigroupConfig, SimulateConfig, StationaryConfig,
};

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::flow::{self, FlowCheckReport, FlowError, SemigroupReport, SemigroupSetup};
use crate::generator::{
    BumpPolynomial, CircleFunction, CylinderFunction, Generator, GeneratorError,
};
use crate::potential::PotentialError;
use crate::rng::SeedRecord;
use crate::sde::{self, LiftedState, SdeError, SimParams, StateYS};
use crate::stable_levy::{Alpha, StableError};
use crate::stationary::{
    self, GofReport, PilotEstimate, SampleSet, SamplingPlan, StartComparison, StationaryError,
};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    ParseConfig { path: String, message: String },
    #[error("invalid override `{0}`: expected KEY=VALUE with a dotted key")]
    BadOverride(String),
    #[error("invalid config value {field} = {value}: {reason}")]
    Invalid {
        field: String,
        value: String,
        reason: String,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Stable(#[from] StableError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

impl HarnessError {
    /// Configuration and usage problems, as opposed to failures while
    /// running an experiment.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::ReadConfig { .. }
                | HarnessError::ParseConfig { .. }
                | HarnessError::BadOverride(_)
                | HarnessError::Invalid { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the leg directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub leg: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<FileDigest>,
    pub pass: bool,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Outcome of one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegOutcome {
    pub leg: String,
    pub dir: PathBuf,
    pub pass: bool,
    pub files: Vec<FileDigest>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Collects the files of one leg and writes its manifest last.
struct LegWriter {
    leg: &'static str,
    dir: PathBuf,
    files: Vec<FileDigest>,
    started: u64,
}

impl LegWriter {
    fn new(config: &ExperimentConfig, leg: &'static str) -> Result<Self, HarnessError> {
        let dir = config.out_dir.join(leg);
        fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            leg,
            dir,
            files: Vec::new(),
            started: now_unix(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), HarnessError> {
        let mut text = serde_json::to_vec_pretty(value).expect("reports serialise");
        text.push(b'\n');
        self.write(name, &text)
    }

    fn finish(self, config: &ExperimentConfig, pass: bool) -> Result<LegOutcome, HarnessError> {
        let manifest = RunManifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            leg: self.leg.to_string(),
            config_hash: config.digest(),
            seed: config.seed,
            files: self.files.clone(),
            pass,
            started_unix: self.started,
            finished_unix: now_unix(),
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, text).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(LegOutcome {
            leg: self.leg.to_string(),
            dir: self.dir,
            pass,
            files: self.files,
        })
    }
}

/// Fields every report repeats so it can be re-run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

impl Provenance {
    fn of(config: &ExperimentConfig) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            seed: config.seed,
            config_hash: config.digest(),
            config: config.clone(),
        }
    }
}

fn stream(config: &ExperimentConfig, name: &str) -> SeedRecord {
    SeedRecord::new(config.seed, name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub provenance: Provenance,
    pub stream: SeedRecord,
    pub steps: usize,
    pub final_state: LiftedState,
    pub max_s_excursion: f64,
}

pub fn run_simulate(config: &ExperimentConfig) -> Result<LegOutcome, HarnessError> {
    config.validate()?;
    let sim = &config.simulate;
    let params = SimParams {
        alpha: config.alpha()?,
        dt: sim.dt,
        horizon: sim.horizon,
    };
    let seed = stream(config, "simulate/driving");
    let start = LiftedState::from_ys(StateYS::new(sim.start[0], sim.start[1]));
    let traj = sde::simulate_lifted(start, &params, &config.model.potential, &seed, sim.clamp)?;
    let mut out = LegWriter::new(config, "simulate")?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv, &config.model.potential)
        .expect("writing to memory cannot fail");
    out.write("trajectory.csv", &csv)?;
    let report = SimulateReport {
        provenance: Provenance::of(config),
        stream: seed,
        steps: traj.states.len() - 1,
        final_state: traj.last(),
        max_s_excursion: traj.max_s_excursion(),
    };
    out.write_json("simulate_report.json", &report)?;
    out.finish(config, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryLeg {
    pub start: [f64; 2],
    pub dt: f64,
    pub streams: Vec<SeedRecord>,
    pub gof: GofReport,
    pub samples_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub provenance: Provenance,
    /// Present when thinning came from a pilot run.
    pub pilot: Option<PilotEstimate>,
    pub burn_in: f64,
    pub thinning: f64,
    /// Burn-in and thinning are empirical choices; the model gives no
    /// mixing rate.
    pub notes: Vec<String>,
    pub legs: Vec<StationaryLeg>,
    /// Two-sample comparison of every later start with the first.
    pub start_comparisons: Vec<StartComparison>,
    /// First start repeated at `dt / 2`.
    pub refinement: Option<StationaryLeg>,
    pub pass: bool,
}

pub fn run_stationary(config: &ExperimentConfig) -> Result<LegOutcome, HarnessError> {
    let (report, sets) = stationary_report(config)?;
    let mut out = LegWriter::new(config, "stationary")?;
    let legs = report.legs.iter().chain(report.refinement.as_ref());
    for (leg, set) in legs.zip(&sets) {
        let mut csv = Vec::new();
        set.write_csv(&mut csv).expect("writing to memory cannot fail");
        out.write(&leg.samples_file, &csv)?;
    }
    out.write_json("stationary_report.json", &report)?;
    out.finish(config, report.pass)
}

/// Runs the stationary checks without writing files.
pub fn stationary_report(
    config: &ExperimentConfig,
) -> Result<(StationaryReport, Vec<SampleSet>), HarnessError> {
    config.validate()?;
    let st = &config.stationary;
    let alpha = config.alpha()?;
    let spec = &config.model.potential;
    let first = StateYS::new(st.starts[0][0], st.starts[0][1]);
    let pilot = match st.thinning {
        Some(_) => None,
        None => Some(stationary::pilot_thinning(
            first,
            st.burn_in,
            st.pilot_horizon,
            st.pilot_spacing,
            st.thinning_factor,
            alpha,
            st.dt,
            spec,
            &stream(config, "stationary/pilot"),
        )?),
    };
    let thinning = st.thinning.unwrap_or_else(|| pilot.as_ref().expect("pilot ran").thinning);
    let plan = SamplingPlan {
        n_samples: st.n_samples,
        burn_in: st.burn_in,
        thinning,
    };
    let mut notes = vec![
        "burn-in and thinning are empirical; no mixing rate is available for this model"
            .to_string(),
    ];
    notes.extend(plan.advisories());

    let run_leg = |start: [f64; 2], dt: f64, name: String, file: String| {
        let seed = stream(config, &name);
        let set = stationary::ergodic_ensemble(
            StateYS::new(start[0], start[1]),
            &plan,
            st.chains,
            alpha,
            dt,
            spec,
            &seed,
        )?;
        let gof = stationary::goodness_of_fit(&set, &st.thresholds)?;
        let leg = StationaryLeg {
            start,
            dt,
            streams: set.seeds.clone(),
            gof,
            samples_file: file,
        };
        Ok::<_, HarnessError>((leg, set))
    };

    let mut legs = Vec::new();
    let mut sets = Vec::new();
    for (i, &start) in st.starts.iter().enumerate() {
        let (leg, set) = run_leg(start, st.dt, format!("stationary/start-{i}"), format!("samples_start{i}.csv"))?;
        legs.push(leg);
        sets.push(set);
    }
    let start_comparisons: Vec<StartComparison> = sets[1..]
        .iter()
        .map(|s| stationary::compare_starts(&sets[0], s, st.start_level))
        .collect();
    let refinement = if st.refine_dt {
        let (leg, set) = run_leg(
            st.starts[0],
            st.dt / 2.0,
            "stationary/refine-0".to_string(),
            "samples_start0_half_dt.csv".to_string(),
        )?;
        sets.push(set);
        Some(leg)
    } else {
        None
    };
    let pass = legs.iter().chain(refinement.as_ref()).all(|l| l.gof.all_pass())
        && start_comparisons.iter().all(|c| c.pass);
    Ok((
        StationaryReport {
            provenance: Provenance::of(config),
            pilot,
            burn_in: st.burn_in,
            thinning,
            notes,
            legs,
            start_comparisons,
            refinement,
            pass,
        },
        sets,
    ))
}

/// One generator identity evaluated on one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEntry {
    pub operator: String,
    pub function_id: String,
    pub alpha: f64,
    pub value: f64,
    /// Bound on the periodic images beyond the explicit sum; already
    /// accounted for when the analytic remainder is on.
    pub tail_bound: f64,
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub pv_nodes: usize,
    /// Dominated by the local cutoff once the panels resolve the kernel.
    pub max_spectral_error: f64,
    /// Largest change of `circle_L` against the finest level, which
    /// isolates the node-count error.
    pub deviation_from_finest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub provenance: Provenance,
    pub spectral: Vec<GeneratorEntry>,
    pub integral: Vec<GeneratorEntry>,
    pub stationarity: Vec<GeneratorEntry>,
    pub negative_control: GeneratorEntry,
    /// Levels at `pv_nodes`, `pv_nodes/2`, `pv_nodes/4`.
    pub refinement: Vec<RefinementLevel>,
    /// Deviation from the finest level grows as nodes are removed.
    pub refinement_monotone: bool,
    pub pass: bool,
}

/// Random trigonometric polynomial with coefficients in `[-1, 1]`.
pub fn random_circle_function<R: Rng>(rng: &mut R, degree: usize) -> CircleFunction {
    let cosine = (0..=degree).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let sine = (0..=degree).map(|_| rng.random_range(-1.0..=1.0)).collect();
    CircleFunction::new(cosine, sine)
}

/// Random cylinder function with `terms` products of a trigonometric
/// polynomial and a bump polynomial.
pub fn random_cylinder_function<R: Rng>(rng: &mut R, terms: usize) -> CylinderFunction {
    CylinderFunction::new(
        (0..terms)
            .map(|_| {
                let degree = rng.random_range(1..=4);
                let g = random_circle_function(rng, degree);
                let coeffs = (0..=rng.random_range(0..=2))
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect();
                (g, BumpPolynomial::new(coeffs, rng.random_range(1.0..=3.0)))
            })
            .collect(),
    )
}

/// `f(θ, s) = cos θ · s · bump(s)`, which separates the standard normal
/// from the normal with variance 1/2.
pub fn negative_control_function() -> CylinderFunction {
    CylinderFunction::separable(
        CircleFunction::cos_harmonic(1),
        BumpPolynomial::new(vec![0.0, 1.0], 3.0),
    )
}

/// Density of `N(0, 1/2)`, proportional to `e^{-s²}`.
pub fn half_variance_density(s: f64) -> f64 {
    (-s * s).exp() / PI.sqrt()
}

fn spectral_points(n: usize) -> Vec<f64> {
    // uniform interior points plus the branch point θ = π
    let mut pts: Vec<f64> = (0..n)
        .map(|j| -PI + 2.0 * PI * (j as f64 + 0.5) / n as f64)
        .collect();
    pts.push(PI);
    pts
}

fn spectral_entries(
    config: &ExperimentConfig,
    quadrature: &crate::generator::QuadratureConfig,
) -> Result<Vec<GeneratorEntry>, HarnessError> {
    let g = &config.generator;
    let mut out = Vec::new();
    for &a in &g.alphas {
        let alpha = Alpha::new(a)?;
        let gen = Generator::new(alpha, config.model.potential.clone(), *quadrature)?;
        for k in 1..=g.max_harmonic {
            let eigen = -(k as f64).powf(a);
            for (kind, f) in [
                ("cos", CircleFunction::cos_harmonic(k)),
                ("sin", CircleFunction::sin_harmonic(k)),
            ] {
                let mut worst = (0.0f64, 0.0f64);
                for theta in spectral_points(g.spectral_points) {
                    let v = gen.circle_l(&f, theta);
                    let err = (v - eigen * f.value(theta)).abs();
                    if err >= worst.0 {
                        worst = (err, v);
                    }
                }
                out.push(GeneratorEntry {
                    operator: "circle_L".to_string(),
                    function_id: format!("{kind}({k}θ)"),
                    alpha: a,
                    value: worst.1,
                    tail_bound: gen.rule().tail_bound(1.0),
                    residual: worst.0,
                    threshold: g.spectral_tolerance,
                    pass: worst.0 < g.spectral_tolerance,
                });
            }
        }
    }
    Ok(out)
}

/// `(value, |value - eigenvalue·f|)` for every spectral probe.
fn spectral_values(
    config: &ExperimentConfig,
    quadrature: &crate::generator::QuadratureConfig,
) -> Result<Vec<(f64, f64)>, HarnessError> {
    let g = &config.generator;
    let mut out = Vec::new();
    for &a in &g.alphas {
        let gen = Generator::new(Alpha::new(a)?, config.model.potential.clone(), *quadrature)?;
        for k in 1..=g.max_harmonic {
            let eigen = -(k as f64).powf(a);
            for f in [CircleFunction::cos_harmonic(k), CircleFunction::sin_harmonic(k)] {
                for theta in spectral_points(g.spectral_points) {
                    let v = gen.circle_l(&f, theta);
                    out.push((v, (v - eigen * f.value(theta)).abs()));
                }
            }
        }
    }
    Ok(out)
}

pub fn generator_report(config: &ExperimentConfig) -> Result<GeneratorReport, HarnessError> {
    config.validate()?;
    let g = &config.generator;
    let q = g.quadrature;
    let spec = &config.model.potential;
    let mut rng = stream(config, "generator/functions").rng();

    let spectral = spectral_entries(config, &q)?;

    let mut integral = Vec::new();
    for i in 0..g.random_polynomials {
        let a = g.alphas[i % g.alphas.len()];
        let degree = rng.random_range(1..=g.polynomial_degree.max(1));
        let f = random_circle_function(&mut rng, degree);
        let gen = Generator::new(Alpha::new(a)?, spec.clone(), q)?;
        let r = gen.integral_l_residual(&f);
        integral.push(GeneratorEntry {
            operator: "integral_L".to_string(),
            function_id: format!("poly-{i}(deg {degree})"),
            alpha: a,
            value: r,
            tail_bound: gen.rule().tail_bound(f.coefficient_l1()),
            residual: r,
            threshold: g.integral_tolerance,
            pass: r < g.integral_tolerance,
        });
    }

    let mut stationarity = Vec::new();
    for i in 0..g.cylinder_functions {
        let a = g.alphas[i % g.alphas.len()];
        // the first half separable, the rest sums of products
        let terms = if i < g.cylinder_functions / 2 { 1 } else { 2 + i % 2 };
        let f = random_cylinder_function(&mut rng, terms);
        let gen = Generator::new(Alpha::new(a)?, spec.clone(), q)?;
        let r = gen.stationarity_residual(&f)?;
        let l1: f64 = f.terms.iter().map(|(c, _)| c.coefficient_l1()).sum();
        stationarity.push(GeneratorEntry {
            operator: "stationarity".to_string(),
            function_id: format!("cylinder-{i}({terms} terms)"),
            alpha: a,
            value: r,
            tail_bound: gen.rule().tail_bound(l1),
            residual: r,
            threshold: g.stationarity_tolerance,
            pass: r < g.stationarity_tolerance,
        });
    }

    let a = config.model.alpha;
    let gen = Generator::new(config.alpha()?, spec.clone(), q)?;
    let control = gen.stationarity_residual_with_density(&negative_control_function(), half_variance_density)?;
    let negative_control = GeneratorEntry {
        operator: "stationarity(wrong variance)".to_string(),
        function_id: "cos(θ)·s·bump(s)".to_string(),
        alpha: a,
        value: control,
        tail_bound: gen.rule().tail_bound(1.0),
        residual: control,
        threshold: g.negative_control_min,
        pass: control > g.negative_control_min,
    };

    let finest = spectral_values(config, &q)?;
    let mut refinement = Vec::new();
    for level in 0..3 {
        let nodes = q.pv_nodes >> level;
        let coarse = crate::generator::QuadratureConfig { pv_nodes: nodes, ..q };
        let values = spectral_values(config, &coarse)?;
        let max_spectral_error = values.iter().map(|v| v.1).fold(0.0, f64::max);
        let deviation_from_finest = values
            .iter()
            .zip(&finest)
            .map(|(a, b)| (a.0 - b.0).abs())
            .fold(0.0, f64::max);
        refinement.push(RefinementLevel {
            pv_nodes: nodes,
            max_spectral_error,
            deviation_from_finest,
        });
    }
    let refinement_monotone = refinement
        .windows(2)
        .all(|w| w[1].deviation_from_finest > w[0].deviation_from_finest);

    let pass = spectral
        .iter()
        .chain(&integral)
        .chain(&stationarity)
        .all(|e| e.pass)
        && negative_control.pass;
    Ok(GeneratorReport {
        provenance: Provenance::of(config),
        spectral,
        integral,
        stationarity,
        negative_control,
        refinement,
        refinement_monotone,
        pass,
    })
}

pub fn run_generator_checks(config: &ExperimentConfig) -> Result<LegOutcome, HarnessError> {
    let report = generator_report(config)?;
    let mut out = LegWriter::new(config, "generator")?;
    out.write_json("generator_report.json", &report)?;
    out.finish(config, report.pass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub provenance: Provenance,
    pub probes: FlowCheckReport,
    pub semigroup: SemigroupReport,
    pub pass: bool,
}

/// `g(θ, s) = cos θ · bump(s)` used by the semigroup comparison.
pub fn semigroup_test_function(radius: f64) -> CylinderFunction {
    CylinderFunction::separable(
        CircleFunction::cos_harmonic(1),
        BumpPolynomial::new(vec![1.0], radius),
    )
}

pub fn flow_report(config: &ExperimentConfig) -> Result<FlowReport, HarnessError> {
    config.validate()?;
    let spec = &config.model.potential;
    let probes = flow::run_flow_probes(spec, &config.flow.probes, &stream(config, "flow/probes"))?;
    let sg = &config.flow.semigroup;
    let setup = SemigroupSetup {
        alpha: config.alpha()?,
        dt: sg.dt,
        t: sg.t,
        paths: sg.paths,
        h: sg.h,
        bands: sg.bands,
    };
    let semigroup = flow::semigroup_derivative_check(
        &semigroup_test_function(sg.bump_radius),
        sg.x,
        spec,
        &setup,
        &stream(config, "flow/semigroup"),
    )?;
    let pass = probes.pass && semigroup.pass;
    Ok(FlowReport {
        provenance: Provenance::of(config),
        probes,
        semigroup,
        pass,
    })
}

pub fn run_flow_checks(config: &ExperimentConfig) -> Result<LegOutcome, HarnessError> {
    let report = flow_report(config)?;
    let mut out = LegWriter::new(config, "flow")?;
    out.write_json("flow_report.json", &report)?;
    let mut csv = String::from("bound,probe,constant,measured,slack,converged,pass\n");
    for c in &report.probes.certificates {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            serde_json::to_value(c.bound).expect("serialises").as_str().unwrap_or("?"),
            c.probe,
            c.constant,
            c.measured,
            c.slack,
            c.converged,
            c.pass
        ));
    }
    out.write("certificates.csv", csv.as_bytes())?;
    out.finish(config, report.pass)
}

/// Runs every leg in sequence.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<LegOutcome>, HarnessError> {
    config.validate()?;
    Ok(vec![
        run_simulate(config)?,
        run_stationary(config)?,
        run_generator_checks(config)?,
        run_flow_checks(config)?,
    ])
}

/// Reads a manifest back, e.g. to compare digests between runs.
pub fn read_manifest(dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = dir.join("manifest.json");
    let text = fs::read(&path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&text).map_err(|e| HarnessError::ParseConfig {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
