//! Experiment configuration: one TOML file plus `KEY=VALUE` overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file,
//! `--override` entries in the order given, then the dedicated `--seed` and
//! `--out` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::flow::ProbeConfig;
use crate::generator::QuadratureConfig;
use crate::potential::{PotentialSpec, VectorFieldNorms};
use crate::stable_levy::Alpha;
use crate::stationary::GofThresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every module draws from a named sub-stream of it.
    pub seed: u64,
    /// Where outputs go; not part of the experiment's identity, so it is
    /// left out of reports and the digest.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub simulate: SimulateConfig,
    pub stationary: StationaryConfig,
    pub generator: GeneratorCheckConfig,
    pub flow: FlowCheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            simulate: SimulateConfig::default(),
            stationary: StationaryConfig::default(),
            generator: GeneratorCheckConfig::default(),
            flow: FlowCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub potential: PotentialSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            potential: PotentialSpec::cosine(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub dt: f64,
    pub horizon: f64,
    /// `(y, s)` at time 0.
    pub start: [f64; 2],
    /// Clamp the memory term at `±clamp` when set.
    pub clamp: Option<u32>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            start: [0.0, 0.0],
            clamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub dt: f64,
    pub n_samples: usize,
    pub burn_in: f64,
    /// Fixed thinning interval; chosen from a pilot run when absent.
    pub thinning: Option<f64>,
    pub thinning_factor: f64,
    pub pilot_horizon: f64,
    pub pilot_spacing: f64,
    /// Each start gives one chain; all chains are compared with the first.
    pub starts: Vec<[f64; 2]>,
    /// Parallel chains per start.
    pub chains: usize,
    /// Level of the two-sample comparison between starts.
    pub start_level: f64,
    /// Repeat the first start at `dt / 2`.
    pub refine_dt: bool,
    pub thresholds: GofThresholds,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            n_samples: 10_000,
            burn_in: 50.0,
            thinning: None,
            thinning_factor: 5.0,
            pilot_horizon: 10_000.0,
            pilot_spacing: 0.1,
            starts: vec![[0.0, 0.0], [2.0, 1.5]],
            chains: 1,
            start_level: 0.01,
            refine_dt: true,
            thresholds: GofThresholds::default(),
        }
    }
}

impl StationaryConfig {
    /// Five expected counts per cell of the independence table.
    pub fn min_samples(&self) -> usize {
        5 * self.thresholds.theta_bins * self.thresholds.s_bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorCheckConfig {
    pub quadrature: QuadratureConfig,
    pub alphas: Vec<f64>,
    pub max_harmonic: usize,
    pub spectral_points: usize,
    pub spectral_tolerance: f64,
    pub random_polynomials: usize,
    pub polynomial_degree: usize,
    pub integral_tolerance: f64,
    pub cylinder_functions: usize,
    pub stationarity_tolerance: f64,
    /// The wrong-variance control must exceed this.
    pub negative_control_min: f64,
}

impl Default for GeneratorCheckConfig {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            alphas: vec![0.5, 1.0, 1.5],
            max_harmonic: 8,
            spectral_points: 7,
            spectral_tolerance: 1e-4,
            random_polynomials: 20,
            polynomial_degree: 8,
            integral_tolerance: 1e-6,
            cylinder_functions: 10,
            stationarity_tolerance: 1e-6,
            negative_control_min: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemigroupConfig {
    pub x: [f64; 2],
    pub t: f64,
    pub paths: usize,
    pub dt: f64,
    pub h: f64,
    pub bands: f64,
    /// `g(θ, s) = cos θ · bump(s)` with this bump radius.
    pub bump_radius: f64,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self {
            x: [0.3, 0.2],
            t: 0.05,
            paths: 10_000,
            dt: 1e-3,
            h: 1e-2,
            bands: 3.0,
            bump_radius: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FlowCheckConfig {
    pub probes: ProbeConfig,
    pub semigroup: SemigroupConfig,
}

fn invalid(field: &str, value: impl ToString, reason: &str) -> HarnessError {
    HarnessError::Invalid {
        field: field.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, v, "must be positive and finite"))
    }
}

impl ExperimentConfig {
    /// Reads `path` (when given) over the defaults and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| HarnessError::ReadConfig {
                    path: p.display().to_string(),
                    source,
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| HarnessError::ParseConfig {
                        path: p.display().to_string(),
                        message: e.to_string(),
                    })?
            }
            None => toml::Table::new(),
        };
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        let config: ExperimentConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| HarnessError::ParseConfig {
                    path: origin,
                    message: e.to_string(),
                })?;
        Ok(config)
    }

    pub fn alpha(&self) -> Result<Alpha, HarnessError> {
        Alpha::new(self.model.alpha).map_err(|_| invalid("model.alpha", self.model.alpha, "must lie in (0, 2)"))
    }

    /// Flow horizon `t*` for the configured potential and band.
    pub fn t_star(&self) -> f64 {
        let p = &self.flow.probes;
        let norms = VectorFieldNorms::on_half_width(&self.model.potential, p.s_bound);
        crate::flow::FlowBounds::new(norms, p.t0).t_star
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.alpha()?;
        let sim = &self.simulate;
        positive("simulate.dt", sim.dt)?;
        positive("simulate.horizon", sim.horizon)?;
        if sim.start.iter().any(|v| !v.is_finite()) {
            return Err(invalid("simulate.start", format!("{:?}", sim.start), "must be finite"));
        }
        if sim.clamp == Some(0) {
            return Err(invalid("simulate.clamp", 0, "must be at least 1"));
        }

        let st = &self.stationary;
        positive("stationary.dt", st.dt)?;
        if st.n_samples < st.min_samples() {
            return Err(invalid(
                "stationary.n_samples",
                st.n_samples,
                &format!(
                    "must be at least {} (5 per cell of the {}x{} independence table)",
                    st.min_samples(),
                    st.thresholds.theta_bins,
                    st.thresholds.s_bins
                ),
            ));
        }
        if !(st.burn_in >= 0.0 && st.burn_in.is_finite()) {
            return Err(invalid("stationary.burn_in", st.burn_in, "must be non-negative"));
        }
        if let Some(th) = st.thinning {
            if !(th >= st.dt && th.is_finite()) {
                return Err(invalid("stationary.thinning", th, "must be at least dt"));
            }
        }
        positive("stationary.thinning_factor", st.thinning_factor)?;
        positive("stationary.pilot_spacing", st.pilot_spacing)?;
        if !(st.pilot_horizon > st.pilot_spacing) {
            return Err(invalid("stationary.pilot_horizon", st.pilot_horizon, "must exceed pilot_spacing"));
        }
        if st.starts.is_empty() {
            return Err(invalid("stationary.starts", "[]", "at least one start is needed"));
        }
        if st.chains == 0 {
            return Err(invalid("stationary.chains", 0, "must be at least 1"));
        }
        if !(st.start_level > 0.0 && st.start_level < 1.0) {
            return Err(invalid("stationary.start_level", st.start_level, "must lie in (0, 1)"));
        }

        let g = &self.generator;
        g.quadrature.validate().map_err(|e| match e {
            crate::generator::GeneratorError::InvalidConfig { field, value, reason } => {
                invalid(&format!("generator.quadrature.{field}"), value, reason)
            }
            other => HarnessError::Generator(other),
        })?;
        if g.quadrature.pv_nodes < 64 {
            return Err(invalid(
                "generator.quadrature.pv_nodes",
                g.quadrature.pv_nodes,
                "must be at least 64 so the refinement study can halve it twice",
            ));
        }
        for &a in &g.alphas {
            Alpha::new(a).map_err(|_| invalid("generator.alphas", a, "must lie in (0, 2)"))?;
        }
        if g.alphas.is_empty() {
            return Err(invalid("generator.alphas", "[]", "at least one alpha is needed"));
        }

        let p = &self.flow.probes;
        positive("flow.probes.dt", p.dt)?;
        if !(p.alpha_low > 0.0 && p.alpha_low <= p.alpha_high && p.alpha_high < 2.0) {
            return Err(invalid(
                "flow.probes.alpha_low",
                format!("{}..{}", p.alpha_low, p.alpha_high),
                "alpha range must lie in (0, 2)",
            ));
        }
        if !(p.h_max > 0.0 && p.h_max < 1.0) {
            return Err(invalid("flow.probes.h_max", p.h_max, "must lie in (0, 1)"));
        }
        positive("flow.probes.t0", p.t0)?;
        p.ladder
            .validate()
            .map_err(|e| invalid("flow.probes.ladder", format!("{:?}", p.ladder), &e.to_string()))?;
        let t_star = self.t_star();
        if let Some(t) = p.t_max {
            if t > t_star * (1.0 + 1e-12) {
                return Err(invalid(
                    "flow.probes.t_max",
                    t,
                    &format!("exceeds the flow horizon t_star = {t_star}"),
                ));
            }
            positive("flow.probes.t_max", t)?;
        }
        let sg = &self.flow.semigroup;
        if sg.t > t_star * (1.0 + 1e-12) || !(sg.t >= 0.0) {
            return Err(invalid(
                "flow.semigroup.t",
                sg.t,
                &format!("must lie in [0, t_star] with t_star = {t_star}"),
            ));
        }
        positive("flow.semigroup.dt", sg.dt)?;
        positive("flow.semigroup.bump_radius", sg.bump_radius)?;
        if sg.paths < 2 {
            return Err(invalid("flow.semigroup.paths", sg.paths, "must be at least 2"));
        }
        if !(sg.h > 0.0 && sg.h < 1.0) {
            return Err(invalid("flow.semigroup.h", sg.h, "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

/// Sets `a.b.c = value` in `table`; the value is parsed as TOML and falls
/// back to a plain string.
pub fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), HarnessError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| HarnessError::BadOverride(entry.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(HarnessError::BadOverride(entry.to_string()));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cursor = table;
    for part in parts {
        let next = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = next
            .as_table_mut()
            .ok_or_else(|| HarnessError::BadOverride(format!("{entry} ({part} is not a table)")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
