//! Quadrature for the nonlocal generator of the wrapped process.
//!
//! The periodic fractional Laplacian is evaluated in its paired form
//!
//! ```text
//! A_α ∫_0^π (f(θ+u) + f(θ-u) - 2 f(θ)) · (u^{-1-α} + K(u)) du
//! ```
//!
//! where `K(u) = Σ_{n≠0} |u + 2nπ|^{-1-α}` collects the periodic images.
//! Pairing `±u` removes the first-order Taylor term; below the cutoff `ε`
//! the remaining integrand is replaced by its second-order Taylor form and
//! integrated in closed form. On `[ε, π]` the integral uses Gauss–Legendre
//! panels graded geometrically towards `ε`. Images with `|n| <= N` are
//! summed explicitly and the rest through the Hurwitz zeta function.

mod functions;

pub use functions::{BumpPolynomial, CircleFunction, CylinderFunction};

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::PotentialSpec;
use crate::special::{compensated_sum, hurwitz_zeta, GaussLegendre};
use crate::stable_levy::{alpha_constant, Alpha};

const PANEL_ORDER: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("invalid quadrature config: {field} = {value} ({reason})")]
    InvalidConfig {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(
        "quadrature did not converge: doubling pv_nodes moved the value by {delta:e} \
         (allowed {allowed:e})"
    )]
    NonConvergence { delta: f64, allowed: f64 },
    #[error("s-domain half-width {s_domain} does not cover the support radius {support}")]
    DomainTooSmall { s_domain: f64, support: f64 },
}

/// Cutoffs and node counts for the generator quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Principal-value cutoff `ε`; below it the integrand is Taylor-expanded.
    pub pv_cutoff: f64,
    /// Nodes on `[ε, π]` (rounded up to whole 16-point panels).
    pub pv_nodes: usize,
    /// Periodic images summed explicitly, `|n| <= N`.
    pub tail_terms: usize,
    /// Add the images beyond `N` in closed form.
    pub analytic_remainder: bool,
    /// Half-width of the `s` integration window.
    pub s_domain: f64,
    pub s_nodes: usize,
    pub theta_nodes: usize,
    /// Requested accuracy for the refinement check; 0 disables it.
    pub tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            pv_cutoff: 1e-4,
            pv_nodes: 128,
            tail_terms: 64,
            analytic_remainder: true,
            s_domain: 10.0,
            s_nodes: 64,
            theta_nodes: 512,
            tolerance: 1e-7,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |field, value, reason| {
            Err(GeneratorError::InvalidConfig {
                field,
                value,
                reason,
            })
        };
        if !(self.pv_cutoff > 0.0 && self.pv_cutoff < PI) {
            return bad("pv_cutoff", self.pv_cutoff, "must lie in (0, pi)");
        }
        if self.pv_nodes < PANEL_ORDER {
            return bad("pv_nodes", self.pv_nodes as f64, "must be at least 16");
        }
        if self.tail_terms < 1 {
            return bad("tail_terms", 0.0, "must be at least 1");
        }
        if !(self.s_domain > 0.0 && self.s_domain.is_finite()) {
            return bad("s_domain", self.s_domain, "must be positive");
        }
        if self.s_nodes < 2 {
            return bad("s_nodes", self.s_nodes as f64, "must be at least 2");
        }
        if self.theta_nodes < 4 {
            return bad("theta_nodes", self.theta_nodes as f64, "must be at least 4");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance", self.tolerance, "must be non-negative");
        }
        Ok(())
    }

    fn refined(&self) -> Self {
        Self {
            pv_nodes: 2 * self.pv_nodes,
            ..*self
        }
    }
}

/// A generator value with the bound on the periodic images beyond `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    /// `2 A_α 2π ‖f‖_∞ Σ_{n>N} (2πn - π)^{-1-α}`. When the analytic
    /// remainder is enabled this part is already included in `value`.
    pub tail_bound: f64,
    /// Change in `value` when `pv_nodes` is doubled (0 when not checked).
    pub refinement_delta: f64,
}

/// Precomputed nodes and kernel weights for one `(α, config)` pair.
#[derive(Debug, Clone)]
pub struct KernelRule {
    alpha: f64,
    scale: f64,
    tail_terms: usize,
    analytic_remainder: bool,
    nodes: Vec<f64>,
    /// Quadrature weight times `A_α` times the full kernel at the node.
    weights: Vec<f64>,
    /// Coefficient of `f''(θ)` from the Taylor region `|u| < ε`.
    local_coeff: f64,
}

impl KernelRule {
    pub fn new(alpha: Alpha, q: &QuadratureConfig) -> Result<Self, GeneratorError> {
        q.validate()?;
        let a = alpha.get();
        let scale = alpha_constant(alpha);
        let eps = q.pv_cutoff;
        let panels = q.pv_nodes.div_ceil(PANEL_ORDER);
        let rule = GaussLegendre::new(PANEL_ORDER);
        let ratio = (PI / eps).ln() / panels as f64;
        let mut nodes = Vec::with_capacity(panels * PANEL_ORDER);
        let mut quad_weights = Vec::with_capacity(panels * PANEL_ORDER);
        for p in 0..panels {
            let lo = eps * (ratio * p as f64).exp();
            let hi = if p + 1 == panels {
                PI
            } else {
                eps * (ratio * (p + 1) as f64).exp()
            };
            for (x, w) in rule.mapped(lo, hi) {
                nodes.push(x);
                quad_weights.push(w);
            }
        }
        let mut this = Self {
            alpha: a,
            scale,
            tail_terms: q.tail_terms,
            analytic_remainder: q.analytic_remainder,
            nodes,
            weights: Vec::new(),
            local_coeff: 0.0,
        };
        this.weights = quad_weights
            .iter()
            .zip(&this.nodes)
            .map(|(&w, &u)| w * scale * this.kernel(u))
            .collect();
        // ∫_0^ε u² (u^{-1-α} + K(u)) du with K ≈ K(0) on the tiny interval
        this.local_coeff =
            scale * (eps.powf(2.0 - a) / (2.0 - a) + this.image_kernel(0.0) * eps.powi(3) / 3.0);
        Ok(this)
    }

    /// `Σ_{n≠0} |u + 2nπ|^{-1-α}` for `|u| <= π`: explicit images up to `N`,
    /// plus the Hurwitz-zeta remainder when enabled.
    pub fn image_kernel(&self, u: f64) -> f64 {
        let s = 1.0 + self.alpha;
        let mut acc = 0.0;
        for n in 1..=self.tail_terms {
            let shift = TAU * n as f64;
            acc += (shift + u).powf(-s) + (shift - u).powf(-s);
        }
        if self.analytic_remainder {
            let base = (self.tail_terms + 1) as f64;
            let x = u / TAU;
            acc += TAU.powf(-s) * (hurwitz_zeta(s, base + x) + hurwitz_zeta(s, base - x));
        }
        acc
    }

    /// Full kernel `|u|^{-1-α} + Σ_{n≠0} |u + 2nπ|^{-1-α}`.
    pub fn kernel(&self, u: f64) -> f64 {
        u.abs().powf(-1.0 - self.alpha) + self.image_kernel(u)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Bound on the images beyond `N` for a function with sup-norm `sup`.
    pub fn tail_bound(&self, sup: f64) -> f64 {
        let s = 1.0 + self.alpha;
        let rest = TAU.powf(-s) * hurwitz_zeta(s, self.tail_terms as f64 + 0.5);
        2.0 * self.scale * TAU * sup * rest
    }

    /// Paired quadrature given `u ↦ f(θ+u) + f(θ-u) - 2f(θ)` and `f''(θ)`.
    fn apply<F: Fn(f64) -> f64>(&self, paired: F, second: f64) -> f64 {
        let body = compensated_sum(
            self.nodes
                .iter()
                .zip(&self.weights)
                .map(|(&u, &w)| w * paired(u)),
        );
        body + self.local_coeff * second
    }

    /// `L g` at `z = e^{iθ}`, through the identification `θ ↦ e^{iθ}`.
    fn apply_to(&self, g: &CircleFunction, theta: f64) -> f64 {
        let increment = g.increment_at(theta);
        self.apply(|u| increment(u) + increment(-u), g.derivative(theta, 2))
    }
}

fn check_refinement(
    base: f64,
    refined: f64,
    q: &QuadratureConfig,
) -> Result<f64, GeneratorError> {
    let delta = (refined - base).abs();
    if q.tolerance > 0.0 && delta > 10.0 * q.tolerance {
        return Err(GeneratorError::NonConvergence {
            delta,
            allowed: 10.0 * q.tolerance,
        });
    }
    Ok(delta)
}

/// `-(-Δ)^{α/2} f(θ)` for a 2π-periodic `f`.
pub fn frac_laplacian_periodic(
    f: &CircleFunction,
    theta: f64,
    alpha: Alpha,
    q: &QuadratureConfig,
) -> Result<Evaluation, GeneratorError> {
    let rule = KernelRule::new(alpha, q)?;
    let increment = f.increment_at(theta);
    let paired = |u: f64| increment(u) + increment(-u);
    let value = rule.apply(paired, f.derivative(theta, 2));
    let refinement_delta = if q.tolerance > 0.0 {
        let fine = KernelRule::new(alpha, &q.refined())?;
        let refined = fine.apply(paired, f.derivative(theta, 2));
        check_refinement(value, refined, q)?
    } else {
        0.0
    };
    Ok(Evaluation {
        value,
        tail_bound: rule.tail_bound(f.coefficient_l1()),
        refinement_delta,
    })
}

/// The circle operator `L g(z)` at `z = e^{iθ}`.
pub fn circle_l(
    f: &CircleFunction,
    theta: f64,
    alpha: Alpha,
    q: &QuadratureConfig,
) -> Result<Evaluation, GeneratorError> {
    let rule = KernelRule::new(alpha, q)?;
    let value = rule.apply_to(f, theta);
    let refinement_delta = if q.tolerance > 0.0 {
        let fine = KernelRule::new(alpha, &q.refined())?;
        check_refinement(value, fine.apply_to(f, theta), q)?
    } else {
        0.0
    };
    Ok(Evaluation {
        value,
        tail_bound: rule.tail_bound(f.coefficient_l1()),
        refinement_delta,
    })
}

/// Precomputed generator for one `(α, potential, config)`.
#[derive(Debug, Clone)]
pub struct Generator {
    rule: KernelRule,
    spec: PotentialSpec,
    config: QuadratureConfig,
}

impl Generator {
    pub fn new(
        alpha: Alpha,
        spec: PotentialSpec,
        config: QuadratureConfig,
    ) -> Result<Self, GeneratorError> {
        Ok(Self {
            rule: KernelRule::new(alpha, &config)?,
            spec,
            config,
        })
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.config
    }

    pub fn rule(&self) -> &KernelRule {
        &self.rule
    }

    pub fn circle_l(&self, g: &CircleFunction, theta: f64) -> f64 {
        self.rule.apply_to(g, theta)
    }

    /// `L_z f + W'(θ) s f_θ + W''(θ) f_s`.
    pub fn full(&self, f: &CylinderFunction, theta: f64, s: f64) -> f64 {
        let (slope, curvature) = self.spec.slope_and_curvature(theta);
        let nonlocal: f64 = f
            .terms
            .iter()
            .map(|(g, q)| {
                let weight = q.eval(s).0;
                if weight == 0.0 {
                    0.0
                } else {
                    self.circle_l(g, theta) * weight
                }
            })
            .sum();
        nonlocal + slope * s * f.d_theta(theta, s) + curvature * f.d_s(theta, s)
    }

    fn theta_grid(&self) -> impl IndexedParallelIterator<Item = f64> {
        let n = self.config.theta_nodes;
        (0..n).into_par_iter().map(move |i| -PI + TAU * (i as f64 + 0.5) / n as f64)
    }

    /// `|∫_circle L f(θ) dθ|` on the uniform θ grid.
    pub fn integral_l_residual(&self, f: &CircleFunction) -> f64 {
        let n = self.config.theta_nodes;
        let values: Vec<f64> = self.theta_grid().map(|t| self.circle_l(f, t)).collect();
        (TAU / n as f64 * compensated_sum(values)).abs()
    }

    /// `|(1/2π) ∫∫ 𝒢f(θ, s) ρ(s) ds dθ|` for a density `ρ` in `s`.
    pub fn stationarity_residual_with_density<D>(
        &self,
        f: &CylinderFunction,
        density: D,
    ) -> Result<f64, GeneratorError>
    where
        D: Fn(f64) -> f64 + Sync,
    {
        let support = f.support_radius();
        if support == 0.0 {
            return Ok(0.0);
        }
        if self.config.s_domain < support {
            return Err(GeneratorError::DomainTooSmall {
                s_domain: self.config.s_domain,
                support,
            });
        }
        // Each term's s-factor vanishes outside its own bump, so integrate
        // it on that interval alone; the weights do not depend on θ.
        let s_rule = GaussLegendre::new(self.config.s_nodes);
        let moments: Vec<[f64; 3]> = f
            .terms
            .iter()
            .map(|(_, q)| {
                let mut m = [0.0; 3];
                for (s, w) in s_rule.mapped(-q.radius, q.radius) {
                    let (qv, qd) = q.eval(s);
                    let w = w * density(s);
                    m[0] += w * qv;
                    m[1] += w * s * qv;
                    m[2] += w * qd;
                }
                m
            })
            .collect();
        let n = self.config.theta_nodes;
        let per_theta: Vec<f64> = self
            .theta_grid()
            .map(|theta| {
                let (slope, curvature) = self.spec.slope_and_curvature(theta);
                compensated_sum(f.terms.iter().zip(&moments).map(|((g, _), m)| {
                    self.circle_l(g, theta) * m[0]
                        + slope * g.derivative(theta, 1) * m[1]
                        + curvature * g.value(theta) * m[2]
                }))
            })
            .collect();
        let integral = TAU / n as f64 * compensated_sum(per_theta);
        Ok((integral / TAU).abs())
    }

    /// Residual against `uniform(circle) × N(0, 1)`.
    pub fn stationarity_residual(&self, f: &CylinderFunction) -> Result<f64, GeneratorError> {
        self.stationarity_residual_with_density(f, standard_normal_density)
    }
}

pub fn standard_normal_density(s: f64) -> f64 {
    (-0.5 * s * s).exp() / TAU.sqrt()
}

pub fn full_generator(
    f: &CylinderFunction,
    theta: f64,
    s: f64,
    alpha: Alpha,
    spec: &PotentialSpec,
    q: &QuadratureConfig,
) -> Result<f64, GeneratorError> {
    Ok(Generator::new(alpha, spec.clone(), *q)?.full(f, theta, s))
}

pub fn integral_l_residual(
    f: &CircleFunction,
    alpha: Alpha,
    q: &QuadratureConfig,
) -> Result<f64, GeneratorError> {
    // the potential plays no role in L
    Ok(Generator::new(alpha, PotentialSpec::cosine(), *q)?.integral_l_residual(f))
}

pub fn stationarity_residual(
    f: &CylinderFunction,
    alpha: Alpha,
    spec: &PotentialSpec,
    q: &QuadratureConfig,
) -> Result<f64, GeneratorError> {
    Generator::new(alpha, spec.clone(), *q)?.stationarity_residual(f)
}
