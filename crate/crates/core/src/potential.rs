//! The periodic potential `W(y) = a₀ + Σ_k (a_k cos ky + b_k sin ky)` and the
//! constants derived from it for the flow bounds.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest derivative order exposed publicly.
pub const MAX_ORDER: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential must have a non-zero harmonic of order >= 1")]
    Constant,
    #[error("potential coefficients must be finite")]
    NonFinite,
    #[error("derivative order {0} exceeds 5")]
    OrderTooHigh(u32),
    #[error("band parameters must be non-negative and finite (r = {r}, t0 = {t0})")]
    InvalidBand { r: f64, t0: f64 },
}

/// Truncated Fourier series for `W`. Index `k` of each coefficient vector is
/// the `k`-th harmonic; `sine[0]` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPotential", into = "RawPotential")]
pub struct PotentialSpec {
    cosine: Vec<f64>,
    sine: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPotential {
    #[serde(default)]
    cosine: Vec<f64>,
    #[serde(default)]
    sine: Vec<f64>,
}

impl TryFrom<RawPotential> for PotentialSpec {
    type Error = PotentialError;
    fn try_from(raw: RawPotential) -> Result<Self, Self::Error> {
        PotentialSpec::new(raw.cosine, raw.sine)
    }
}

impl From<PotentialSpec> for RawPotential {
    fn from(p: PotentialSpec) -> Self {
        RawPotential {
            cosine: p.cosine,
            sine: p.sine,
        }
    }
}

impl PotentialSpec {
    pub fn new(mut cosine: Vec<f64>, mut sine: Vec<f64>) -> Result<Self, PotentialError> {
        if cosine.iter().chain(&sine).any(|c| !c.is_finite()) {
            return Err(PotentialError::NonFinite);
        }
        let len = cosine.len().max(sine.len()).max(1);
        cosine.resize(len, 0.0);
        sine.resize(len, 0.0);
        sine[0] = 0.0;
        let nonconstant = (1..len).any(|k| cosine[k] != 0.0 || sine[k] != 0.0);
        if !nonconstant {
            return Err(PotentialError::Constant);
        }
        Ok(Self { cosine, sine })
    }

    /// `W(y) = cos y`.
    pub fn cosine() -> Self {
        Self::new(vec![0.0, 1.0], vec![]).expect("cos is non-constant")
    }

    pub fn max_harmonic(&self) -> usize {
        self.cosine.len() - 1
    }

    pub fn cosine_coeffs(&self) -> &[f64] {
        &self.cosine
    }

    pub fn sine_coeffs(&self) -> &[f64] {
        &self.sine
    }

    /// Every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, PotentialError> {
        Self::new(
            self.cosine.iter().map(|c| c * factor).collect(),
            self.sine.iter().map(|c| c * factor).collect(),
        )
    }

    /// Largest absolute coefficient, used as a scale for tolerances.
    pub fn coefficient_scale(&self) -> f64 {
        self.cosine
            .iter()
            .chain(&self.sine)
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn eval_derivative(&self, y: f64, order: u32) -> Result<f64, PotentialError> {
        if order > MAX_ORDER {
            return Err(PotentialError::OrderTooHigh(order));
        }
        Ok(self.derivative(y, order))
    }

    /// Termwise derivative of any order.
    pub(crate) fn derivative(&self, y: f64, order: u32) -> f64 {
        let mut acc = if order == 0 { self.cosine[0] } else { 0.0 };
        for k in 1..self.cosine.len() {
            let (a, b) = (self.cosine[k], self.sine[k]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (s, c) = (kf * y).sin_cos();
            let term = match order % 4 {
                0 => a * c + b * s,
                1 => -a * s + b * c,
                2 => -a * c - b * s,
                _ => a * s - b * c,
            };
            acc += kf.powi(order as i32) * term;
        }
        acc
    }

    /// `(W'(y), W''(y))` with one trigonometric evaluation per harmonic.
    #[inline]
    pub fn slope_and_curvature(&self, y: f64) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for k in 1..self.cosine.len() {
            let (a, b) = (self.cosine[k], self.sine[k]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (s, c) = (kf * y).sin_cos();
            d1 += kf * (-a * s + b * c);
            d2 += kf * kf * (-a * c - b * s);
        }
        (d1, d2)
    }

    /// Derivatives of orders 1 through 4, `[W', W'', W''', W'''']`.
    pub fn derivatives_1_to_4(&self, y: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for k in 1..self.cosine.len() {
            let (a, b) = (self.cosine[k], self.sine[k]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (s, c) = (kf * y).sin_cos();
            let p = -a * s + b * c;
            let q = -a * c - b * s;
            out[0] += kf * p;
            out[1] += kf * kf * q;
            out[2] += kf * kf * kf * (-p);
            out[3] += kf * kf * kf * kf * (-q);
        }
        out
    }

    pub fn sup_norm(&self, order: u32) -> Result<f64, PotentialError> {
        if order > MAX_ORDER {
            return Err(PotentialError::OrderTooHigh(order));
        }
        Ok(self.sup_norm_unchecked(order))
    }

    fn sup_norm_unchecked(&self, order: u32) -> f64 {
        let n = 4096.max(128 * self.max_harmonic());
        let h = TAU / n as f64;
        let values: Vec<f64> = (0..n)
            .map(|i| self.derivative(i as f64 * h, order).abs())
            .collect();
        let mut best = values.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            let prev = values[(i + n - 1) % n];
            let next = values[(i + 1) % n];
            if values[i] >= prev && values[i] >= next {
                let x = i as f64 * h;
                let refined = golden_max(|y| self.derivative(y, order).abs(), x - h, x + h);
                best = best.max(refined);
            }
        }
        best
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(0.5 * (a + b)))
}

/// Band `ℝ × [-s_bound, s_bound]` confining every trajectory started within
/// distance 3 of the support `ℝ × [-r, r]` up to time `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinementBand {
    pub r: f64,
    pub t0: f64,
    pub curvature_sup: f64,
}

impl ConfinementBand {
    pub fn new(r: f64, t0: f64, spec: &PotentialSpec) -> Result<Self, PotentialError> {
        Self::from_curvature_sup(r, t0, spec.sup_norm_unchecked(2))
    }

    pub fn from_curvature_sup(r: f64, t0: f64, curvature_sup: f64) -> Result<Self, PotentialError> {
        if !(r >= 0.0 && t0 >= 0.0 && r.is_finite() && t0.is_finite()) {
            return Err(PotentialError::InvalidBand { r, t0 });
        }
        Ok(Self {
            r,
            t0,
            curvature_sup,
        })
    }

    /// `r + 2 t0 ‖W''‖_∞ + 3`
    pub fn s_bound(&self) -> f64 {
        self.r + 2.0 * self.t0 * self.curvature_sup + 3.0
    }

    /// Half-width of the support enlarged by the drift over `[0, t0]`,
    /// `r + t0 ‖W''‖_∞`.
    pub fn support_bound(&self) -> f64 {
        self.r + self.t0 * self.curvature_sup
    }
}

/// Sup-norms of the planar field `V(y, s) = (W'(y) s, W''(y))` and of its
/// derivatives over a band `|s| <= s_bound`, summed over components and
/// multi-indices of each order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldNorms {
    pub s_bound: f64,
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl VectorFieldNorms {
    pub fn on_half_width(spec: &PotentialSpec, s_bound: f64) -> Self {
        let w: Vec<f64> = (1..=5).map(|k| spec.sup_norm_unchecked(k)).collect();
        let (w1, w2, w3, w4, w5) = (w[0], w[1], w[2], w[3], w[4]);
        Self {
            s_bound,
            d0: w1 * s_bound + w2,
            // ∂_y V1 = W'' s, ∂_s V1 = W', ∂_y V2 = W''', ∂_s V2 = 0
            d1: w2 * s_bound + w1 + w3,
            // ∂_yy V1 = W''' s, ∂_ys V1 = W'', ∂_yy V2 = W''''
            d2: w3 * s_bound + w2 + w4,
            // ∂_yyy V1 = W'''' s, ∂_yys V1 = W''', ∂_yyy V2 = W^(5)
            d3: w4 * s_bound + w3 + w5,
        }
    }

    pub fn on_band(spec: &PotentialSpec, band: &ConfinementBand) -> Self {
        Self::on_half_width(spec, band.s_bound())
    }
}

pub fn vector_field_d1_norm(spec: &PotentialSpec, band: &ConfinementBand) -> f64 {
    VectorFieldNorms::on_band(spec, band).d1
}

/// Horizon `t* = 1/(2 ‖D¹V‖) ∧ t0` up to which the flow bounds hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowHorizon {
    pub t_star: f64,
    pub d1_norm: f64,
}

impl FlowHorizon {
    pub fn new(d1_norm: f64, t0: f64) -> Self {
        let inv = if d1_norm == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (2.0 * d1_norm)
        };
        Self {
            t_star: inv.min(t0),
            d1_norm,
        }
    }
}
