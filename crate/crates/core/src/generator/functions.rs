//! Smooth test functions on the circle and on the cylinder `circle × ℝ`.
//!
//! Both families are closed under differentiation so every partial the
//! generator needs is exact.

use serde::{Deserialize, Serialize};

/// Trigonometric polynomial `c₀ + Σ_k (c_k cos kθ + d_k sin kθ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleFunction {
    cosine: Vec<f64>,
    sine: Vec<f64>,
}

impl CircleFunction {
    pub fn new(mut cosine: Vec<f64>, mut sine: Vec<f64>) -> Self {
        let len = cosine.len().max(sine.len()).max(1);
        cosine.resize(len, 0.0);
        sine.resize(len, 0.0);
        sine[0] = 0.0;
        Self { cosine, sine }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c], vec![])
    }

    /// `cos kθ`
    pub fn cos_harmonic(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        Self::new(c, vec![])
    }

    /// `sin kθ`
    pub fn sin_harmonic(k: usize) -> Self {
        let mut s = vec![0.0; k + 1];
        s[k] = 1.0;
        Self::new(vec![], s)
    }

    pub fn degree(&self) -> usize {
        self.cosine.len() - 1
    }

    pub fn cosine_coeffs(&self) -> &[f64] {
        &self.cosine
    }

    pub fn sine_coeffs(&self) -> &[f64] {
        &self.sine
    }

    /// `Σ |c_k| + |d_k|`, an upper bound for the sup-norm.
    pub fn coefficient_l1(&self) -> f64 {
        self.cosine.iter().chain(&self.sine).map(|c| c.abs()).sum()
    }

    pub fn is_constant(&self) -> bool {
        (1..self.cosine.len()).all(|k| self.cosine[k] == 0.0 && self.sine[k] == 0.0)
    }

    pub fn derivative(&self, theta: f64, order: u32) -> f64 {
        let mut acc = if order == 0 { self.cosine[0] } else { 0.0 };
        for k in 1..self.cosine.len() {
            let (a, b) = (self.cosine[k], self.sine[k]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
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

    pub fn value(&self, theta: f64) -> f64 {
        self.derivative(theta, 0)
    }

    /// `v ↦ g(θ + v) - g(θ)`, evaluated harmonic by harmonic in half-angle
    /// form so that small `v` loses no digits to cancellation.
    pub fn increment_at(&self, theta: f64) -> impl Fn(f64) -> f64 + '_ {
        // (k, g_k(θ), g_k'(θ)/k) for the non-zero harmonics
        let parts: Vec<(f64, f64, f64)> = (1..self.cosine.len())
            .filter(|&k| self.cosine[k] != 0.0 || self.sine[k] != 0.0)
            .map(|k| {
                let (a, b) = (self.cosine[k], self.sine[k]);
                let (s, c) = (k as f64 * theta).sin_cos();
                (k as f64, a * c + b * s, b * c - a * s)
            })
            .collect();
        move |v| {
            parts
                .iter()
                .map(|&(k, h, dh)| {
                    let (s, c) = (0.5 * k * v).sin_cos();
                    // cos kv - 1 = -2 sin²(kv/2), sin kv = 2 sin(kv/2) cos(kv/2)
                    2.0 * s * (dh * c - h * s)
                })
                .sum()
        }
    }

    /// `g(w)` for a point `w = (re, im)` of the unit circle.
    pub fn value_at_point(&self, re: f64, im: f64) -> f64 {
        self.value(im.atan2(re))
    }
}

const BUMP_POWER: i32 = 3;

/// Polynomial in `s` times the `C²` bump `(1 - (s/r)²)³` supported on
/// `[-r, r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPolynomial {
    /// Monomial coefficients, lowest degree first.
    pub coeffs: Vec<f64>,
    pub radius: f64,
}

impl BumpPolynomial {
    pub fn new(coeffs: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        Self { coeffs, radius }
    }

    fn poly(&self, s: f64) -> [f64; 3] {
        let mut p = 0.0;
        let mut dp = 0.0;
        let mut ddp = 0.0;
        for c in self.coeffs.iter().rev() {
            ddp = ddp * s + 2.0 * dp;
            dp = dp * s + p;
            p = p * s + c;
        }
        [p, dp, ddp]
    }

    /// `(value, derivative)` at `s`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let [v, d, _] = self.eval2(s);
        (v, d)
    }

    /// Value and first two derivatives at `s`.
    pub fn eval2(&self, s: f64) -> [f64; 3] {
        let r = self.radius;
        let x = s / r;
        if x.abs() >= 1.0 {
            return [0.0; 3];
        }
        let one_minus = 1.0 - x * x;
        let bump = one_minus.powi(BUMP_POWER);
        let dbump = -6.0 * x * one_minus * one_minus / r;
        let ddbump = (24.0 * x * x * one_minus - 6.0 * one_minus * one_minus) / (r * r);
        let [p, dp, ddp] = self.poly(s);
        [
            p * bump,
            dp * bump + p * dbump,
            ddp * bump + 2.0 * dp * dbump + p * ddbump,
        ]
    }
}

/// `f(θ, s) = Σ_j g_j(θ) q_j(s)` with each `q_j` a bump polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFunction {
    pub terms: Vec<(CircleFunction, BumpPolynomial)>,
}

impl CylinderFunction {
    pub fn new(terms: Vec<(CircleFunction, BumpPolynomial)>) -> Self {
        Self { terms }
    }

    pub fn separable(g: CircleFunction, q: BumpPolynomial) -> Self {
        Self::new(vec![(g, q)])
    }

    pub fn zero() -> Self {
        Self::new(Vec::new())
    }

    /// Largest bump radius; `f` vanishes for `|s|` at or beyond it.
    pub fn support_radius(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, (_, q)| m.max(q.radius))
    }

    pub fn value(&self, theta: f64, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|(g, q)| g.value(theta) * q.eval(s).0)
            .sum()
    }

    pub fn d_theta(&self, theta: f64, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|(g, q)| g.derivative(theta, 1) * q.eval(s).0)
            .sum()
    }

    pub fn d_s(&self, theta: f64, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|(g, q)| g.value(theta) * q.eval(s).1)
            .sum()
    }

    /// `∂_θθ f`
    pub fn d_theta2(&self, theta: f64, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|(g, q)| g.derivative(theta, 2) * q.eval(s).0)
            .sum()
    }

    /// Gradient `(f_θ, f_s)` and Hessian `[[f_θθ, f_θs], [f_θs, f_ss]]`.
    pub fn gradient_hessian(&self, theta: f64, s: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for (g, q) in &self.terms {
            let [qv, qd, qdd] = q.eval2(s);
            if qv == 0.0 && qd == 0.0 && qdd == 0.0 {
                continue;
            }
            let (gv, gd, gdd) = (g.value(theta), g.derivative(theta, 1), g.derivative(theta, 2));
            grad[0] += gd * qv;
            grad[1] += gv * qd;
            hess[0][0] += gdd * qv;
            hess[0][1] += gd * qd;
            hess[1][1] += gv * qdd;
        }
        hess[1][0] = hess[0][1];
        (grad, hess)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_function_derivatives() {
        let f = CircleFunction::new(vec![0.5, 0.0, 2.0], vec![0.0, 1.0]);
        let t = 0.7;
        let h = 1e-5;
        let fd = (f.value(t + h) - f.value(t - h)) / (2.0 * h);
        assert!((fd - f.derivative(t, 1)).abs() < 1e-8);
        assert!((f.value_at_point(t.cos(), t.sin()) - f.value(t)).abs() < 1e-14);
        assert!(CircleFunction::constant(3.0).is_constant());
    }

    #[test]
    fn bump_is_c2_at_the_edge() {
        let q = BumpPolynomial::new(vec![1.0, 2.0, -0.5], 1.5);
        let (v, d) = q.eval(1.5 - 1e-4);
        assert!(v.abs() < 1e-10 && d.abs() < 1e-6);
        assert_eq!(q.eval(2.0), (0.0, 0.0));
        let s = 0.4;
        let h = 1e-6;
        let fd = (q.eval(s + h).0 - q.eval(s - h).0) / (2.0 * h);
        assert!((fd - q.eval(s).1).abs() < 1e-8);
        let fdd = (q.eval(s + h).1 - q.eval(s - h).1) / (2.0 * h);
        assert!((fdd - q.eval2(s)[2]).abs() < 1e-7);
        let near_edge = q.eval2(1.5 - 1e-7)[2];
        assert!(near_edge.abs() < 1e-5);
    }

    #[test]
    fn cylinder_partials_match_differences() {
        let f = CylinderFunction::new(vec![
            (
                CircleFunction::cos_harmonic(1),
                BumpPolynomial::new(vec![0.0, 1.0], 2.0),
            ),
            (
                CircleFunction::sin_harmonic(2),
                BumpPolynomial::new(vec![1.0, 0.0, 1.0], 1.0),
            ),
        ]);
        let (t, s, h) = (0.3, 0.2, 1e-6);
        let ft = (f.value(t + h, s) - f.value(t - h, s)) / (2.0 * h);
        let fs = (f.value(t, s + h) - f.value(t, s - h)) / (2.0 * h);
        assert!((ft - f.d_theta(t, s)).abs() < 1e-8);
        assert!((fs - f.d_s(t, s)).abs() < 1e-8);
        assert_eq!(f.support_radius(), 2.0);
        let (grad, hess) = f.gradient_hessian(t, s);
        assert_eq!(grad, [f.d_theta(t, s), f.d_s(t, s)]);
        let fts = (f.d_s(t + h, s) - f.d_s(t - h, s)) / (2.0 * h);
        let fss = (f.d_s(t, s + h) - f.d_s(t, s - h)) / (2.0 * h);
        assert!((fts - hess[0][1]).abs() < 1e-7);
        assert!((fss - hess[1][1]).abs() < 1e-7);
        assert!((f.d_theta2(t, s) - hess[0][0]).abs() < 1e-14);
    }
}
