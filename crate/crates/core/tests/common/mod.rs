//! Brute-force oracle shared by the generator tests.

use std::f64::consts::PI;

use inert_drift_core::stable_levy::alpha_constant;
use inert_drift_core::Alpha;

const ORACLE_NODES: usize = 1_000_000;

/// `2A ∫_0^∞ (cos ku - 1) u^{-1-α} du`, by quadrature.
pub fn oracle_multiplier(k: usize, a: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let k = k as f64;
    let upper = 200.0 * PI;
    // u = upper·v⁴ removes the u^{1-α} behaviour at the origin
    let q = 4.0;
    let h = 1.0 / ORACLE_NODES as f64;
    let mut body = 0.0;
    for j in 0..ORACLE_NODES {
        let v = (j as f64 + 0.5) * h;
        let u = upper * v.powf(q);
        let du = upper * q * v.powf(q - 1.0);
        // cos x - 1 without cancellation at tiny x
        let s = (0.5 * k * u).sin();
        body -= 2.0 * s * s * u.powf(-1.0 - a) * du;
    }
    body *= h;
    // tail: -1 exactly, cos(ku) by two integrations by parts
    let tail = -upper.powf(-a) / a - (k * upper).sin() * upper.powf(-1.0 - a) / k
        + (1.0 + a) * (k * upper).cos() * upper.powf(-2.0 - a) / (k * k);
    2.0 * alpha_constant(Alpha::new(a).unwrap()) * (body + tail)
}
