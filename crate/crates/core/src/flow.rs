//! Pathwise derivatives of the Euler flow `x ↦ Y^x(t)` under frozen noise.
//!
//! The driving noise enters coordinate 0 only. Periodic coordinates are
//! held as whole periods plus a reduced remainder, so a start shifted by a
//! whole period follows the same reduced trajectory bit for bit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::CylinderFunction;
use crate::potential::{PotentialSpec, VectorFieldNorms};
use crate::rng::SeedRecord;
use crate::stable_levy::{sample_path, Alpha, StableError, StablePathGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("t = {t} exceeds the flow horizon t_star = {t_star}")]
    TimeBeyondHorizon { t: f64, t_star: f64 },
    #[error("displacement max-norm {0} must be below 1 (whole periods excepted)")]
    DisplacementTooLarge(f64),
    #[error("invalid h ladder: {0}")]
    InvalidLadder(&'static str),
    #[error("expected a point of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("direction {index} out of range for dimension {dim}")]
    DirectionOutOfRange { index: usize, dim: usize },
    #[error("driving path has {have} increments, {needed} needed")]
    PathTooShort { needed: usize, have: usize },
    #[error("flow became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("ensemble size must be at least 2")]
    EnsembleTooSmall,
    #[error(transparent)]
    Stable(#[from] StableError),
}

/// A vector field `V: ℝⁿ → ℝⁿ` with two derivatives.
pub trait DriftField: Sync {
    fn dim(&self) -> usize;

    /// Period of coordinate `coord`, if `V` is periodic in it.
    fn period(&self, _coord: usize) -> Option<f64> {
        None
    }

    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// `out[j * n + a] = ∂_a V_j`
    fn jacobian(&self, x: &[f64], out: &mut [f64]);

    /// `out[(j * n + a) * n + b] = ∂_a ∂_b V_j`
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

/// `V(y, s) = (W'(y) s, W''(y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InertDrift {
    spec: PotentialSpec,
}

impl InertDrift {
    pub fn new(spec: PotentialSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }
}

impl DriftField for InertDrift {
    fn dim(&self) -> usize {
        2
    }

    fn period(&self, coord: usize) -> Option<f64> {
        (coord == 0).then_some(std::f64::consts::TAU)
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let (w1, w2) = self.spec.slope_and_curvature(x[0]);
        out[0] = w1 * x[1];
        out[1] = w2;
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let [w1, w2, w3, _] = self.spec.derivatives_1_to_4(x[0]);
        out.copy_from_slice(&[w2 * x[1], w1, w3, 0.0]);
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let [_, w2, w3, w4] = self.spec.derivatives_1_to_4(x[0]);
        out.copy_from_slice(&[w3 * x[1], w2, w2, 0.0, w4, 0.0, 0.0, 0.0]);
    }
}

fn reduce(v: f64, period: f64) -> (i64, f64) {
    let mut r = v.rem_euclid(period);
    if r > period / 2.0 {
        r -= period;
    }
    (((v - r) / period).round() as i64, r)
}

/// A point with periodic coordinates split into whole periods and a
/// remainder in `(-p/2, p/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub turns: Vec<i64>,
    pub local: Vec<f64>,
}

impl FlowPoint {
    pub fn new<F: DriftField>(field: &F, x: &[f64]) -> Result<Self, FlowError> {
        if x.len() != field.dim() {
            return Err(FlowError::Dimension {
                expected: field.dim(),
                got: x.len(),
            });
        }
        let mut turns = vec![0; x.len()];
        let mut local = x.to_vec();
        for i in 0..x.len() {
            if let Some(p) = field.period(i) {
                (turns[i], local[i]) = reduce(x[i], p);
            }
        }
        Ok(Self { turns, local })
    }

    /// `self + h`, with whole periods of `h` moved into `turns` exactly.
    pub fn displaced<F: DriftField>(&self, field: &F, h: &[f64]) -> Self {
        let mut out = self.clone();
        for (i, &hi) in h.iter().enumerate() {
            match field.period(i) {
                Some(p) => {
                    let k = (hi / p).round();
                    let rest = hi - k * p;
                    out.turns[i] += k as i64;
                    if rest != 0.0 {
                        let (extra, l) = reduce(out.local[i] + rest, p);
                        out.turns[i] += extra;
                        out.local[i] = l;
                    }
                }
                None => out.local[i] += hi,
            }
        }
        out
    }

    pub fn coords<F: DriftField>(&self, field: &F) -> Vec<f64> {
        (0..self.local.len())
            .map(|i| match field.period(i) {
                Some(p) => self.local[i] + p * self.turns[i] as f64,
                None => self.local[i],
            })
            .collect()
    }
}

/// Max-norm of `h` after removing whole periods.
pub fn reduced_norm<F: DriftField>(field: &F, h: &[f64]) -> f64 {
    h.iter()
        .enumerate()
        .map(|(i, &hi)| match field.period(i) {
            Some(p) => (hi - (hi / p).round() * p).abs(),
            None => hi.abs(),
        })
        .fold(0.0, f64::max)
}

/// Euler flow states at grid times `0, dt, ..., steps·dt`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    dim: usize,
    dt: f64,
    turns: Vec<i64>,
    local: Vec<f64>,
    periods: Vec<Option<f64>>,
}

impl FlowTrajectory {
    pub fn steps(&self) -> usize {
        self.local.len() / self.dim - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn local(&self, k: usize) -> &[f64] {
        &self.local[k * self.dim..(k + 1) * self.dim]
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let j = k * self.dim + i;
                match self.periods[i] {
                    Some(p) => self.local[j] + p * self.turns[j] as f64,
                    None => self.local[j],
                }
            })
            .collect()
    }

    /// `self(k) - other(k)` in unwrapped coordinates.
    pub fn difference(&self, other: &Self, k: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let j = k * self.dim + i;
                let d = self.local[j] - other.local[j];
                match self.periods[i] {
                    Some(p) => d + p * (self.turns[j] - other.turns[j]) as f64,
                    None => d,
                }
            })
            .collect()
    }

    /// As [`difference`](Self::difference) with periodic coordinates
    /// reduced to `(-p/2, p/2]`.
    pub fn wrapped_difference(&self, other: &Self, k: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let j = k * self.dim + i;
                let d = self.local[j] - other.local[j];
                match self.periods[i] {
                    Some(p) => reduce(d, p).1,
                    None => d,
                }
            })
            .collect()
    }

    /// Largest `|x_coord|` along the trajectory.
    pub fn max_abs(&self, coord: usize) -> f64 {
        (0..=self.steps())
            .map(|k| self.point(k)[coord].abs())
            .fold(0.0, f64::max)
    }

    fn max_local_abs(&self) -> f64 {
        self.local.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Grid steps with `k·dt <= t`.
pub fn steps_within(t: f64, dt: f64) -> Result<usize, FlowError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(FlowError::InvalidTime(t));
    }
    Ok((t / dt * (1.0 + 1e-12)).floor() as usize)
}

fn check_path(path: &StablePathGrid, steps: usize) -> Result<(), FlowError> {
    if path.len() < steps {
        return Err(FlowError::PathTooShort {
            needed: steps,
            have: path.len(),
        });
    }
    Ok(())
}

pub fn euler_flow<F: DriftField>(
    field: &F,
    start: &FlowPoint,
    path: &StablePathGrid,
    steps: usize,
) -> Result<FlowTrajectory, FlowError> {
    check_path(path, steps)?;
    let n = field.dim();
    let periods: Vec<Option<f64>> = (0..n).map(|i| field.period(i)).collect();
    let mut turns = Vec::with_capacity((steps + 1) * n);
    let mut local = Vec::with_capacity((steps + 1) * n);
    turns.extend_from_slice(&start.turns);
    local.extend_from_slice(&start.local);
    let mut v = vec![0.0; n];
    let dt = path.dt;
    for k in 0..steps {
        let base = k * n;
        field.drift(&local[base..base + n], &mut v);
        for i in 0..n {
            let mut x = local[base + i] + dt * v[i];
            if i == 0 {
                x += path.increments[k];
            }
            let mut t = turns[base + i];
            if let Some(p) = periods[i] {
                let (extra, r) = reduce(x, p);
                t += extra;
                x = r;
            }
            if !x.is_finite() {
                return Err(FlowError::NonFinite { step: k + 1 });
            }
            turns.push(t);
            local.push(x);
        }
    }
    Ok(FlowTrajectory {
        dim: n,
        dt,
        turns,
        local,
        periods,
    })
}

/// Exact derivatives of the Euler map obtained by propagating the tangent
/// and second-order variational systems alongside the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Variational {
    pub dim: usize,
    /// Per step, `jac[j * n + i] = D_i Y_j`.
    pub jac: Vec<Vec<f64>>,
    /// Per step, `second[(j * n + i) * n + k] = D_ik Y_j`.
    pub second: Vec<Vec<f64>>,
}

impl Variational {
    pub fn first(&self, step: usize, i: usize) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|j| self.jac[step][j * n + i]).collect()
    }

    pub fn second(&self, step: usize, i: usize, k: usize) -> Vec<f64> {
        let n = self.dim;
        (0..n).map(|j| self.second[step][(j * n + i) * n + k]).collect()
    }
}

pub fn variational_flow<F: DriftField>(
    field: &F,
    start: &FlowPoint,
    path: &StablePathGrid,
    steps: usize,
) -> Result<(FlowTrajectory, Variational), FlowError> {
    let traj = euler_flow(field, start, path, steps)?;
    let n = field.dim();
    let dt = path.dt;
    let mut jac = vec![0.0; n * n];
    for i in 0..n {
        jac[i * n + i] = 1.0;
    }
    let mut second = vec![0.0; n * n * n];
    let mut jacs = Vec::with_capacity(steps + 1);
    let mut seconds = Vec::with_capacity(steps + 1);
    jacs.push(jac.clone());
    seconds.push(second.clone());
    let mut a = vec![0.0; n * n];
    let mut hess = vec![0.0; n * n * n];
    for k in 0..steps {
        let x = traj.local(k);
        field.jacobian(x, &mut a);
        field.hessian(x, &mut hess);
        let mut next_second = second.clone();
        for j in 0..n {
            for i in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += a[j * n + m] * second[(m * n + i) * n + l];
                    }
                    for p in 0..n {
                        for q in 0..n {
                            acc += hess[(j * n + p) * n + q] * jac[p * n + i] * jac[q * n + l];
                        }
                    }
                    next_second[(j * n + i) * n + l] += dt * acc;
                }
            }
        }
        let mut next_jac = jac.clone();
        for j in 0..n {
            for i in 0..n {
                let acc: f64 = (0..n).map(|m| a[j * n + m] * jac[m * n + i]).sum();
                next_jac[j * n + i] += dt * acc;
            }
        }
        jac = next_jac;
        second = next_second;
        jacs.push(jac.clone());
        seconds.push(second.clone());
    }
    Ok((
        traj,
        Variational {
            dim: n,
            jac: jacs,
            second: seconds,
        },
    ))
}

/// Geometric ladder `h0, h0·ratio, ..., h0·ratio^(levels-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HLadder {
    pub h0: f64,
    pub ratio: f64,
    pub levels: usize,
}

impl Default for HLadder {
    fn default() -> Self {
        Self {
            h0: 1e-2,
            ratio: 0.5,
            levels: 4,
        }
    }
}

impl HLadder {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.h0 > 0.0 && self.h0 < 1.0) {
            return Err(FlowError::InvalidLadder("h0 must lie in (0, 1)"));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(FlowError::InvalidLadder("ratio must lie in (0, 1)"));
        }
        if self.levels < 3 {
            return Err(FlowError::InvalidLadder("at least 3 levels are needed"));
        }
        Ok(())
    }

    fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.levels).map(|j| self.h0 * self.ratio.powi(j as i32))
    }

    fn smallest(&self) -> f64 {
        self.h0 * self.ratio.powi(self.levels as i32 - 1)
    }
}

/// Horizon and finite-difference settings shared by all flow checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSetup {
    pub t_star: f64,
    pub ladder: HLadder,
}

impl FlowSetup {
    pub fn check_time(&self, t: f64) -> Result<(), FlowError> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(FlowError::InvalidTime(t));
        }
        if t > self.t_star * (1.0 + 1e-12) {
            return Err(FlowError::TimeBeyondHorizon {
                t,
                t_star: self.t_star,
            });
        }
        self.ladder.validate()
    }
}

/// A derivative of the flow at every grid time up to `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub dt: f64,
    /// Richardson-extrapolated value per grid time.
    pub values: Vec<Vec<f64>>,
    /// Cauchy error estimate per grid time (max-norm), floored at the
    /// expected rounding error.
    pub error: Vec<f64>,
    /// Successive ladder levels contracted.
    pub converged: bool,
}

impl DerivativeEstimate {
    pub fn at_end(&self) -> &[f64] {
        self.values.last().expect("at least the initial time")
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| max_norm(v)).fold(0.0, f64::max)
    }

    pub fn max_error(&self) -> f64 {
        self.error.iter().copied().fold(0.0, f64::max)
    }

    /// Largest max-norm distance to `other` over grid times.
    pub fn max_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| max_distance(a, b))
            .fold(0.0, f64::max)
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Runs `fd(h)` down the ladder and extrapolates the last two levels.
fn extrapolate<G>(ladder: &HLadder, order: i32, scale: f64, mut fd: G) -> Result<(Vec<Vec<Vec<f64>>>, DerivativeEstimate), FlowError>
where
    G: FnMut(f64) -> Result<Vec<Vec<f64>>, FlowError>,
{
    let levels: Vec<Vec<Vec<f64>>> = ladder.steps().map(&mut fd).collect::<Result<_, _>>()?;
    let r2 = ladder.ratio * ladder.ratio;
    let richardson = |fine: &[Vec<f64>], coarse: &[Vec<f64>]| -> Vec<Vec<f64>> {
        fine.iter()
            .zip(coarse)
            .map(|(f, c)| f.iter().zip(c).map(|(f, c)| (f - r2 * c) / (1.0 - r2)).collect())
            .collect()
    };
    let last = levels.len() - 1;
    let best = richardson(&levels[last], &levels[last - 1]);
    let prev = richardson(&levels[last - 1], &levels[last - 2]);
    let floor = 64.0 * f64::EPSILON * (1.0 + scale) / ladder.smallest().powi(order);
    let error: Vec<f64> = best
        .iter()
        .zip(&prev)
        .map(|(a, b)| max_distance(a, b).max(floor))
        .collect();
    let deltas: Vec<f64> = levels
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| max_distance(a, b))
                .fold(0.0, f64::max)
        })
        .collect();
    let converged = deltas
        .windows(2)
        .all(|d| d[1] <= 0.75 * d[0] || d[1] <= 10.0 * floor);
    let estimate = DerivativeEstimate {
        dt: 0.0,
        values: best,
        error,
        converged,
    };
    Ok((levels, estimate))
}

fn unit(n: usize, i: usize, h: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = h;
    e
}

fn check_direction(n: usize, i: usize) -> Result<(), FlowError> {
    if i >= n {
        return Err(FlowError::DirectionOutOfRange { index: i, dim: n });
    }
    Ok(())
}

/// Runs the flow from `start + offset` for every offset, with common noise.
fn flows_from<F: DriftField>(
    field: &F,
    start: &FlowPoint,
    offsets: &[Vec<f64>],
    path: &StablePathGrid,
    steps: usize,
) -> Result<Vec<FlowTrajectory>, FlowError> {
    offsets
        .iter()
        .map(|h| euler_flow(field, &start.displaced(field, h), path, steps))
        .collect()
}

/// Central differences of the flow in direction `i` at every grid time.
fn first_difference<F: DriftField>(
    field: &F,
    start: &FlowPoint,
    i: usize,
    h: f64,
    path: &StablePathGrid,
    steps: usize,
) -> Result<Vec<Vec<f64>>, FlowError> {
    let n = field.dim();
    let runs = flows_from(field, start, &[unit(n, i, h), unit(n, i, -h)], path, steps)?;
    Ok(quotients(&runs[0], &runs[1], i, steps))
}

/// `(a(k) - b(k)) / (a(0) - b(0))_i`: dividing by the realised start
/// separation rather than the nominal step makes `k = 0` exact.
fn quotients(a: &FlowTrajectory, b: &FlowTrajectory, i: usize, steps: usize) -> Vec<Vec<f64>> {
    let step = a.difference(b, 0)[i];
    (0..=steps)
        .map(|k| a.difference(b, k).into_iter().map(|d| d / step).collect())
        .collect()
}

/// Nested central difference: outer step `h` along `k`, inner `h/2` along `i`.
fn second_difference<F: DriftField>(
    field: &F,
    start: &FlowPoint,
    i: usize,
    k: usize,
    h: f64,
    path: &StablePathGrid,
    steps: usize,
) -> Result<Vec<Vec<f64>>, FlowError> {
    let n = field.dim();
    let offset = |a: f64, b: f64| {
        let mut v = unit(n, k, a);
        v[i] += b;
        v
    };
    let eta = h / 2.0;
    let runs = flows_from(
        field,
        start,
        &[
            offset(h, eta),
            offset(h, -eta),
            offset(-h, eta),
            offset(-h, -eta),
        ],
        path,
        steps,
    )?;
    let up = quotients(&runs[0], &runs[1], i, steps);
    let down = quotients(&runs[2], &runs[3], i, steps);
    let outer = runs[0].difference(&runs[2], 0)[k];
    Ok(up
        .iter()
        .zip(&down)
        .map(|(u, d)| u.iter().zip(d).map(|(u, d)| (u - d) / outer).collect())
        .collect())
}

fn prepare<F: DriftField>(
    field: &F,
    x: &[f64],
    t: f64,
    path: &StablePathGrid,
    setup: &FlowSetup,
) -> Result<(FlowPoint, usize), FlowError> {
    setup.check_time(t)?;
    let start = FlowPoint::new(field, x)?;
    let steps = steps_within(t, path.dt)?;
    check_path(path, steps)?;
    Ok((start, steps))
}

/// Displacement of the flow caused by moving the start by `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDifference {
    /// `sup_{k·dt <= t} ‖Y^{x+h} - Y^x‖` in unwrapped coordinates.
    pub max_norm: f64,
    /// The same with periodic coordinates reduced.
    pub max_norm_wrapped: f64,
}

pub fn flow_difference<F: DriftField>(
    field: &F,
    x: &[f64],
    h: &[f64],
    t: f64,
    path: &StablePathGrid,
    setup: &FlowSetup,
) -> Result<FlowDifference, FlowError> {
    let (start, steps) = prepare(field, x, t, path, setup)?;
    if h.len() != field.dim() {
        return Err(FlowError::Dimension {
            expected: field.dim(),
            got: h.len(),
        });
    }
    let reduced = reduced_norm(field, h);
    if reduced >= 1.0 {
        return Err(FlowError::DisplacementTooLarge(reduced));
    }
    let base = euler_flow(field, &start, path, steps)?;
    let moved = euler_flow(field, &start.displaced(field, h), path, steps)?;
    let mut out = FlowDifference {
        max_norm: 0.0,
        max_norm_wrapped: 0.0,
    };
    for k in 0..=steps {
        out.max_norm = out.max_norm.max(max_norm(&moved.difference(&base, k)));
        out.max_norm_wrapped = out
            .max_norm_wrapped
            .max(max_norm(&moved.wrapped_difference(&base, k)));
    }
    Ok(out)
}

/// `D_i Y^x` at every grid time up to `t`.
pub fn flow_derivative_1<F: DriftField>(
    field: &F,
    x: &[f64],
    i: usize,
    t: f64,
    path: &StablePathGrid,
    setup: &FlowSetup,
) -> Result<DerivativeEstimate, FlowError> {
    let (start, steps) = prepare(field, x, t, path, setup)?;
    check_direction(field.dim(), i)?;
    let scale = euler_flow(field, &start, path, steps)?.max_local_abs();
    let (_, mut est) = extrapolate(&setup.ladder, 1, scale, |h| {
        first_difference(field, &start, i, h, path, steps)
    })?;
    est.dt = path.dt;
    Ok(est)
}

/// `D_ik Y^x` at every grid time up to `t`.
pub fn flow_derivative_2<F: DriftField>(
    field: &F,
    x: &[f64],
    i: usize,
    k: usize,
    t: f64,
    path: &StablePathGrid,
    setup: &FlowSetup,
) -> Result<DerivativeEstimate, FlowError> {
    let (start, steps) = prepare(field, x, t, path, setup)?;
    check_direction(field.dim(), i)?;
    check_direction(field.dim(), k)?;
    let scale = euler_flow(field, &start, path, steps)?.max_local_abs();
    let (_, mut est) = extrapolate(&setup.ladder, 2, scale, |h| {
        second_difference(field, &start, i, k, h, path, steps)
    })?;
    est.dt = path.dt;
    Ok(est)
}

/// Changes of the first and second flow derivatives when the start moves
/// by `h`, maximised over directions and grid times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeLipschitz {
    pub first: f64,
    pub first_error: f64,
    pub second: f64,
    pub second_error: f64,
    pub converged: bool,
}

pub fn lipschitz_of_derivatives<F: DriftField>(
    field: &F,
    x: &[f64],
    h: &[f64],
    t: f64,
    path: &StablePathGrid,
    setup: &FlowSetup,
) -> Result<DerivativeLipschitz, FlowError> {
    let reduced = reduced_norm(field, h);
    if reduced >= 1.0 {
        return Err(FlowError::DisplacementTooLarge(reduced));
    }
    let moved = FlowPoint::new(field, x)?.displaced(field, h).coords(field);
    let n = field.dim();
    let mut out = DerivativeLipschitz {
        first: 0.0,
        first_error: 0.0,
        second: 0.0,
        second_error: 0.0,
        converged: true,
    };
    for i in 0..n {
        let a = flow_derivative_1(field, x, i, t, path, setup)?;
        let b = flow_derivative_1(field, &moved, i, t, path, setup)?;
        out.first = out.first.max(a.max_distance(&b));
        out.first_error = out.first_error.max(a.max_error() + b.max_error());
        out.converged &= a.converged && b.converged;
        for k in 0..n {
            let a = flow_derivative_2(field, x, i, k, t, path, setup)?;
            let b = flow_derivative_2(field, &moved, i, k, t, path, setup)?;
            out.second = out.second.max(a.max_distance(&b));
            out.second_error = out.second_error.max(a.max_error() + b.max_error());
            out.converged &= a.converged && b.converged;
        }
    }
    Ok(out)
}

/// Constants on the right of the five pathwise bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowBounds {
    pub norms: VectorFieldNorms,
    pub t_star: f64,
}

impl FlowBounds {
    pub fn new(norms: VectorFieldNorms, t0: f64) -> Self {
        let t_star = crate::potential::FlowHorizon::new(norms.d1, t0).t_star;
        Self { norms, t_star }
    }

    /// `‖Y^{x+h} - Y^x‖ <= 2‖h‖`
    pub fn displacement(&self, h: f64) -> f64 {
        2.0 * h
    }

    /// `‖D_i Y‖ <= 2`
    pub fn first_derivative(&self) -> f64 {
        2.0
    }

    /// `‖D_i Y^{x+h} - D_i Y^x‖ <= 8 ‖D²V‖ t* ‖h‖`
    pub fn first_lipschitz(&self, h: f64) -> f64 {
        8.0 * self.norms.d2 * self.t_star * h
    }

    /// `‖D_ik Y‖ <= 8 ‖D²V‖ t*`
    pub fn second_derivative(&self) -> f64 {
        8.0 * self.norms.d2 * self.t_star
    }

    /// `‖D_ik Y^{x+h} - D_ik Y^x‖ <= (96 ‖D²V‖² t*² + 16 ‖D³V‖ t*) ‖h‖`
    pub fn second_lipschitz(&self, h: f64) -> f64 {
        let (d2, d3, t) = (self.norms.d2, self.norms.d3, self.t_star);
        (96.0 * d2 * d2 * t * t + 16.0 * d3 * t) * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    Displacement,
    FirstDerivative,
    FirstLipschitz,
    SecondDerivative,
    SecondLipschitz,
    Symmetry,
    Band,
}

/// One bound checked on one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub bound: BoundId,
    pub probe: usize,
    pub constant: f64,
    pub measured: f64,
    pub slack: f64,
    pub converged: bool,
    pub pass: bool,
}

impl BoundCertificate {
    fn new(bound: BoundId, probe: usize, constant: f64, measured: f64, slack: f64, converged: bool) -> Self {
        Self {
            bound,
            probe,
            constant,
            measured,
            slack,
            converged,
            pass: converged && measured <= constant + slack,
        }
    }
}

/// How random probes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub n_probes: usize,
    pub dt: f64,
    pub alpha_low: f64,
    pub alpha_high: f64,
    /// Starts are drawn with `|s| <= start_s_max`.
    pub start_s_max: f64,
    /// Displacement components are drawn in `[-h_max, h_max]`.
    pub h_max: f64,
    /// Slack is this multiple of the ladder error.
    pub slack_factor: f64,
    /// Half-width of the `s` band the norms are taken over.
    pub s_bound: f64,
    pub t0: f64,
    /// Probe times are drawn up to this value (default `t*`).
    pub t_max: Option<f64>,
    pub ladder: HLadder,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_probes: 100,
            dt: 1e-3,
            alpha_low: 0.5,
            alpha_high: 1.9,
            start_s_max: 1.85,
            h_max: 0.99,
            slack_factor: 10.0,
            s_bound: 3.0,
            t0: 1.0,
            t_max: None,
            ladder: HLadder::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub index: usize,
    pub alpha: Alpha,
    pub x: [f64; 2],
    pub h: [f64; 2],
    pub t: f64,
    pub seed: SeedRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub bound: BoundId,
    pub probes: usize,
    pub violations: usize,
    /// Largest `measured / constant` seen.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckReport {
    pub bounds: FlowBounds,
    pub config: ProbeConfig,
    pub probes: Vec<ProbeSpec>,
    pub certificates: Vec<BoundCertificate>,
    pub summary: Vec<BoundSummary>,
    pub pass: bool,
}

/// Draws one probe: start, displacement, time and a frozen driving path.
fn draw_probe(index: usize, config: &ProbeConfig, t_max: f64, seed: &SeedRecord) -> ProbeSpec {
    let seed = seed.child(&format!("probe-{index}"));
    let mut rng = seed.child("geometry").rng();
    let alpha = Alpha::new(rng.random_range(config.alpha_low..=config.alpha_high))
        .expect("alpha range lies in (0, 2)");
    let x = [
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.random_range(-config.start_s_max..=config.start_s_max),
    ];
    let h = [
        rng.random_range(-config.h_max..=config.h_max),
        rng.random_range(-config.h_max..=config.h_max),
    ];
    let t = rng.random_range(0.1 * t_max..=t_max);
    ProbeSpec {
        index,
        alpha,
        x,
        h,
        t,
        seed: seed.child("noise"),
    }
}

/// Checks every bound on one probe.
pub fn check_probe(
    field: &InertDrift,
    probe: &ProbeSpec,
    bounds: &FlowBounds,
    config: &ProbeConfig,
) -> Result<Vec<BoundCertificate>, FlowError> {
    let setup = FlowSetup {
        t_star: bounds.t_star,
        ladder: config.ladder,
    };
    let steps = steps_within(probe.t, config.dt)?;
    let path = sample_path(probe.alpha, steps.max(1), config.dt, &probe.seed)?;
    let (x, h, t) = (&probe.x[..], &probe.h[..], probe.t);
    let h_norm = max_norm(h);
    let moved = FlowPoint::new(field, x)?.displaced(field, h).coords(field);
    let f = config.slack_factor;
    let mut out = Vec::new();

    // every start used by the differences, including the ladder offsets,
    // must stay inside the band the norms were taken over
    let reach = 1.5 * config.ladder.h0;
    let mut band = 0.0f64;
    for start in [x, &moved[..]] {
        for ds in [-reach, 0.0, reach] {
            let p = FlowPoint::new(field, &[start[0], start[1] + ds])?;
            band = band.max(euler_flow(field, &p, &path, steps)?.max_abs(1));
        }
    }
    out.push(BoundCertificate::new(BoundId::Band, probe.index, config.s_bound, band, 0.0, true));

    let diff = flow_difference(field, x, h, t, &path, &setup)?;
    out.push(BoundCertificate::new(
        BoundId::Displacement,
        probe.index,
        bounds.displacement(h_norm),
        diff.max_norm,
        1e-12 * h_norm,
        true,
    ));

    let mut d1 = (0.0f64, 0.0f64, true);
    let mut d2 = (0.0f64, 0.0f64, true);
    let mut cross = Vec::new();
    for i in 0..2 {
        let e = flow_derivative_1(field, x, i, t, &path, &setup)?;
        d1 = (d1.0.max(e.max_norm()), d1.1.max(e.max_error()), d1.2 && e.converged);
        for k in 0..2 {
            let e = flow_derivative_2(field, x, i, k, t, &path, &setup)?;
            d2 = (d2.0.max(e.max_norm()), d2.1.max(e.max_error()), d2.2 && e.converged);
            if i != k {
                cross.push(e);
            }
        }
    }
    out.push(BoundCertificate::new(
        BoundId::FirstDerivative,
        probe.index,
        bounds.first_derivative(),
        d1.0,
        f * d1.1,
        d1.2,
    ));
    out.push(BoundCertificate::new(
        BoundId::SecondDerivative,
        probe.index,
        bounds.second_derivative(),
        d2.0,
        f * d2.1,
        d2.2,
    ));
    let (a, b) = (&cross[0], &cross[1]);
    out.push(BoundCertificate::new(
        BoundId::Symmetry,
        probe.index,
        0.0,
        a.max_distance(b),
        f * (a.max_error() + b.max_error()),
        a.converged && b.converged,
    ));

    let lip = lipschitz_of_derivatives(field, x, h, t, &path, &setup)?;
    out.push(BoundCertificate::new(
        BoundId::FirstLipschitz,
        probe.index,
        bounds.first_lipschitz(h_norm),
        lip.first,
        f * lip.first_error,
        lip.converged,
    ));
    out.push(BoundCertificate::new(
        BoundId::SecondLipschitz,
        probe.index,
        bounds.second_lipschitz(h_norm),
        lip.second,
        f * lip.second_error,
        lip.converged,
    ));
    Ok(out)
}

/// Draws `config.n_probes` probes and checks all bounds on each.
pub fn run_flow_probes(
    spec: &PotentialSpec,
    config: &ProbeConfig,
    seed: &SeedRecord,
) -> Result<FlowCheckReport, FlowError> {
    config.ladder.validate()?;
    let norms = VectorFieldNorms::on_half_width(spec, config.s_bound);
    let bounds = FlowBounds::new(norms, config.t0);
    let t_max = config.t_max.unwrap_or(bounds.t_star);
    FlowSetup {
        t_star: bounds.t_star,
        ladder: config.ladder,
    }
    .check_time(t_max)?;
    let field = InertDrift::new(spec.clone());
    let probes: Vec<ProbeSpec> = (0..config.n_probes)
        .map(|i| draw_probe(i, config, t_max, seed))
        .collect();
    let per_probe: Vec<Vec<BoundCertificate>> = probes
        .par_iter()
        .map(|p| check_probe(&field, p, &bounds, config))
        .collect::<Result<_, _>>()?;
    let certificates: Vec<BoundCertificate> = per_probe.into_iter().flatten().collect();
    let ids = [
        BoundId::Band,
        BoundId::Displacement,
        BoundId::FirstDerivative,
        BoundId::FirstLipschitz,
        BoundId::SecondDerivative,
        BoundId::SecondLipschitz,
        BoundId::Symmetry,
    ];
    let summary: Vec<BoundSummary> = ids
        .iter()
        .map(|&id| {
            let certs: Vec<&BoundCertificate> =
                certificates.iter().filter(|c| c.bound == id).collect();
            BoundSummary {
                bound: id,
                probes: certs.len(),
                violations: certs.iter().filter(|c| !c.pass).count(),
                worst_ratio: certs
                    .iter()
                    .filter(|c| c.constant > 0.0)
                    .map(|c| c.measured / c.constant)
                    .fold(0.0, f64::max),
            }
        })
        .collect();
    let pass = certificates.iter().all(|c| c.pass);
    Ok(FlowCheckReport {
        bounds,
        config: *config,
        probes,
        certificates,
        summary,
        pass,
    })
}

/// Finite-difference and pathwise estimates of one semigroup derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupComparison {
    /// `[i]` for `D_i T_t g`, `[i, k]` for `D_ik T_t g`.
    pub directions: Vec<usize>,
    /// Central difference of the Monte Carlo semigroup (common noise).
    pub lhs: f64,
    pub lhs_se: f64,
    /// Richardson correction between the two finite-difference steps.
    pub fd_error: f64,
    /// Average of the pathwise derivative formula.
    pub rhs: f64,
    pub rhs_se: f64,
    pub difference: f64,
    /// `sqrt(lhs_se² + rhs_se²) + fd_error`
    pub band: f64,
    /// The band is small against the size of the values compared.
    pub resolved: bool,
    /// `difference <= bands · band`
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupReport {
    pub x: [f64; 2],
    pub t: f64,
    pub paths: usize,
    pub alpha: Alpha,
    pub dt: f64,
    pub h: f64,
    pub bands: f64,
    pub comparisons: Vec<SemigroupComparison>,
    pub pass: bool,
}

/// Settings of the semigroup-derivative comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupSetup {
    pub alpha: Alpha,
    pub dt: f64,
    pub t: f64,
    pub paths: usize,
    /// Finite-difference step; the comparison also uses `h/2`.
    pub h: f64,
    /// Allowed difference in units of the combined band.
    pub bands: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-path samples for every first and second direction.
struct PathSamples {
    /// `[direction][level]` with levels `h` and `h/2`
    fd1: Vec<[f64; 2]>,
    rhs1: Vec<f64>,
    /// `[i * 2 + k][level]`
    fd2: Vec<[f64; 2]>,
    rhs2: Vec<f64>,
}

fn path_samples(
    field: &InertDrift,
    g: &CylinderFunction,
    start: &FlowPoint,
    path: &StablePathGrid,
    steps: usize,
    h: f64,
) -> Result<PathSamples, FlowError> {
    let value = |traj: &FlowTrajectory| {
        let p = traj.local(steps);
        g.value(p[0], p[1])
    };
    let (traj, var) = variational_flow(field, start, path, steps)?;
    let p = traj.local(steps);
    let (grad, hess) = g.gradient_hessian(p[0], p[1]);
    let mut out = PathSamples {
        fd1: Vec::new(),
        rhs1: Vec::new(),
        fd2: Vec::new(),
        rhs2: Vec::new(),
    };
    for i in 0..2 {
        let mut levels = [0.0; 2];
        for (l, step) in [h, h / 2.0].into_iter().enumerate() {
            let runs = flows_from(field, start, &[unit(2, i, step), unit(2, i, -step)], path, steps)?;
            levels[l] = (value(&runs[0]) - value(&runs[1])) / (2.0 * step);
        }
        out.fd1.push(levels);
        let di = var.first(steps, i);
        out.rhs1.push(grad[0] * di[0] + grad[1] * di[1]);
    }
    for i in 0..2 {
        for k in 0..2 {
            let mut levels = [0.0; 2];
            for (l, step) in [h, h / 2.0].into_iter().enumerate() {
                let eta = step / 2.0;
                let offset = |a: f64, b: f64| {
                    let mut v = unit(2, k, a);
                    v[i] += b;
                    v
                };
                let runs = flows_from(
                    field,
                    start,
                    &[
                        offset(step, eta),
                        offset(step, -eta),
                        offset(-step, eta),
                        offset(-step, -eta),
                    ],
                    path,
                    steps,
                )?;
                let [a, b, c, d] = [0, 1, 2, 3].map(|r| value(&runs[r]));
                levels[l] = ((a - b) - (c - d)) / (2.0 * step * step);
            }
            out.fd2.push(levels);
            let dik = var.second(steps, i, k);
            let di = var.first(steps, i);
            let dk = var.first(steps, k);
            let mut rhs = grad[0] * dik[0] + grad[1] * dik[1];
            for a in 0..2 {
                for b in 0..2 {
                    rhs += di[a] * hess[a][b] * dk[b];
                }
            }
            out.rhs2.push(rhs);
        }
    }
    Ok(out)
}

/// Compares `D_i T_t g(x)` and `D_ik T_t g(x)` computed two ways: central
/// differences of the Monte Carlo semigroup with common noise, and the
/// average of the pathwise chain-rule formulas.
pub fn semigroup_derivative_check(
    g: &CylinderFunction,
    x: [f64; 2],
    spec: &PotentialSpec,
    setup: &SemigroupSetup,
    seed: &SeedRecord,
) -> Result<SemigroupReport, FlowError> {
    if setup.paths < 2 {
        return Err(FlowError::EnsembleTooSmall);
    }
    if !(setup.h > 0.0 && setup.h < 1.0) {
        return Err(FlowError::InvalidLadder("h must lie in (0, 1)"));
    }
    let field = InertDrift::new(spec.clone());
    let start = FlowPoint::new(&field, &x)?;
    let steps = steps_within(setup.t, setup.dt)?;
    let samples: Vec<PathSamples> = (0..setup.paths)
        .into_par_iter()
        .map(|p| {
            let path = sample_path(
                setup.alpha,
                steps.max(1),
                setup.dt,
                &seed.child(&format!("path-{p}")),
            )?;
            path_samples(&field, g, &start, &path, steps, setup.h)
        })
        .collect::<Result<_, _>>()?;

    let compare = |directions: Vec<usize>, fd: &dyn Fn(&PathSamples) -> [f64; 2], rhs: &dyn Fn(&PathSamples) -> f64| {
        let coarse: Vec<f64> = samples.iter().map(|s| fd(s)[0]).collect();
        let fine: Vec<f64> = samples.iter().map(|s| fd(s)[1]).collect();
        let extrapolated: Vec<f64> = coarse
            .iter()
            .zip(&fine)
            .map(|(c, f)| (4.0 * f - c) / 3.0)
            .collect();
        let (lhs, lhs_se) = mean_se(&extrapolated);
        let (fine_mean, _) = mean_se(&fine);
        let fd_error = (lhs - fine_mean).abs();
        let r: Vec<f64> = samples.iter().map(rhs).collect();
        let (rhs, rhs_se) = mean_se(&r);
        let band = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt() + fd_error;
        let difference = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        SemigroupComparison {
            directions,
            lhs,
            lhs_se,
            fd_error,
            rhs,
            rhs_se,
            difference,
            band,
            resolved: band <= 0.25 * scale || scale == 0.0,
            pass: difference <= setup.bands * band,
        }
    };
    let mut comparisons = Vec::new();
    for i in 0..2 {
        comparisons.push(compare(vec![i], &|s| s.fd1[i], &|s| s.rhs1[i]));
    }
    for i in 0..2 {
        for k in 0..2 {
            comparisons.push(compare(vec![i, k], &|s| s.fd2[i * 2 + k], &|s| s.rhs2[i * 2 + k]));
        }
    }
    let pass = comparisons.iter().all(|c| c.pass);
    Ok(SemigroupReport {
        x,
        t: setup.t,
        paths: setup.paths,
        alpha: setup.alpha,
        dt: setup.dt,
        h: setup.h,
        bands: setup.bands,
        comparisons,
        pass,
    })
}
