//! Explicit Euler integration of
//!
//! ```text
//! dY = dX + W'(Y) S dt
//! dS = W''(Y) dt
//! ```
//!
//! driven by exact stable increments, plus the clamped variant where the
//! drift uses `f_n(S) = (-n) ∨ S ∧ n`.
//!
//! Positions are stored as a lift `y = θ + 2π·turns` with `θ ∈ (-π, π]`.
//! The drift only ever sees `θ`, so shifting the start by whole turns shifts
//! the whole trajectory by the same number of turns without any rounding.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::PotentialSpec;
use crate::rng::SeedRecord;
use crate::stable_levy::{sample_path, Alpha, StableError, StablePathGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("clamp level must be at least 1")]
    InvalidClamp,
    #[error("start state must be finite")]
    NonFiniteStart,
    #[error("state became non-finite at step {step} (y = {y}, s = {s})")]
    NonFinite { step: usize, y: f64, s: f64 },
    #[error(transparent)]
    Stable(#[from] StableError),
}

/// Point `(y, s)` of the unwrapped system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateYS {
    pub y: f64,
    pub s: f64,
}

impl StateYS {
    pub fn new(y: f64, s: f64) -> Self {
        Self { y, s }
    }
}

/// Representative of `y` modulo 2π in `(-π, π]`.
pub fn wrap_angle(y: f64) -> f64 {
    split_turns(y).1
}

/// `y = theta + 2π·turns` with `theta ∈ (-π, π]`.
fn split_turns(y: f64) -> (i64, f64) {
    let mut r = y.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    let turns = ((y - r) / TAU).round() as i64;
    (turns, r)
}

/// State with the position held as whole turns plus an angle in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedState {
    pub turns: i64,
    pub theta: f64,
    pub s: f64,
}

impl LiftedState {
    pub fn from_ys(state: StateYS) -> Self {
        let (turns, theta) = split_turns(state.y);
        Self {
            turns,
            theta,
            s: state.s,
        }
    }

    pub fn y(&self) -> f64 {
        self.theta + TAU * self.turns as f64
    }

    pub fn to_ys(&self) -> StateYS {
        StateYS::new(self.y(), self.s)
    }

    /// Same state moved by `k` whole turns (`y + 2πk`).
    pub fn shifted(&self, k: i64) -> Self {
        Self {
            turns: self.turns + k,
            ..*self
        }
    }

    #[inline]
    fn step(&mut self, dx: f64, dt: f64, spec: &PotentialSpec, clamp: Option<f64>) {
        let (slope, curvature) = spec.slope_and_curvature(self.theta);
        let memory = match clamp {
            Some(n) => self.s.clamp(-n, n),
            None => self.s,
        };
        let moved = self.theta + dx + slope * memory * dt;
        self.s += curvature * dt;
        let (turns, theta) = split_turns(moved);
        self.turns = self.turns.saturating_add(turns);
        self.theta = theta;
    }

    fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.s.is_finite()
    }
}

/// One explicit Euler step with the drift evaluated at the left endpoint.
pub fn euler_step(state: StateYS, dx: f64, dt: f64, spec: &PotentialSpec) -> StateYS {
    let (slope, curvature) = spec.slope_and_curvature(state.y);
    StateYS {
        y: state.y + dx + slope * state.s * dt,
        s: state.s + curvature * dt,
    }
}

/// Streaming integrator used when the trajectory is too long to store.
#[derive(Debug, Clone)]
pub struct EulerIntegrator<'a> {
    spec: &'a PotentialSpec,
    dt: f64,
    clamp: Option<f64>,
    state: LiftedState,
    steps: usize,
}

impl<'a> EulerIntegrator<'a> {
    pub fn new(start: StateYS, dt: f64, spec: &'a PotentialSpec) -> Result<Self, SdeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SdeError::InvalidStep(dt));
        }
        if !(start.y.is_finite() && start.s.is_finite()) {
            return Err(SdeError::NonFiniteStart);
        }
        Ok(Self {
            spec,
            dt,
            clamp: None,
            state: LiftedState::from_ys(start),
            steps: 0,
        })
    }

    pub fn from_lifted(start: LiftedState, dt: f64, spec: &'a PotentialSpec) -> Result<Self, SdeError> {
        let mut it = Self::new(StateYS::new(0.0, start.s), dt, spec)?;
        if !start.theta.is_finite() {
            return Err(SdeError::NonFiniteStart);
        }
        it.state = start;
        Ok(it)
    }

    pub fn with_clamp(mut self, n: u32) -> Result<Self, SdeError> {
        if n == 0 {
            return Err(SdeError::InvalidClamp);
        }
        self.clamp = Some(n as f64);
        Ok(self)
    }

    pub fn state(&self) -> LiftedState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn advance(&mut self, dx: f64) -> Result<LiftedState, SdeError> {
        self.state.step(dx, self.dt, self.spec, self.clamp);
        self.steps += 1;
        if !self.state.is_finite() {
            return Err(SdeError::NonFinite {
                step: self.steps,
                y: self.state.y(),
                s: self.state.s,
            });
        }
        Ok(self.state)
    }
}

/// Discretised path of `(Y, S)` together with the noise that drove it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryYS {
    pub dt: f64,
    pub states: Vec<LiftedState>,
    pub driving: StablePathGrid,
    pub clamp: Option<u32>,
}

impl TrajectoryYS {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn ys(&self) -> Vec<f64> {
        self.states.iter().map(LiftedState::y).collect()
    }

    pub fn ss(&self) -> Vec<f64> {
        self.states.iter().map(|st| st.s).collect()
    }

    pub fn last(&self) -> LiftedState {
        *self.states.last().expect("trajectory holds the start state")
    }

    /// `max_k |s_k - s_0|`.
    pub fn max_s_excursion(&self) -> f64 {
        let s0 = self.states[0].s;
        self.states.iter().fold(0.0, |m, st| m.max((st.s - s0).abs()))
    }

    pub fn seed(&self) -> Option<&SeedRecord> {
        self.driving.seed.as_ref()
    }

    /// CSV with a `#` provenance line followed by `t,y,theta,s`.
    pub fn write_csv<W: Write>(&self, mut out: W, spec: &PotentialSpec) -> std::io::Result<()> {
        let seed = self
            .seed()
            .map(ToString::to_string)
            .unwrap_or_else(|| "none".to_string());
        writeln!(
            out,
            "# alpha={},dt={},seed={},cosine={:?},sine={:?}",
            self.driving.alpha.get(),
            self.dt,
            seed,
            spec.cosine_coeffs(),
            spec.sine_coeffs()
        )?;
        writeln!(out, "t,y,theta,s")?;
        for (t, st) in self.times().zip(&self.states) {
            writeln!(out, "{},{},{},{}", t, st.y(), st.theta, st.s)?;
        }
        Ok(())
    }
}

/// Number of grid steps covering `[0, horizon]`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize, SdeError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SdeError::InvalidStep(dt));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SdeError::InvalidHorizon(horizon));
    }
    Ok(((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Runs the scheme along a given driving path.
pub fn simulate_with_path(
    start: LiftedState,
    path: &StablePathGrid,
    spec: &PotentialSpec,
    clamp: Option<u32>,
) -> Result<TrajectoryYS, SdeError> {
    let mut integrator = EulerIntegrator::from_lifted(start, path.dt, spec)?;
    if let Some(n) = clamp {
        integrator = integrator.with_clamp(n)?;
    }
    let mut states = Vec::with_capacity(path.len() + 1);
    states.push(start);
    for &dx in &path.increments {
        states.push(integrator.advance(dx)?);
    }
    Ok(TrajectoryYS {
        dt: path.dt,
        states,
        driving: path.clone(),
        clamp,
    })
}

/// Model parameters shared by the simulation entry points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub alpha: Alpha,
    pub dt: f64,
    pub horizon: f64,
}

pub fn simulate(
    start: StateYS,
    params: &SimParams,
    spec: &PotentialSpec,
    seed: &SeedRecord,
) -> Result<TrajectoryYS, SdeError> {
    simulate_lifted(LiftedState::from_ys(start), params, spec, seed, None)
}

pub fn simulate_clamped(
    n: u32,
    start: StateYS,
    params: &SimParams,
    spec: &PotentialSpec,
    seed: &SeedRecord,
) -> Result<TrajectoryYS, SdeError> {
    if n == 0 {
        return Err(SdeError::InvalidClamp);
    }
    simulate_lifted(LiftedState::from_ys(start), params, spec, seed, Some(n))
}

pub fn simulate_lifted(
    start: LiftedState,
    params: &SimParams,
    spec: &PotentialSpec,
    seed: &SeedRecord,
    clamp: Option<u32>,
) -> Result<TrajectoryYS, SdeError> {
    let n = step_count(params.horizon, params.dt)?;
    let path = sample_path(params.alpha, n, params.dt, seed)?;
    simulate_with_path(start, &path, spec, clamp)
}

/// The wrapped process `(Arg Z_t, S_t)` with `Z_t = e^{iY_t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrappedTrajectory {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub s: Vec<f64>,
}

pub fn wrap(traj: &TrajectoryYS) -> WrappedTrajectory {
    WrappedTrajectory {
        times: traj.times().collect(),
        theta: traj.states.iter().map(|st| st.theta).collect(),
        s: traj.ss(),
    }
}
