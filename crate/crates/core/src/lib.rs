//! Simulation and numerical checks for a symmetric α-stable process with
//! inert drift, wrapped on the circle.

pub mod flow;
pub mod generator;
pub mod harness;
pub mod potential;
pub mod rng;
pub mod sde;
pub mod special;
pub mod stable_levy;
pub mod stationary;

pub use generator::{CircleFunction, CylinderFunction, QuadratureConfig};
pub use harness::{ExperimentConfig, HarnessError};
pub use potential::{FlowHorizon, PotentialSpec, VectorFieldNorms};
pub use rng::SeedRecord;
pub use sde::{LiftedState, SimParams, StateYS, TrajectoryYS};
pub use stable_levy::{Alpha, StablePathGrid};
pub use stationary::{GofReport, SampleSet};
