//! Numerical toolkit for small-noise stochastic reaction-diffusion equations
//! on an interval: simulation, Freidlin–Wentzell action functionals and
//! quasipotentials, explicit controls, and exit-time Monte Carlo.

pub mod control;
pub mod error;
pub mod exit;
pub mod grid;
pub mod model;
pub mod noise;
pub mod path;
pub mod quasipotential;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{Field, GridSpec, OperatorDisc};
pub use model::ModelSpec;
pub use noise::NoiseStream;
pub use path::{ControlPath, TrajectoryPath};
pub use sim::SimConfig;
