//! Control design and simulation toolkit for a magnetically actuated
//! cantilever: plant modelling, PID and lead-lag design, closed-loop
//! simulation with fixed and adaptive solvers, step-response metrics,
//! constrained PID tuning, Hall-sensor calibration, and a framed serial
//! protocol with a virtual device for hardware-in-the-loop runs.

pub mod autotune;
pub mod controllers;
pub mod error;
pub mod experiment;
pub mod hil;
pub mod lti;
pub mod plant;
pub mod sensor;
pub mod sim;

pub use controllers::{LeadLagParams, PidGains, Saturation};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, RunRecord};
pub use lti::{ComplexRoot, Polynomial, TransferFunction};
pub use plant::{BeamGeometry, PlantParameters};
pub use sim::{SimTrace, SolverConfig, StepMetrics};
