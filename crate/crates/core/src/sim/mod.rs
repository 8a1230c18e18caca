//! Closed-loop time-domain simulation and step-response metrics.

mod closed_loop;
mod live;
mod metrics;
mod oracle;
mod solver;
mod trace;

pub use closed_loop::{simulate_closed_loop, simulate_with_stats, Simulation, SolverStats};
pub use live::{LiveSample, LiveSim};
pub use metrics::{step_metrics, StepMetrics, DEFAULT_SETTLE_BAND};
pub use oracle::{oracle_simulate, oracle_simulate_sampled, ORACLE_SAMPLE_TIME, ORACLE_STEP};
pub use solver::{adapt_step, euler_step, rk23_step, rk4_step, Dynamics, SolverConfig, SolverKind};
pub use trace::{sig9, SimTrace};
