use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use levlab::experiment::DATA_DIR_ENV;

/// Maglev cantilever control workbench.
#[derive(Debug, Parser)]
#[command(name = "levlab", version, about)]
pub struct Cli {
    /// Run store root
    #[arg(long, global = true, env = DATA_DIR_ENV, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lumped plant parameters and transfer function from beam geometry
    DerivePlant(DerivePlantArgs),
    /// Closed-loop step simulation; trace CSV to --out (else stdout), report JSON to stdout (else stderr)
    Simulate(SimulateArgs),
    /// Step-response metrics of a trace CSV
    Metrics(MetricsArgs),
    /// Closed-loop poles over a gain schedule
    Rootlocus(RootlocusArgs),
    /// Search PID gains for minimum settling time under constraints
    Tune(TuneArgs),
    /// Fit the monotone sensor calibration curve
    CalibFit(CalibFitArgs),
    /// Serve the virtual device over TCP
    HilDevice(HilDeviceArgs),
    /// Run the sampled control loop against a device
    HilLoop(HilLoopArgs),
    /// HTTP and WebSocket service
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantChoice {
    Paper,
    Geometry,
}

#[derive(Debug, Args)]
pub struct PlantArgs {
    /// Reference transfer function or one derived from geometry [default: paper]
    #[arg(long, value_enum)]
    pub plant: Option<PlantChoice>,
    /// Beam geometry JSON for `--plant geometry` (defaults to the reference beam)
    #[arg(long, value_name = "FILE")]
    pub geometry: Option<PathBuf>,
    /// N·s/m
    #[arg(long)]
    pub b_eq: Option<f64>,
    /// N/V
    #[arg(long)]
    pub actuator_gain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DerivePlantArgs {
    /// Beam geometry JSON (defaults to the reference beam)
    #[arg(long, value_name = "FILE")]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub b_eq: Option<f64>,
    #[arg(long)]
    pub actuator_gain: Option<f64>,
    /// Write JSON here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Full experiment config JSON; flags below override its fields
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Preset name or controller JSON
    #[arg(long)]
    pub controller: Option<String>,
    /// s
    #[arg(long, allow_negative_numbers = true)]
    pub duration: Option<f64>,
    /// m
    #[arg(long, allow_negative_numbers = true)]
    pub reference: Option<f64>,
    /// `paper`, `rk23:H_MIN:H_MAX:TOL:SAMPLE` or `euler:H:SAMPLE`
    #[arg(long)]
    pub solver: Option<String>,
    /// Actuator limits `LO:HI` in volts
    #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
    pub saturation: Option<String>,
    /// Trace CSV path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the metrics JSON here
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Persist the run in the run store
    #[arg(long)]
    pub save: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Trace CSV with columns t,r,y,u
    pub trace: PathBuf,
    /// Settling band as a fraction of the final value
    #[arg(long, default_value_t = 0.02)]
    pub band: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RootlocusArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Controller in the loop; the locus is of `1 + k·C(s)G(s)`
    #[arg(long)]
    pub controller: Option<String>,
    /// Gain schedule `log:LO:HI:N`
    #[arg(long, default_value = "log:0.001:1000:200")]
    pub gains: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Percent
    #[arg(long)]
    pub max_overshoot: f64,
    /// Objective evaluations
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting gains `KP,KI,KD`
    #[arg(long, default_value = "1,10,0.01")]
    pub initial: String,
    /// m, step used to score candidates
    #[arg(long, allow_negative_numbers = true)]
    pub reference: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibFitArgs {
    /// Calibration CSV `voltage_v,distance_m` (defaults to the synthetic table)
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Number of evenly spaced points to tabulate the fit at
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HilDeviceArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Line rate; 0 disables throttling
    #[arg(long, default_value_t = 9600)]
    pub baud: u32,
    /// V, sensor noise standard deviation
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LoopModeArg {
    Stream,
    Poll,
}

#[derive(Debug, Args)]
pub struct HilLoopArgs {
    /// Device address; omit to run against an in-process device
    #[arg(long)]
    pub connect: Option<String>,
    #[arg(long, default_value = "pid-paper")]
    pub controller: String,
    /// s
    #[arg(long, default_value_t = 3.0)]
    pub duration: f64,
    /// m above the starting position
    #[arg(long, default_value_t = 0.005, allow_negative_numbers = true)]
    pub reference: f64,
    #[arg(long, value_enum, default_value = "stream")]
    pub mode: LoopModeArg,
    /// Line rate; 0 disables throttling
    #[arg(long, default_value_t = 9600)]
    pub baud: u32,
    /// Seed of the in-process device
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub save: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
}
