//! Experiment configuration and the on-disk run store.
//!
//! A run directory holds `trace.csv` and `record.json`. Metrics in the
//! record are computed from the trace exactly as written, so reloading the
//! CSV and recomputing gives the stored numbers back.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::controllers::{
    leadlag_tf, paper_leadlag_tf, pid_tf, pid_tf_filtered, LeadLagParams, PidGains, Saturation,
    DEFAULT_DERIVATIVE_FILTER_N,
};
use crate::error::{Error, Result};
use crate::hil::LoopStats;
use crate::lti::TransferFunction;
use crate::plant::{equivalent_params, paper_plant, plant_tf, BeamGeometry, PlantParameters, DEFAULT_ACTUATOR_GAIN, DEFAULT_B_EQ};
use crate::sim::{simulate_with_stats, step_metrics, SimTrace, SolverConfig, SolverStats, StepMetrics, DEFAULT_SETTLE_BAND};

/// Environment variable naming the run store root.
pub const DATA_DIR_ENV: &str = "LEVLAB_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "levlab-data";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum PlantSource {
    /// the literal reference transfer function
    #[default]
    Paper,
    /// lumped parameters derived from beam geometry
    Geometry {
        #[serde(default = "BeamGeometry::paper")]
        geometry: BeamGeometry,
        #[serde(default = "default_b_eq")]
        b_eq: f64,
        #[serde(default = "default_actuator_gain")]
        actuator_gain: f64,
    },
    Parameters { params: PlantParameters },
}

fn default_b_eq() -> f64 {
    DEFAULT_B_EQ
}

fn default_actuator_gain() -> f64 {
    DEFAULT_ACTUATOR_GAIN
}

impl PlantSource {
    pub fn transfer_function(&self) -> Result<TransferFunction> {
        match self {
            PlantSource::Paper => Ok(paper_plant()),
            PlantSource::Geometry {
                geometry,
                b_eq,
                actuator_gain,
            } => plant_tf(&equivalent_params(geometry, *b_eq, *actuator_gain)?),
            PlantSource::Parameters { params } => plant_tf(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// ideal PID with the reference gains
    PidPaper,
    PidPaperFiltered,
    LeadlagPaper,
    Off,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::PidPaper, Preset::PidPaperFiltered, Preset::LeadlagPaper, Preset::Off];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PidPaper => "pid-paper",
            Preset::PidPaperFiltered => "pid-paper-filtered",
            Preset::LeadlagPaper => "leadlag-paper",
            Preset::Off => "off",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::param("controller", format!("unknown preset `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerSpec {
    Preset { name: Preset },
    /// ideal derivative unless `derivative_filter_n` is given
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none", alias = "n")]
        derivative_filter_n: Option<f64>,
    },
    LeadLag(LeadLagParams),
    Transfer { num: Vec<f64>, den: Vec<f64> },
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec::Preset { name: Preset::PidPaper }
    }
}

impl ControllerSpec {
    pub fn transfer_function(&self) -> Result<TransferFunction> {
        match self {
            ControllerSpec::Preset { name } => match name {
                Preset::PidPaper => Ok(pid_tf(&PidGains::paper())?.tf),
                Preset::PidPaperFiltered => pid_tf_filtered(&PidGains::paper()),
                Preset::LeadlagPaper => Ok(paper_leadlag_tf()),
                Preset::Off => Ok(TransferFunction::gain(0.0)),
            },
            ControllerSpec::Pid {
                kp,
                ki,
                kd,
                derivative_filter_n,
            } => {
                let mut g = PidGains::new(*kp, *ki, *kd);
                match derivative_filter_n {
                    Some(n) => {
                        g.derivative_filter_n = *n;
                        pid_tf_filtered(&g)
                    }
                    None => Ok(pid_tf(&g)?.tf),
                }
            }
            ControllerSpec::LeadLag(p) => leadlag_tf(p),
            ControllerSpec::Transfer { num, den } => TransferFunction::new(num.clone(), den.clone()),
        }
    }

    /// A realizable version for sampled loops: an ideal derivative gets the
    /// default filter.
    pub fn proper_transfer_function(&self) -> Result<TransferFunction> {
        match self {
            ControllerSpec::Preset { name: Preset::PidPaper } => pid_tf_filtered(&PidGains::paper()),
            ControllerSpec::Pid {
                kp,
                ki,
                kd,
                derivative_filter_n: None,
            } => ControllerSpec::Pid {
                kp: *kp,
                ki: *ki,
                kd: *kd,
                derivative_filter_n: Some(DEFAULT_DERIVATIVE_FILTER_N),
            }
            .transfer_function(),
            other => {
                let g = other.transfer_function()?;
                if !g.is_proper() {
                    return Err(Error::Improper {
                        num: g.num().degree(),
                        den: g.den().degree(),
                    });
                }
                Ok(g)
            }
        }
    }
}

/// A preset name, or the JSON form.
impl FromStr for ControllerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::param("controller", e.to_string()));
        }
        Ok(ControllerSpec::Preset { name: s.parse()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSource,
    pub controller: ControllerSpec,
    pub solver: SolverConfig,
    /// m
    pub reference: f64,
    /// s
    pub duration: f64,
    /// V limits; absent means unbounded
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation: Option<Saturation>,
    pub settle_band: f64,
    /// m, measurement noise for interactive runs
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plant: PlantSource::Paper,
            controller: ControllerSpec::default(),
            solver: SolverConfig::paper(),
            reference: 1.0,
            duration: 2.0,
            saturation: None,
            settle_band: DEFAULT_SETTLE_BAND,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn saturation(&self) -> Saturation {
        self.saturation.unwrap_or_else(Saturation::unbounded)
    }

    /// Field-level checks; builds plant and controller to surface their
    /// errors too.
    pub fn validate(&self) -> Result<()> {
        if !self.reference.is_finite() {
            return Err(Error::param("reference", "must be finite"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::param("duration", format!("must be > 0, got {}", self.duration)));
        }
        if !(self.settle_band > 0.0 && self.settle_band < 1.0) {
            return Err(Error::param("settle_band", "must lie in (0, 1)"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be >= 0"));
        }
        if let Some(s) = &self.saturation {
            Saturation::new(s.lo, s.hi)?;
        }
        self.solver.validate()?;
        self.plant.transfer_function()?;
        self.controller.transfer_function()?;
        Ok(())
    }
}

/// A batch run: the trace as exported plus its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub trace: SimTrace,
    pub solver_stats: SolverStats,
    /// absent when the response is degenerate
    pub metrics: Option<StepMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_note: Option<String>,
}

/// Metrics, or the reason there are none.
pub fn metrics_or_note(trace: &SimTrace, band: f64) -> (Option<StepMetrics>, Option<String>) {
    match step_metrics(trace, band) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let plant = cfg.plant.transfer_function()?;
    let ctrl = cfg.controller.transfer_function()?;
    let sim = simulate_with_stats(&plant, &ctrl, cfg.reference, &cfg.saturation(), &cfg.solver, cfg.duration)?;
    let trace = sim.trace.as_exported();
    let (metrics, metrics_note) = metrics_or_note(&trace, cfg.settle_band);
    Ok(ExperimentOutcome {
        trace,
        solver_stats: sim.stats,
        metrics,
        metrics_note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Batch,
    Live,
    Hil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub kind: RunKind,
    pub config: ExperimentConfig,
    /// relative to the run directory
    pub trace_path: String,
    pub metrics: Option<StepMetrics>,
    pub solver_stats: Option<SolverStats>,
    pub loop_stats: Option<LoopStats>,
}

pub const TRACE_FILE: &str = "trace.csv";
pub const RECORD_FILE: &str = "record.json";

/// Directory of runs, one subdirectory per id.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_hexdigit() || c == '-') {
        return Err(Error::param("id", format!("malformed run id `{id}`")));
    }
    Ok(())
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    /// Root from `LEVLAB_DATA_DIR`, else `./levlab-data`.
    pub fn from_env() -> Self {
        RunStore::new(std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    /// Write the trace, then a record whose metrics come from the written
    /// values.
    pub fn save(
        &self,
        kind: RunKind,
        config: &ExperimentConfig,
        trace: &SimTrace,
        solver_stats: Option<SolverStats>,
        loop_stats: Option<LoopStats>,
    ) -> Result<RunRecord> {
        // JSON has no NaN; a non-finite trace would store an unloadable record
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&trace.t) && finite(&trace.r) && finite(&trace.y) && finite(&trace.u)) {
            return Err(Error::InvalidArgument("trace has non-finite samples".into()));
        }
        let id = uuid::Uuid::new_v4().to_string();
        let dir = self.run_dir(&id);
        fs::create_dir_all(&dir)?;
        let exported = trace.as_exported();
        exported.save_csv(&dir.join(TRACE_FILE))?;
        let (metrics, _) = metrics_or_note(&exported, config.settle_band);
        let rec = RunRecord {
            id,
            timestamp: Utc::now(),
            kind,
            config: config.clone(),
            trace_path: TRACE_FILE.into(),
            metrics,
            solver_stats,
            loop_stats,
        };
        let json = serde_json::to_string_pretty(&rec).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join(RECORD_FILE), json)?;
        Ok(rec)
    }

    pub fn load(&self, id: &str) -> Result<RunRecord> {
        check_id(id)?;
        let text = fs::read_to_string(self.run_dir(id).join(RECORD_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load_trace(&self, rec: &RunRecord) -> Result<SimTrace> {
        check_id(&rec.id)?;
        SimTrace::load_csv(&self.run_dir(&rec.id).join(&rec.trace_path))
    }

    /// All readable records, oldest first.
    pub fn list(&self) -> Result<Vec<RunRecord>> {
        let dir = self.root.join("runs");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name();
            if let Some(rec) = name.to_str().and_then(|id| self.load(id).ok()) {
                out.push(rec);
            }
        }
        out.sort_by_key(|r| r.timestamp);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_defaults_and_rejections() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"controller":{"kind":"pid","kp":1,"ki":2,"kd":0.01,"n":50}}"#).unwrap();
        assert!(matches!(c.controller, ControllerSpec::Pid { derivative_filter_n: Some(n), .. } if n == 50.0));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
        let bad = ExperimentConfig {
            duration: -1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidParameter { field: "duration", .. })));
    }

    #[test]
    fn controller_spec_parsing() {
        assert_eq!(
            "leadlag-paper".parse::<ControllerSpec>().unwrap(),
            ControllerSpec::Preset { name: Preset::LeadlagPaper }
        );
        assert!("pid-nope".parse::<ControllerSpec>().is_err());
        let g = "pid-paper".parse::<ControllerSpec>().unwrap();
        assert!(!g.transfer_function().unwrap().is_proper());
        assert!(g.proper_transfer_function().unwrap().is_proper());
    }

    #[test]
    fn geometry_plant_is_near_reference() {
        let g = PlantSource::Geometry {
            geometry: BeamGeometry::paper(),
            b_eq: DEFAULT_B_EQ,
            actuator_gain: DEFAULT_ACTUATOR_GAIN,
        }
        .transfer_function()
        .unwrap();
        assert_eq!(g.den().degree(), 2);
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let cfg = ExperimentConfig::default();
        let out = run_experiment(&cfg).unwrap();
        let rec = store.save(RunKind::Batch, &cfg, &out.trace, Some(out.solver_stats), None).unwrap();
        let back = store.load(&rec.id).unwrap();
        assert_eq!(back, rec);
        let tr = store.load_trace(&back).unwrap();
        assert_eq!(tr, out.trace);
        let m = step_metrics(&tr, cfg.settle_band).unwrap();
        assert_eq!(Some(m), back.metrics);
        assert_eq!(store.list().unwrap().len(), 1);
        assert!(store.load("../etc").is_err());
        let mut bad = out.trace.clone();
        bad.y[3] = f64::NAN;
        assert!(store.save(RunKind::Batch, &cfg, &bad, None, None).is_err());
        assert_eq!(store.list().unwrap().len(), 1);
    }
}
