//! Subcommand implementations. Each returns the JSON it reports; `main`
//! decides where it goes and maps errors to exit codes.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use levlab::autotune::{tune_pid, TuneObjective};
use levlab::controllers::{discretize_tustin, PidGains, Saturation};
use levlab::experiment::{
    metrics_or_note, run_experiment, ControllerSpec, ExperimentConfig, PlantSource, RunKind, RunStore,
};
use levlab::hil::{
    run_device, run_realtime_loop, DeviceParams, DeviceSim, DeviceThread, LoopConfig, LoopMode, TcpTransport,
};
use levlab::lti::{log_gain_schedule, root_locus, TransferFunction};
use levlab::plant::{equivalent_params, gravity_bias, paper_plant, plant_tf, BeamGeometry, DEFAULT_ACTUATOR_GAIN, DEFAULT_B_EQ};
use levlab::sensor::{fit_calibration, CalibrationTable};
use levlab::sim::{step_metrics, SimTrace, SolverConfig};
use levlab::{Error, Result};
use serde_json::{json, Value};

use crate::args::*;

pub fn store(data_dir: Option<PathBuf>) -> RunStore {
    data_dir.map_or_else(RunStore::from_env, RunStore::new)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn geometry(path: Option<&PathBuf>) -> Result<BeamGeometry> {
    path.map_or_else(|| Ok(BeamGeometry::paper()), |p| read_json(p))
}

fn plant_source(a: &PlantArgs) -> Result<PlantSource> {
    match a.plant.unwrap_or(PlantChoice::Paper) {
        PlantChoice::Paper => {
            if a.geometry.is_some() || a.b_eq.is_some() || a.actuator_gain.is_some() {
                return Err(Error::InvalidArgument(
                    "--geometry, --b-eq and --actuator-gain need --plant geometry".into(),
                ));
            }
            Ok(PlantSource::Paper)
        }
        PlantChoice::Geometry => Ok(PlantSource::Geometry {
            geometry: geometry(a.geometry.as_ref())?,
            b_eq: a.b_eq.unwrap_or(DEFAULT_B_EQ),
            actuator_gain: a.actuator_gain.unwrap_or(DEFAULT_ACTUATOR_GAIN),
        }),
    }
}

fn parse_f64s(s: &str, sep: char, what: &str) -> Result<Vec<f64>> {
    s.split(sep)
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{what}: `{p}` is not a number")))
        })
        .collect()
}

pub fn parse_solver(s: &str) -> Result<SolverConfig> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let nums = if rest.is_empty() { Vec::new() } else { parse_f64s(rest, ':', "solver")? };
    let cfg = match (kind, nums.as_slice()) {
        ("paper", []) => SolverConfig::paper(),
        ("rk23", &[h_min, h_max, tol, sample]) => SolverConfig::rk23(h_min, h_max, tol, sample),
        ("euler", &[h, sample]) => SolverConfig::euler(h, sample),
        _ => {
            return Err(Error::SolverConfig(format!(
                "`{s}`: expected paper, rk23:H_MIN:H_MAX:TOL:SAMPLE or euler:H:SAMPLE"
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_saturation(s: &str) -> Result<Saturation> {
    match parse_f64s(s, ':', "saturation")?[..] {
        [lo, hi] => Saturation::new(lo, hi),
        _ => Err(Error::InvalidArgument(format!("saturation `{s}`: expected LO:HI"))),
    }
}

/// `log:LO:HI:N`
pub fn parse_gain_schedule(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("gains `{s}`: expected log:LO:HI:N"));
    let rest = s.strip_prefix("log:").ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(':').collect();
    let [lo, hi, n] = parts[..] else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    log_gain_schedule(lo, hi, n)
}

fn tf_json(g: &TransferFunction) -> Result<Value> {
    Ok(json!({
        "num": g.num().coeffs(),
        "den": g.den().coeffs(),
        "poles": g.poles()?,
    }))
}

pub fn derive_plant(a: &DerivePlantArgs) -> Result<Value> {
    let geom = geometry(a.geometry.as_ref())?;
    let p = equivalent_params(
        &geom,
        a.b_eq.unwrap_or(DEFAULT_B_EQ),
        a.actuator_gain.unwrap_or(DEFAULT_ACTUATOR_GAIN),
    )?;
    let g = plant_tf(&p)?;
    let reference = paper_plant();
    let rel: Vec<f64> = g
        .den()
        .coeffs()
        .iter()
        .chain(g.num().coeffs())
        .zip(reference.den().coeffs().iter().chain(reference.num().coeffs()))
        .map(|(a, b)| (a - b).abs() / b.abs())
        .collect();
    Ok(json!({
        "geometry": geom,
        "params": p,
        "natural_frequency": p.natural_frequency(),
        "gravity_bias": gravity_bias(&p),
        "transfer_function": tf_json(&g)?,
        "reference_transfer_function": tf_json(&reference)?,
        "relative_coefficient_error": rel,
    }))
}

pub struct SimulateOutput {
    pub trace: SimTrace,
    pub report: Value,
}

pub fn simulate(a: &SimulateArgs, store: &RunStore) -> Result<SimulateOutput> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if a.config.is_none() || a.plant.plant.is_some() {
        cfg.plant = plant_source(&a.plant)?;
    }
    if let Some(c) = &a.controller {
        cfg.controller = c.parse()?;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    if let Some(r) = a.reference {
        cfg.reference = r;
    }
    if let Some(s) = &a.solver {
        cfg.solver = parse_solver(s)?;
    }
    if let Some(s) = &a.saturation {
        cfg.saturation = Some(parse_saturation(s)?);
    }
    let out = run_experiment(&cfg)?;
    let mut report = json!({
        "metrics": out.metrics,
        "solver_stats": out.solver_stats,
        "samples": out.trace.len(),
    });
    if let Some(note) = &out.metrics_note {
        report["metrics_note"] = json!(note);
    }
    if a.save {
        let rec = store.save(RunKind::Batch, &cfg, &out.trace, Some(out.solver_stats), None)?;
        report["run_id"] = json!(rec.id);
    }
    Ok(SimulateOutput {
        trace: out.trace,
        report,
    })
}

pub fn metrics(a: &MetricsArgs) -> Result<Value> {
    let tr = SimTrace::load_csv(&a.trace)?;
    let m = step_metrics(&tr, a.band)?;
    Ok(serde_json::to_value(m).expect("metrics serialize"))
}

fn controller_tf(spec: Option<&String>) -> Result<TransferFunction> {
    match spec {
        Some(s) => s.parse::<ControllerSpec>()?.transfer_function(),
        None => Ok(TransferFunction::gain(1.0)),
    }
}

pub fn rootlocus(a: &RootlocusArgs) -> Result<Value> {
    let plant = plant_source(&a.plant)?.transfer_function()?;
    let l = controller_tf(a.controller.as_ref())?.series(&plant);
    let gains = parse_gain_schedule(&a.gains)?;
    let branches = root_locus(&l, &gains)?;
    Ok(json!({
        "open_loop": tf_json(&l)?,
        "gains": gains,
        "branches": branches.iter().map(|b| json!({ "points": b.points })).collect::<Vec<_>>(),
    }))
}

pub fn tune(a: &TuneArgs) -> Result<Value> {
    let plant = plant_source(&a.plant)?.transfer_function()?;
    let mut obj = TuneObjective::new(a.max_overshoot);
    if let Some(r) = a.reference {
        obj.reference = r;
    }
    let [kp, ki, kd] = parse_f64s(&a.initial, ',', "initial")?[..] else {
        return Err(Error::InvalidArgument("--initial expects KP,KI,KD".into()));
    };
    let res = tune_pid(&plant, &obj, &PidGains::new(kp, ki, kd), a.budget, a.seed)?;
    Ok(json!({ "objective": obj, "result": res }))
}

pub fn calib_fit(a: &CalibFitArgs) -> Result<Value> {
    let table = match &a.table {
        Some(p) => CalibrationTable::read_csv(fs::File::open(p)?)?,
        None => CalibrationTable::synthetic_default(),
    };
    if a.samples < 2 {
        return Err(Error::InvalidArgument("--samples must be >= 2".into()));
    }
    let fit = fit_calibration(&table);
    let (lo, hi) = fit.span();
    let grid: Vec<Value> = (0..a.samples)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / (a.samples - 1) as f64;
            json!({ "voltage": v, "distance": fit.eval(v) })
        })
        .collect();
    Ok(json!({ "points": table.points(), "fit": fit, "samples": grid }))
}

pub fn hil_device(a: &HilDeviceArgs) -> Result<()> {
    let listener = TcpListener::bind(&a.listen)?;
    eprintln!("virtual device listening on {}", listener.local_addr()?);
    let mut params = DeviceParams::default();
    if let Some(n) = a.noise_std {
        params.noise_std = n;
    }
    let mut dev = DeviceSim::new(params, a.seed)?;
    let stop = Arc::new(AtomicBool::new(false));
    let baud = (a.baud > 0).then_some(a.baud);
    // one host at a time; the device keeps its state between connections
    for conn in listener.incoming() {
        let stream = conn?;
        let peer = stream.peer_addr()?;
        eprintln!("host connected from {peer}");
        let mut t = TcpTransport::new(stream, baud)?;
        run_device(&mut dev, &mut t, &stop)?;
        eprintln!("host {peer} left");
    }
    Ok(())
}

pub struct HilOutput {
    pub trace: SimTrace,
    pub report: Value,
}

pub fn hil_loop(a: &HilLoopArgs, store: &RunStore) -> Result<HilOutput> {
    let spec: ControllerSpec = a.controller.parse()?;
    let mut cfg = LoopConfig::new(a.reference, a.duration);
    cfg.mode = match a.mode {
        LoopModeArg::Stream => LoopMode::Stream,
        LoopModeArg::Poll => LoopMode::Poll,
    };
    let ctrl = discretize_tustin(&spec.proper_transfer_function()?, cfg.period)?;
    let baud = (a.baud > 0).then_some(a.baud);
    let (trace, stats) = match &a.connect {
        Some(addr) => {
            let mut t = TcpTransport::connect(addr, baud)?;
            run_realtime_loop(&mut t, ctrl, &cfg)?
        }
        None => {
            let (mut host, dev) = DeviceThread::spawn(DeviceParams::default(), a.seed, baud)?;
            let out = run_realtime_loop(&mut host, ctrl, &cfg);
            drop(host);
            dev.finish()?;
            out?
        }
    };
    let (metrics, note) = metrics_or_note(&trace, 0.02);
    let mut report = json!({ "loop_stats": stats, "metrics": metrics });
    if let Some(n) = note {
        report["metrics_note"] = json!(n);
    }
    if a.save {
        let exp = ExperimentConfig {
            controller: spec,
            reference: a.reference,
            duration: a.duration,
            saturation: Some(cfg.sat),
            seed: a.seed,
            ..Default::default()
        };
        let rec = store.save(RunKind::Hil, &exp, &trace, None, Some(stats))?;
        report["run_id"] = json!(rec.id);
    }
    Ok(HilOutput { trace, report })
}
