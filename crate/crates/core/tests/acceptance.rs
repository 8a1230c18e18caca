//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line reaches the log. The
//! process fails when a check outside `KNOWN_RED` fails, or when a known red
//! check unexpectedly passes (so the list stays honest).

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use levlab::autotune::{evaluate_gains, tune_pid, TuneObjective};
use levlab::controllers::{discretize_tustin, paper_leadlag_tf, pid_tf, pid_tf_filtered, saturate, PidGains, Saturation};
use levlab::experiment::{RunKind, RunRecord, RunStore};
use levlab::hil::frame::cmd;
use levlab::hil::{
    decode_frame, device_tick, encode_frame, run_realtime_loop, DeviceParams, DeviceSim, DeviceThread,
    LoopConfig, DEFAULT_BAUD,
};
use levlab::lti::{dc_gain, tf_series, tf_unity_feedback, Polynomial, TransferFunction};
use levlab::plant::{equivalent_params, paper_plant, plant_tf, BeamGeometry, PlantParameters, DEFAULT_ACTUATOR_GAIN, DEFAULT_B_EQ};
use levlab::sensor::{fit_calibration, quantize, voltage_to_distance, CalibrationTable, SensorModel};
use levlab::sim::{
    oracle_simulate, simulate_closed_loop, simulate_with_stats, step_metrics, SimTrace, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checks that cannot be met by this model; see the README.
const KNOWN_RED: &[u32] = &[5, 9];

struct Check {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<String, String>,
}

fn ok_if(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unbounded() -> Saturation {
    Saturation::unbounded()
}

fn c1_plant_poles() -> Result<String, String> {
    let poles = paper_plant().poles().map_err(|e| e.to_string())?;
    let want = [(-4.05, 77.31), (-4.05, -77.31)];
    let worst = want
        .iter()
        .map(|&(re, im)| {
            poles
                .iter()
                .map(|p| ((p.re - re).powi(2) + (p.im - im).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    ok_if(poles.len() == 2 && worst <= 0.02, format!("poles {poles:?}, worst |Δ| {worst:.4}"))
}

fn c2_derivation_gap() -> Result<String, String> {
    let p = equivalent_params(&BeamGeometry::paper(), DEFAULT_B_EQ, DEFAULT_ACTUATOR_GAIN).map_err(|e| e.to_string())?;
    let m_rel = (p.m_eq - 0.0123).abs() / 0.0123;
    let k_rel = (p.k_eq - 74.0).abs() / 74.0;
    let g = plant_tf(&PlantParameters::paper_reported()).map_err(|e| e.to_string())?;
    let lead = g.den().leading();
    let got = [g.num().coeff(0) / lead, g.den().coeff(1) / lead, g.den().coeff(0) / lead];
    let coef = got
        .iter()
        .zip([337.5, 8.1, 5994.0])
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    ok_if(
        (p.m_eq - 0.0125).abs() < 5e-5 && m_rel <= 0.02 && (p.k_eq - 79.27).abs() < 5e-3 && k_rel <= 0.08 && coef <= 0.005,
        format!(
            "M_eq {:.5} ({:.2}% off), k_eq {:.3} ({:.2}% off), worst coefficient {:.3}%",
            p.m_eq,
            100.0 * m_rel,
            p.k_eq,
            100.0 * k_rel,
            100.0 * coef
        ),
    )
}

fn c3_pid_table() -> Result<String, String> {
    let c = pid_tf(&PidGains::paper()).map_err(|e| e.to_string())?.tf;
    let tr = simulate_closed_loop(&paper_plant(), &c, 1.0, &unbounded(), &SolverConfig::paper(), 2.0)
        .map_err(|e| e.to_string())?;
    let m = step_metrics(&tr, 0.02).map_err(|e| e.to_string())?;
    ok_if(
        m.settled && m.ess <= 1e-3 && m.mp <= 1.0 && (0.6..=0.95).contains(&m.ts),
        format!("Ts {:.4} s, Mp {:.4}%, ess {:.2e}", m.ts, m.mp, m.ess),
    )
}

fn leadlag_report(m: &levlab::sim::StepMetrics, dc: f64) -> String {
    let mut s = String::from("  | quantity | ours | table |\n  |---|---|---|\n");
    s += &format!("  | Ts (2%) | {:.4} s | 0.025 s |\n", m.ts);
    s += &format!("  | Mp | {:.2}% | n/a |\n", m.mp);
    s += &format!("  | ess at 3 s | {:.4} | 0.0025 |\n", m.ess);
    s += &format!("  | ess at DC | {:.4} | 0.0025 |\n", 1.0 - dc);
    s
}

fn c4_leadlag() -> Result<String, String> {
    let plant = paper_plant();
    let c = paper_leadlag_tf();
    let solver = SolverConfig::rk23(1e-6, 0.1, 1e-4, 0.01);
    let tr = simulate_closed_loop(&plant, &c, 1.0, &unbounded(), &solver, 3.0).map_err(|e| e.to_string())?;
    let oracle = oracle_simulate(&plant, &c, 1.0, &unbounded(), 3.0).map_err(|e| e.to_string())?;
    let sup = tr.sup_output_diff(&oracle).map_err(|e| e.to_string())?;

    let cl = tf_unity_feedback(&tf_series(&c, &plant)).map_err(|e| e.to_string())?;
    let dc = dc_gain(&cl).map_err(|e| e.to_string())?.finite().ok_or("closed loop has infinite DC gain")?;
    // the lag pole at 1e-4 rad/s needs ~10 time constants to settle
    let long = SolverConfig::rk23(1e-6, 0.1, 1e-4, 10.0);
    let far = simulate_closed_loop(&plant, &c, 1.0, &unbounded(), &long, 40_000.0).map_err(|e| e.to_string())?;
    let yss = step_metrics(&far, 0.02).map_err(|e| e.to_string())?.yss;

    let m = step_metrics(&tr, 0.02).map_err(|e| e.to_string())?;
    println!("{}", leadlag_report(&m, dc));
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("leadlag_report.md");
    let _ = std::fs::write(&path, leadlag_report(&m, dc));
    ok_if(
        sup <= 5e-3 && (yss - dc).abs() <= 1e-3,
        format!("sup vs oracle {sup:.2e}, yss {yss:.6} vs DC {dc:.6}"),
    )
}

fn c5_solvers() -> Result<String, String> {
    let plant = paper_plant();
    let c = pid_tf(&PidGains::paper()).map_err(|e| e.to_string())?.tf;
    let euler = simulate_closed_loop(&plant, &c, 1.0, &unbounded(), &SolverConfig::euler(0.02, 0.02), 2.0);
    let euler_grows = match euler {
        Err(levlab::Error::Diverged { .. }) => true,
        Err(e) => return Err(e.to_string()),
        Ok(tr) => {
            let n = tr.len();
            let head = tr.y[..n / 4].iter().map(|y| (y - 1.0).abs()).fold(0.0, f64::max);
            let tail = tr.y[3 * n / 4..].iter().map(|y| (y - 1.0).abs()).fold(0.0, f64::max);
            tail > head
        }
    };
    let rk = simulate_closed_loop(&plant, &c, 1.0, &unbounded(), &SolverConfig::paper(), 2.0)
        .map_err(|e| e.to_string())?;
    let oracle = oracle_simulate(&plant, &c, 1.0, &unbounded(), 2.0).map_err(|e| e.to_string())?;
    let sup = rk.sup_output_diff(&oracle).map_err(|e| e.to_string())?;
    ok_if(
        euler_grows && sup <= 5e-3,
        format!("euler h=20ms diverges: {euler_grows}; rk23 (10-100 ms, tol 0.1) sup vs oracle {sup:.3e}"),
    )
}

fn c6_metrics_oracle() -> Result<String, String> {
    let wn = 10.0;
    let mut worst: f64 = 0.0;
    for zeta in [0.2f64, 0.5, 0.7] {
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let phi = (1.0 - zeta * zeta).sqrt().atan2(zeta);
        let mut tr = SimTrace::default();
        for k in 0..=8000 {
            let t = k as f64 * 1e-3;
            let y = 1.0 - (-zeta * wn * t).exp() / (1.0 - zeta * zeta).sqrt() * (wd * t + phi).sin();
            tr.push(t, 1.0, y, 0.0);
        }
        let m = step_metrics(&tr, 0.02).map_err(|e| e.to_string())?;
        let want = 100.0 * (-zeta * PI / (1.0 - zeta * zeta).sqrt()).exp();
        worst = worst.max((m.mp - want).abs());
    }
    ok_if(worst <= 0.5, format!("worst overshoot gap {worst:.4} pp"))
}

fn c7_autotune() -> Result<String, String> {
    let plant = paper_plant();
    let obj = TuneObjective::new(5.0);
    let base = evaluate_gains(&plant, &PidGains::paper(), &obj).map_err(|e| e.to_string())?;
    let base_ts = base.metrics.ok_or("reference gains produced no metrics")?.ts;
    let r = tune_pid(&plant, &obj, &PidGains::new(1.0, 10.0, 0.01), 500, 0).map_err(|e| e.to_string())?;
    let m = r.metrics.ok_or("tuned gains produced no metrics")?;
    ok_if(
        r.feasible && m.mp <= 5.0 && m.ts <= 1.1 * base_ts,
        format!(
            "kp {:.3} ki {:.3} kd {:.5}: Ts {:.4} s (reference {base_ts:.4} s), Mp {:.3}%, {} evaluations",
            r.gains.kp, r.gains.ki, r.gains.kd, m.ts, m.mp, r.evaluations
        ),
    )
}

fn c8_protocol() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut corruptions = 0usize;
    for _ in 0..10_000 {
        let payload: Vec<u8> = (0..rng.random_range(0..=16)).map(|_| rng.random()).collect();
        let (seq, c) = (rng.random(), rng.random());
        let bytes = encode_frame(seq, c, &payload).map_err(|e| e.to_string())?;
        let f = decode_frame(&bytes).map_err(|e| e.to_string())?;
        if (f.seq, f.cmd, &f.payload) != (seq, c, &payload) {
            return Err(format!("round trip changed {bytes:02X?}"));
        }
        for i in 0..bytes.len() {
            for flip in 1..=255u8 {
                let mut bad = bytes.clone();
                bad[i] ^= flip;
                if decode_frame(&bad).is_ok() {
                    return Err(format!("accepted corruption at byte {i} of {bytes:02X?}"));
                }
                corruptions += 1;
            }
        }
    }
    let worked = decode_frame(&[0x5A, 0x05, 0x01, 0x01, 0x5F]).map_err(|e| e.to_string())?;
    ok_if(
        worked.cmd == cmd::GET_DEVICE_ID && worked.seq == 1 && worked.payload.is_empty(),
        format!("10000 round trips, {corruptions} corruptions rejected, worked frame ok"),
    )
}

fn c9_hil() -> Result<String, String> {
    let reference = 0.005;
    let c = discretize_tustin(&pid_tf_filtered(&PidGains::paper()).map_err(|e| e.to_string())?, 0.01)
        .map_err(|e| e.to_string())?;
    let params = DeviceParams::default();
    let d_op = params.equilibrium_distance() + reference;
    let (mut host, dev) = DeviceThread::spawn(params, 0, Some(DEFAULT_BAUD)).map_err(|e| e.to_string())?;
    let cfg = LoopConfig::new(reference, 3.0);
    let q = cfg.sensor.distance_resolution(d_op);
    let (tr, stats) = run_realtime_loop(&mut host, c, &cfg).map_err(|e| e.to_string())?;
    dev.finish().map_err(|e| e.to_string())?;
    if let Some(why) = stats.aborted {
        return Err(why);
    }
    let peak = tr.y.iter().cloned().fold(f64::MIN, f64::max);
    let over = (peak - reference).max(0.0);
    let m = step_metrics(&tr, 0.02).map_err(|e| e.to_string())?;
    let misses = stats.deadline_misses as f64 / (stats.iterations.max(1)) as f64;
    ok_if(
        over <= q && m.ess <= q && misses < 0.01,
        format!(
            "overshoot {:.3} mm, ess {:.3} mm, quantum {:.3} mm, misses {:.2}% of {}",
            1e3 * over,
            1e3 * m.ess,
            1e3 * q,
            100.0 * misses,
            stats.iterations
        ),
    )
}

/// Quick sampled pass over each invariant; the property suites go deeper.
fn c10_invariants() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failed = Vec::new();

    // root residuals and conjugate pairing
    for _ in 0..200 {
        let deg = rng.random_range(1..=8);
        let coeffs: Vec<f64> = (0..=deg).map(|_| rng.random_range(-10.0..10.0)).collect();
        let p = Polynomial::new(coeffs);
        if p.degree() == 0 {
            continue;
        }
        let roots = p.roots().map_err(|e| e.to_string())?;
        let scale = p.max_abs_coeff();
        for r in &roots {
            let z = num_complex::Complex64::new(r.re, r.im);
            let bound = 1e-6 * scale * (1.0 + r.abs()).powi(p.degree() as i32);
            if p.eval_complex(z).norm() > bound {
                failed.push("root residual");
            }
            if r.im != 0.0 && !roots.iter().any(|s| s.re == r.re && s.im == -r.im) {
                failed.push("conjugate pairing");
            }
        }
    }

    // Tustin keeps the DC gain of lag-type sections
    for _ in 0..100 {
        let (a, b, k) = (rng.random_range(0.1..100.0), rng.random_range(0.1..100.0), rng.random_range(0.1..10.0));
        let g = TransferFunction::new(vec![k, k * a], vec![1.0, b]).map_err(|e| e.to_string())?;
        let d = discretize_tustin(&g, 0.01).map_err(|e| e.to_string())?;
        if (d.dc_gain() - k * a / b).abs() > 1e-9 * (k * a / b).max(1.0) {
            failed.push("tustin dc");
        }
    }

    // saturation safety
    let sat = Saturation::supply_12v();
    for _ in 0..1000 {
        let u: f64 = rng.random_range(-1e6..1e6);
        if !sat.contains(saturate(u, &sat)) {
            failed.push("saturation");
        }
    }

    // calibration monotone and invertible
    let model = SensorModel::default_model();
    let f = fit_calibration(&CalibrationTable::synthetic_default());
    let (lo, hi) = f.span();
    let mut prev = f.eval(lo);
    for k in 1..=1000 {
        let v = f.eval(lo + (hi - lo) * k as f64 / 1000.0);
        if v >= prev {
            failed.push("calibration monotone");
        }
        prev = v;
    }
    for _ in 0..100 {
        let d = rng.random_range(lo..hi);
        if (voltage_to_distance(&model, model.distance_to_voltage(d)).distance - d).abs() > 1e-6 {
            failed.push("calibration round trip");
        }
        let v = quantize(&model, rng.random_range(0.0..5.0));
        if quantize(&model, v) != v {
            failed.push("quantize idempotent");
        }
    }

    // device energy decays with the coil off
    let mut dev = DeviceSim::new(DeviceParams::default(), 0).map_err(|e| e.to_string())?;
    dev.state.velocity = 0.3;
    let mut e = dev.mechanical_energy();
    for _ in 0..2000 {
        device_tick(&mut dev, 1e-3);
        let next = dev.mechanical_energy();
        if next > e + 1e-12 {
            failed.push("energy decay");
            break;
        }
        e = next;
    }

    // run record round trip
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = RunStore::new(dir.path());
    let cfg = levlab::experiment::ExperimentConfig::default();
    let sim = simulate_with_stats(
        &paper_plant(),
        &pid_tf(&PidGains::paper()).map_err(|e| e.to_string())?.tf,
        1.0,
        &unbounded(),
        &SolverConfig::paper(),
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let saved: RunRecord = store.save(RunKind::Batch, &cfg, &sim.trace, Some(sim.stats), None).map_err(|e| e.to_string())?;
    let back = store.load(&saved.id).map_err(|e| e.to_string())?;
    let trace = store.load_trace(&back).map_err(|e| e.to_string())?;
    if back != saved || trace != sim.trace.as_exported() {
        failed.push("run record round trip");
    }

    failed.dedup();
    if failed.is_empty() {
        Ok("roots, conjugates, tustin dc, saturation, calibration, energy, run records".into())
    } else {
        Err(format!("violated: {}", failed.join(", ")))
    }
}

fn main() {
    let checks = [
        Check { id: 1, name: "plant poles", budget: Duration::from_secs(1), run: c1_plant_poles },
        Check { id: 2, name: "derivation gap", budget: Duration::from_secs(1), run: c2_derivation_gap },
        Check { id: 3, name: "PID step response", budget: Duration::from_secs(5), run: c3_pid_table },
        Check { id: 4, name: "lead-lag vs oracle", budget: Duration::from_secs(5), run: c4_leadlag },
        Check { id: 5, name: "solver comparison", budget: Duration::from_secs(5), run: c5_solvers },
        Check { id: 6, name: "overshoot oracle", budget: Duration::from_secs(2), run: c6_metrics_oracle },
        Check { id: 7, name: "autotune witness", budget: Duration::from_secs(60), run: c7_autotune },
        Check { id: 8, name: "frame protocol", budget: Duration::from_secs(5), run: c8_protocol },
        Check { id: 9, name: "HIL loop", budget: Duration::from_secs(10), run: c9_hil },
        Check { id: 10, name: "invariants", budget: Duration::from_secs(60), run: c10_invariants },
    ];
    let mut surprises = Vec::new();
    for c in &checks {
        let t0 = Instant::now();
        let outcome = (c.run)();
        let took = t0.elapsed();
        let in_time = took <= c.budget;
        let (pass, detail) = match outcome {
            Ok(d) if in_time => (true, d),
            Ok(d) => (false, format!("{d}; took {took:.2?} > {:?}", c.budget)),
            Err(d) => (false, d),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} {:>2} {:<20} {:>8.2?}  {detail}", c.id, c.name, took);
        if pass == KNOWN_RED.contains(&c.id) {
            surprises.push(c.id);
        }
    }
    if !surprises.is_empty() {
        eprintln!("unexpected outcome for checks {surprises:?}");
        std::process::exit(1);
    }
}
