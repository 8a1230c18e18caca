//! PID gain search: minimize settling time subject to an overshoot cap and
//! the actuator voltage range.
//!
//! Nelder–Mead over `(ln kp, ln ki, ln kd)` with box bounds, seeded restarts
//! and an additive penalty for constraint violations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{pid_tf_filtered, PidGains, Saturation};
use crate::error::{Error, Result};
use crate::lti::TransferFunction;
use crate::sim::{simulate_closed_loop, step_metrics, SimTrace, SolverConfig, StepMetrics};

pub const PENALTY_WEIGHT: f64 = 1e3;
pub const MIN_BUDGET: usize = 50;

/// Search bounds per gain, `[lo, hi]`, all positive.
const BOUNDS: [(f64, f64); 3] = [(1e-3, 1e3), (1e-3, 1e4), (1e-4, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneObjective {
    /// percent
    pub max_overshoot: f64,
    pub sat: Saturation,
    pub settle_band: f64,
    /// s
    pub sim_duration: f64,
    /// m, step amplitude used for every candidate
    #[serde(default = "default_reference")]
    pub reference: f64,
    /// m; defaults to `settle_band·|reference|`
    #[serde(default)]
    pub max_ess: Option<f64>,
}

fn default_reference() -> f64 {
    0.01
}

impl TuneObjective {
    /// Overshoot cap in percent with the ±12 V supply and a 1 cm step.
    pub fn new(max_overshoot: f64) -> Self {
        TuneObjective {
            max_overshoot,
            sat: Saturation::supply_12v(),
            settle_band: 0.02,
            sim_duration: 2.0,
            reference: default_reference(),
            max_ess: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_overshoot >= 0.0) {
            return Err(Error::param("max_overshoot", "must be >= 0"));
        }
        if !(self.sim_duration > 0.0 && self.sim_duration.is_finite()) {
            return Err(Error::param("sim_duration", "must be > 0"));
        }
        if !(self.settle_band > 0.0 && self.settle_band < 1.0) {
            return Err(Error::param("settle_band", "must be in (0, 1)"));
        }
        if !(self.reference != 0.0 && self.reference.is_finite()) {
            return Err(Error::param("reference", "must be nonzero"));
        }
        if let Some(e) = self.max_ess {
            if !(e >= 0.0) {
                return Err(Error::param("max_ess", "must be >= 0"));
            }
        }
        self.sat.validate()
    }

    pub fn ess_bound(&self) -> f64 {
        self.max_ess
            .unwrap_or(self.settle_band * self.reference.abs())
    }

    /// Solver used for every candidate.
    pub fn solver(&self) -> SolverConfig {
        let sample = (self.sim_duration / 2000.0).clamp(1e-4, 1e-3);
        SolverConfig::rk23(1e-7, sample, 1e-7, sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub gains: PidGains,
    /// absent when the simulation failed or the response was degenerate
    pub metrics: Option<StepMetrics>,
    pub max_abs_u: f64,
    /// V·s of demand outside the actuator range
    pub saturation_violation: f64,
    pub feasible: bool,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub gains: PidGains,
    pub metrics: Option<StepMetrics>,
    pub feasible: bool,
    pub evaluations: usize,
    pub cost: f64,
}

const FAILED_COST: f64 = 1e12;

/// Simulate the filtered PID (actuator unbounded, so violations stay
/// measurable) and score it against the objective.
pub fn evaluate_gains(
    plant: &TransferFunction,
    gains: &PidGains,
    objective: &TuneObjective,
) -> Result<Evaluation> {
    objective.validate()?;
    if !(gains.kp >= 0.0 && gains.ki >= 0.0 && gains.kd >= 0.0) {
        return Err(Error::param("gains", "must be >= 0"));
    }
    let failed = |gains: PidGains| Evaluation {
        gains,
        metrics: None,
        max_abs_u: f64::INFINITY,
        saturation_violation: f64::INFINITY,
        feasible: false,
        cost: FAILED_COST,
    };
    let controller = pid_tf_filtered(gains)?;
    let trace = match simulate_closed_loop(
        plant,
        &controller,
        objective.reference,
        &Saturation::unbounded(),
        &objective.solver(),
        objective.sim_duration,
    ) {
        Ok(t) => t,
        Err(Error::Diverged(_)) => return Ok(failed(*gains)),
        Err(e) => return Err(e),
    };
    let metrics = match step_metrics(&trace, objective.settle_band) {
        Ok(m) => m,
        Err(Error::DegenerateResponse) => {
            let mut ev = failed(*gains);
            ev.max_abs_u = trace.max_abs_u();
            ev.saturation_violation = violation(&trace, &objective.sat);
            ev.cost = objective.sim_duration + PENALTY_WEIGHT * (1.0 + ev.saturation_violation);
            return Ok(ev);
        }
        Err(e) => return Err(e),
    };
    Ok(score(*gains, &trace, metrics, objective))
}

fn violation(trace: &SimTrace, sat: &Saturation) -> f64 {
    let excess: Vec<f64> = trace
        .u
        .iter()
        .map(|&u| (u - sat.hi).max(0.0) + (sat.lo - u).max(0.0))
        .collect();
    trace
        .t
        .windows(2)
        .zip(excess.windows(2))
        .map(|(t, e)| 0.5 * (t[1] - t[0]) * (e[0] + e[1]))
        .sum()
}

fn score(gains: PidGains, trace: &SimTrace, m: StepMetrics, obj: &TuneObjective) -> Evaluation {
    let sat_violation = violation(trace, &obj.sat);
    let in_range = trace.within(&obj.sat);
    let mp_excess = (m.mp - obj.max_overshoot).max(0.0);
    let ess_excess = (m.ess - obj.ess_bound()).max(0.0) / obj.reference.abs();
    let time_term = if m.settled {
        m.ts
    } else {
        // keep the surface sloped toward settling
        let last = *trace.y.last().expect("non-empty");
        obj.sim_duration + (last - m.yss).abs() / obj.reference.abs()
    };
    let cost = time_term + PENALTY_WEIGHT * (mp_excess + sat_violation + ess_excess)
        + if m.settled { 0.0 } else { PENALTY_WEIGHT };
    let feasible = m.settled && mp_excess == 0.0 && in_range && ess_excess == 0.0;
    Evaluation {
        gains,
        metrics: Some(m),
        max_abs_u: trace.max_abs_u(),
        saturation_violation: sat_violation,
        feasible,
        cost,
    }
}

fn to_gains(theta: &[f64; 3], n: f64) -> PidGains {
    PidGains {
        kp: theta[0].exp(),
        ki: theta[1].exp(),
        kd: theta[2].exp(),
        derivative_filter_n: n,
    }
}

fn clamp_theta(theta: &mut [f64; 3]) {
    for (v, (lo, hi)) in theta.iter_mut().zip(BOUNDS) {
        *v = v.clamp(lo.ln(), hi.ln());
    }
}

struct Search<'a> {
    plant: &'a TransferFunction,
    objective: &'a TuneObjective,
    n_filter: f64,
    budget: usize,
    used: usize,
    best: Option<Evaluation>,
    best_feasible: Option<Evaluation>,
}

impl Search<'_> {
    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn eval(&mut self, theta: &[f64; 3]) -> Result<f64> {
        self.used += 1;
        let ev = evaluate_gains(self.plant, &to_gains(theta, self.n_filter), self.objective)?;
        let cost = ev.cost;
        if self.best.as_ref().is_none_or(|b| cost < b.cost) {
            self.best = Some(ev.clone());
        }
        if ev.feasible && self.best_feasible.as_ref().is_none_or(|b| cost < b.cost) {
            self.best_feasible = Some(ev);
        }
        Ok(cost)
    }

    /// One Nelder–Mead descent from `start`; returns the best vertex.
    fn descend(&mut self, start: [f64; 3], scale: f64) -> Result<[f64; 3]> {
        let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
        let f0 = self.eval(&start)?;
        simplex.push((start, f0));
        for i in 0..3 {
            if self.exhausted() {
                return Ok(start);
            }
            let mut v = start;
            v[i] += scale;
            clamp_theta(&mut v);
            if v[i] == start[i] {
                v[i] -= scale;
                clamp_theta(&mut v);
            }
            let f = self.eval(&v)?;
            simplex.push((v, f));
        }

        while !self.exhausted() {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex
                .iter()
                .skip(1)
                .map(|(v, _)| dist(v, &simplex[0].0))
                .fold(0.0, f64::max);
            if spread < 1e-4 {
                break;
            }
            let centroid = {
                let mut c = [0.0; 3];
                for (v, _) in &simplex[..3] {
                    for i in 0..3 {
                        c[i] += v[i] / 3.0;
                    }
                }
                c
            };
            let worst = simplex[3];
            let along = |t: f64| {
                let mut p = [0.0; 3];
                for i in 0..3 {
                    p[i] = centroid[i] + t * (worst.0[i] - centroid[i]);
                }
                clamp_theta(&mut p);
                p
            };
            let xr = along(-1.0);
            let fr = self.eval(&xr)?;
            if fr < simplex[0].1 {
                if self.exhausted() {
                    simplex[3] = (xr, fr);
                    break;
                }
                let xe = along(-2.0);
                let fe = self.eval(&xe)?;
                simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[2].1 {
                simplex[3] = (xr, fr);
                continue;
            }
            if self.exhausted() {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let p = along(-0.5);
                (p, self.eval(&p)?)
            } else {
                let p = along(0.5);
                (p, self.eval(&p)?)
            };
            if fc < worst.1.min(fr) {
                simplex[3] = (xc, fc);
                continue;
            }
            // shrink toward the best vertex
            let best = simplex[0].0;
            for k in 1..4 {
                if self.exhausted() {
                    break;
                }
                let mut p = [0.0; 3];
                for i in 0..3 {
                    p[i] = best[i] + 0.5 * (simplex[k].0[i] - best[i]);
                }
                let f = self.eval(&p)?;
                simplex[k] = (p, f);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(simplex[0].0)
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn tune_pid(
    plant: &TransferFunction,
    objective: &TuneObjective,
    initial: &PidGains,
    budget: usize,
    seed: u64,
) -> Result<TuneResult> {
    objective.validate()?;
    if !plant.is_strictly_proper() {
        return Err(Error::InvalidArgument("plant must be strictly proper".into()));
    }
    if budget < MIN_BUDGET {
        return Err(Error::param("budget", format!("must be >= {MIN_BUDGET}")));
    }
    initial.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut search = Search {
        plant,
        objective,
        n_filter: initial.derivative_filter_n,
        budget,
        used: 0,
        best: None,
        best_feasible: None,
    };

    // zero gains have no logarithm; start those from the lower bound
    let mut start = [0.0; 3];
    for (i, g) in [initial.kp, initial.ki, initial.kd].into_iter().enumerate() {
        start[i] = g.max(BOUNDS[i].0).ln();
    }
    clamp_theta(&mut start);

    let mut scale = 0.7;
    while !search.exhausted() {
        let end = search.descend(start, scale)?;
        // restart around the incumbent with a seeded jitter
        let anchor = search
            .best_feasible
            .as_ref()
            .or(search.best.as_ref())
            .map(|e| {
                let g = e.gains;
                [g.kp.ln(), g.ki.ln(), g.kd.ln()]
            })
            .unwrap_or(end);
        for (i, s) in start.iter_mut().enumerate() {
            *s = anchor[i] + rng.random_range(-1.0..1.0) * scale;
        }
        clamp_theta(&mut start);
        scale = (scale * 0.7).max(0.05);
    }

    let pick = search
        .best_feasible
        .or(search.best)
        .expect("budget >= 1 evaluates at least once");
    Ok(TuneResult {
        gains: pick.gains,
        metrics: pick.metrics,
        feasible: pick.feasible,
        evaluations: search.used,
        cost: pick.cost,
    })
}
