//! Unity-feedback loop `e = r − y`, `u = sat(C(e))`, `y = G(u)` integrated as
//! one augmented state vector.

use serde::{Deserialize, Serialize};

use super::solver::{adapt_step, Dynamics, Rk23, SolverConfig, SolverKind};
use super::trace::SimTrace;
use crate::controllers::{saturate, Saturation};
use crate::error::{Error, Result};
use crate::lti::{tf_to_statespace, StateSpace, TransferFunction};

/// Step-control bookkeeping of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    /// steps accepted at `h_min` with the error estimate above tolerance
    pub forced: usize,
    pub min_h: f64,
    pub max_h: f64,
    /// largest error estimate among steps accepted on tolerance
    pub max_accepted_error: f64,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub trace: SimTrace,
    pub stats: SolverStats,
}

/// Dense row-major realization pieces, sized once.
#[derive(Debug, Clone)]
pub(crate) struct Realization {
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
}

impl Realization {
    pub(crate) fn from_ss(ss: &StateSpace) -> Self {
        let n = ss.order();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = ss.a[(i, j)];
            }
        }
        Realization {
            n,
            a,
            b: ss.b.iter().copied().collect(),
            c: ss.c.iter().copied().collect(),
            d: ss.d,
        }
    }

    /// Rows `C·Aʲ` for `j = 0..=k`.
    pub(crate) fn output_derivative_rows(&self, k: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut rows = vec![self.c.clone()];
        for _ in 0..k {
            let prev = rows.last().expect("non-empty");
            let next: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| prev[i] * self.a[i * n + j]).sum())
                .collect();
            rows.push(next);
        }
        rows
    }
}

/// Plant in observable form, controller in controllable form. A controller
/// polynomial part of degree `m` is admitted when `m` is below the plant's
/// relative degree: its `s^j` terms then act on the measured output,
/// `dʲe/dt = −C Aʲ x` for a step reference, so no impulse reaches the plant.
pub(crate) struct LoopModel {
    plant: Realization,
    ctrl: Realization,
    /// `(q_j, C Aʲ)` for j ≥ 1
    derivative_terms: Vec<(f64, Vec<f64>)>,
    reference: f64,
    sat: Saturation,
    /// added to the measured output, held between samples
    measurement_offset: f64,
}

impl LoopModel {
    pub(crate) fn new(
        plant: &TransferFunction,
        controller: &TransferFunction,
        reference: f64,
        sat: Saturation,
    ) -> Result<Self> {
        if !plant.is_strictly_proper() {
            return Err(Error::InvalidArgument(
                "plant must be strictly proper".into(),
            ));
        }
        sat.validate()?;
        if !reference.is_finite() {
            return Err(Error::InvalidArgument("reference must be finite".into()));
        }
        let p = Realization::from_ss(&tf_to_statespace(plant)?.dual());
        let rel = plant.relative_degree() as usize;
        let (ctrl, derivative_terms) = controller_parts(&p, rel, controller)?;
        Ok(LoopModel {
            plant: p,
            ctrl,
            derivative_terms,
            reference,
            sat,
            measurement_offset: 0.0,
        })
    }

    pub(crate) fn set_reference(&mut self, r: f64) {
        self.reference = r;
    }

    pub(crate) fn set_measurement_offset(&mut self, n: f64) {
        self.measurement_offset = n;
    }

    pub(crate) fn measurement_offset(&self) -> f64 {
        self.measurement_offset
    }

    pub(crate) fn plant_order(&self) -> usize {
        self.plant.n
    }

    pub(crate) fn controller_order(&self) -> usize {
        self.ctrl.n
    }

    /// Swap the controller, keeping the plant realization.
    pub(crate) fn replace_controller(&mut self, rel_degree: usize, controller: &TransferFunction) -> Result<()> {
        let (ctrl, terms) = controller_parts(&self.plant, rel_degree, controller)?;
        self.ctrl = ctrl;
        self.derivative_terms = terms;
        Ok(())
    }

    pub(crate) fn dim(&self) -> usize {
        self.plant.n + self.ctrl.n
    }

    /// `(y, e, u)` at state `x`.
    #[inline]
    pub(crate) fn signals(&self, x: &[f64]) -> (f64, f64, f64) {
        let (xp, xc) = x.split_at(self.plant.n);
        let y: f64 = self.plant.c.iter().zip(xp).map(|(c, v)| c * v).sum();
        let e = self.reference - (y + self.measurement_offset);
        let mut u = self.ctrl.d * e;
        u += self.ctrl.c.iter().zip(xc).map(|(c, v)| c * v).sum::<f64>();
        for (qj, row) in &self.derivative_terms {
            u -= qj * row.iter().zip(xp).map(|(c, v)| c * v).sum::<f64>();
        }
        (y, e, saturate(u, &self.sat))
    }

    pub(crate) fn reference(&self) -> f64 {
        self.reference
    }
}

type DerivativeTerms = Vec<(f64, Vec<f64>)>;

fn controller_parts(
    plant: &Realization,
    rel_degree: usize,
    controller: &TransferFunction,
) -> Result<(Realization, DerivativeTerms)> {
    let (q, rem) = controller.split_polynomial();
    let extra = if controller.is_proper() { 0 } else { q.degree() };
    if extra >= rel_degree {
        return Err(Error::Improper {
            num: controller.num().degree(),
            den: controller.den().degree(),
        });
    }
    let mut c = Realization::from_ss(&tf_to_statespace(&rem)?);
    c.d = q.coeff(0);
    let rows = plant.output_derivative_rows(extra);
    let terms = (1..=extra).map(|j| (q.coeff(j), rows[j].clone())).collect();
    Ok((c, terms))
}

impl Dynamics for LoopModel {
    fn dim(&self) -> usize {
        LoopModel::dim(self)
    }

    fn deriv(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        let (_, e, u) = self.signals(x);
        let np = self.plant.n;
        let nc = self.ctrl.n;
        let (xp, xc) = x.split_at(np);
        let (dp, dc) = dx.split_at_mut(np);
        for i in 0..np {
            let row = &self.plant.a[i * np..(i + 1) * np];
            dp[i] = row.iter().zip(xp).map(|(a, v)| a * v).sum::<f64>() + self.plant.b[i] * u;
        }
        for i in 0..nc {
            let row = &self.ctrl.a[i * nc..(i + 1) * nc];
            dc[i] = row.iter().zip(xc).map(|(a, v)| a * v).sum::<f64>() + self.ctrl.b[i] * e;
        }
    }
}

fn check_horizon(solver: &SolverConfig, duration: f64) -> Result<usize> {
    solver.validate()?;
    if !(duration.is_finite() && duration >= 10.0 * solver.sample_time * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s is shorter than ten samples of {} s",
            solver.sample_time
        )));
    }
    Ok((duration / solver.sample_time).round() as usize)
}

pub fn simulate_closed_loop(
    plant: &TransferFunction,
    controller: &TransferFunction,
    reference: f64,
    sat: &Saturation,
    solver: &SolverConfig,
    duration: f64,
) -> Result<SimTrace> {
    simulate_with_stats(plant, controller, reference, sat, solver, duration).map(|s| s.trace)
}

pub fn simulate_with_stats(
    plant: &TransferFunction,
    controller: &TransferFunction,
    reference: f64,
    sat: &Saturation,
    solver: &SolverConfig,
    duration: f64,
) -> Result<Simulation> {
    let samples = check_horizon(solver, duration)?;
    let model = LoopModel::new(plant, controller, reference, *sat)?;
    match solver.kind {
        SolverKind::Euler => run_euler(&model, solver, samples),
        SolverKind::Rk23 => run_rk23(&model, solver, samples),
    }
}

/// The state can still be finite when `C·x` overflows.
fn record(trace: &mut SimTrace, model: &LoopModel, t: f64, x: &[f64]) -> Result<()> {
    let (y, _, u) = model.signals(x);
    if !(y.is_finite() && u.is_finite()) {
        return Err(Error::Diverged(t));
    }
    trace.push(t, model.reference(), y, u);
    Ok(())
}

fn run_euler(model: &LoopModel, cfg: &SolverConfig, samples: usize) -> Result<Simulation> {
    let n = model.dim();
    let h = cfg.h_max;
    let grid = |k: usize| k as f64 * cfg.sample_time;
    let mut trace = SimTrace::with_capacity(samples + 1);
    let mut stats = SolverStats {
        min_h: h,
        max_h: h,
        ..Default::default()
    };
    let mut x = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut xi = vec![0.0; n];
    record(&mut trace, model, 0.0, &x)?;
    let mut next = 1;
    let mut t = 0.0;
    let mut steps = 0usize;
    while next <= samples {
        model.deriv(t, &x, &mut dx);
        stats.rhs_evals += 1;
        let t1 = (steps + 1) as f64 * h;
        while next <= samples && grid(next) <= t1 * (1.0 + 1e-12) {
            let theta = (grid(next) - t) / h;
            for i in 0..n {
                xi[i] = x[i] + theta * h * dx[i];
            }
            record(&mut trace, model, grid(next), &xi)?;
            next += 1;
        }
        for i in 0..n {
            x[i] += h * dx[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(t1));
        }
        t = t1;
        steps += 1;
        stats.accepted += 1;
    }
    Ok(Simulation { trace, stats })
}

fn run_rk23(model: &LoopModel, cfg: &SolverConfig, samples: usize) -> Result<Simulation> {
    let n = model.dim();
    let grid = |k: usize| k as f64 * cfg.sample_time;
    let mut trace = SimTrace::with_capacity(samples + 1);
    let mut stats = SolverStats {
        min_h: f64::INFINITY,
        max_h: 0.0,
        ..Default::default()
    };
    let mut x = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let mut rk = Rk23::new(n);
    model.deriv(0.0, &x, &mut k1);
    stats.rhs_evals += 1;
    record(&mut trace, model, 0.0, &x)?;

    let mut next = 1;
    let mut t = 0.0;
    let mut h = cfg.h_min;
    while next <= samples {
        let err = rk.step(model, t, &x, h, &k1);
        stats.rhs_evals += 3;
        let within = err <= cfg.tolerance;
        if !within && h > cfg.h_min {
            stats.rejected += 1;
            h = adapt_step(h, err, cfg.tolerance, cfg.h_min, cfg.h_max);
            continue;
        }
        if within {
            stats.max_accepted_error = stats.max_accepted_error.max(err);
        } else {
            stats.forced += 1;
        }
        stats.accepted += 1;
        stats.min_h = stats.min_h.min(h);
        stats.max_h = stats.max_h.max(h);
        if rk.x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(t + h));
        }

        // cubic Hermite dense output on [t, t+h]
        let t1 = t + h;
        while next <= samples && grid(next) <= t1 + 1e-12 * t1.max(1.0) {
            let th = ((grid(next) - t) / h).clamp(0.0, 1.0);
            let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
            let h10 = th * (1.0 - th) * (1.0 - th);
            let h01 = th * th * (3.0 - 2.0 * th);
            let h11 = th * th * (th - 1.0);
            for i in 0..n {
                xi[i] = h00 * x[i] + h10 * h * k1[i] + h01 * rk.x_new[i] + h11 * h * rk.k4[i];
            }
            record(&mut trace, model, grid(next), &xi)?;
            next += 1;
        }

        x.copy_from_slice(&rk.x_new);
        k1.copy_from_slice(&rk.k4);
        t = t1;
        h = adapt_step(h, err, cfg.tolerance, cfg.h_min, cfg.h_max);
    }
    Ok(Simulation { trace, stats })
}
