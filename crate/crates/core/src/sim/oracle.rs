//! Reference integration for tests: classic RK4 at a fixed 0.1 ms step on a
//! separately assembled loop (both blocks in controllable form).

use nalgebra::{DMatrix, DVector, RowDVector};

use super::solver::Rk4;
use super::trace::SimTrace;
use crate::controllers::{saturate, Saturation};
use crate::error::{Error, Result};
use crate::lti::{tf_to_statespace, TransferFunction};

pub const ORACLE_STEP: f64 = 1e-4;

/// Output grid used by [`oracle_simulate`].
pub const ORACLE_SAMPLE_TIME: f64 = 0.01;

pub fn oracle_simulate(
    plant: &TransferFunction,
    controller: &TransferFunction,
    reference: f64,
    sat: &Saturation,
    duration: f64,
) -> Result<SimTrace> {
    oracle_simulate_sampled(plant, controller, reference, sat, duration, ORACLE_SAMPLE_TIME)
}

/// As [`oracle_simulate`] on a caller-chosen output grid, which must be a
/// whole multiple of the 0.1 ms step.
pub fn oracle_simulate_sampled(
    plant: &TransferFunction,
    controller: &TransferFunction,
    reference: f64,
    sat: &Saturation,
    duration: f64,
    sample_time: f64,
) -> Result<SimTrace> {
    let per_sample = (sample_time / ORACLE_STEP).round() as usize;
    if per_sample == 0 || ((per_sample as f64) * ORACLE_STEP - sample_time).abs() > 1e-12 {
        return Err(Error::SolverConfig(format!(
            "oracle sample time {sample_time} is not a multiple of {ORACLE_STEP}"
        )));
    }
    if !(duration >= 10.0 * sample_time * (1.0 - 1e-12)) || !duration.is_finite() {
        return Err(Error::InvalidArgument("duration shorter than ten samples".into()));
    }
    if !plant.is_strictly_proper() {
        return Err(Error::InvalidArgument("plant must be strictly proper".into()));
    }
    sat.validate()?;

    let gp = tf_to_statespace(plant)?;
    let (q, rem) = controller.split_polynomial();
    let extra = if controller.is_proper() { 0 } else { q.degree() };
    if extra >= plant.relative_degree() as usize {
        return Err(Error::Improper {
            num: controller.num().degree(),
            den: controller.den().degree(),
        });
    }
    let gc = tf_to_statespace(&rem)?;
    let np = gp.order();
    let nc = gc.order();

    // y^(j) = C Aʲ x while j is below the relative degree
    let mut deriv_rows: Vec<(f64, RowDVector<f64>)> = Vec::new();
    let mut row = gp.c.clone();
    for j in 1..=extra {
        row = &row * &gp.a;
        deriv_rows.push((q.coeff(j), row.clone()));
    }
    let d0 = q.coeff(0);

    let signals = |x: &[f64]| -> (f64, f64, f64) {
        let xp = DVector::from_column_slice(&x[..np]);
        let xc = DVector::from_column_slice(&x[np..]);
        let y = (&gp.c * &xp)[0];
        let e = reference - y;
        let mut u = d0 * e + if nc > 0 { (&gc.c * &xc)[0] } else { 0.0 };
        for (qj, r) in &deriv_rows {
            u -= qj * (r * &xp)[0];
        }
        (y, e, saturate(u, sat))
    };
    let a_blk = {
        let mut a = DMatrix::<f64>::zeros(np + nc, np + nc);
        a.view_mut((0, 0), (np, np)).copy_from(&gp.a);
        a.view_mut((np, np), (nc, nc)).copy_from(&gc.a);
        a
    };
    let f = (np + nc, |_t: f64, x: &[f64], dx: &mut [f64]| {
        let (_, e, u) = signals(x);
        let xv = DVector::from_column_slice(x);
        let ax = &a_blk * xv;
        for i in 0..np {
            dx[i] = ax[i] + gp.b[i] * u;
        }
        for i in 0..nc {
            dx[np + i] = ax[np + i] + gc.b[i] * e;
        }
    });

    let samples = (duration / sample_time).round() as usize;
    let mut x = vec![0.0; np + nc];
    let mut rk = Rk4::new(np + nc);
    let mut trace = SimTrace::with_capacity(samples + 1);
    let (y, _, u) = signals(&x);
    trace.push(0.0, reference, y, u);
    let mut step = 0usize;
    for k in 1..=samples {
        for _ in 0..per_sample {
            rk.step(&f, step as f64 * ORACLE_STEP, &mut x, ORACLE_STEP);
            step += 1;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(k as f64 * sample_time));
        }
        let (y, _, u) = signals(&x);
        if !(y.is_finite() && u.is_finite()) {
            return Err(Error::Diverged(k as f64 * sample_time));
        }
        trace.push(k as f64 * sample_time, reference, y, u);
    }
    Ok(trace)
}
