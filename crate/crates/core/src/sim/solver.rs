//! Explicit one-step integrators and the adaptive step-size rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side `ẋ = f(t, x)`, written into `dx`.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn deriv(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

impl<F> Dynamics for (usize, F)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn deriv(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        (self.1)(t, x, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    Rk23,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// s
    pub h_min: f64,
    /// s; also the fixed step of the Euler solver
    pub h_max: f64,
    /// absolute local-error tolerance (max-norm over the state); unused by
    /// Euler, where it is infinite and omitted from JSON
    #[serde(default = "unlimited", skip_serializing_if = "is_unlimited")]
    pub tolerance: f64,
    /// s, output grid
    pub sample_time: f64,
}

fn unlimited() -> f64 {
    f64::INFINITY
}

fn is_unlimited(t: &f64) -> bool {
    t.is_infinite()
}

impl SolverConfig {
    /// Variable-step RK23 in 10–100 ms, tolerance 0.1, 10 ms output grid.
    pub fn paper() -> Self {
        SolverConfig {
            kind: SolverKind::Rk23,
            h_min: 0.01,
            h_max: 0.1,
            tolerance: 0.1,
            sample_time: 0.01,
        }
    }

    pub fn rk23(h_min: f64, h_max: f64, tolerance: f64, sample_time: f64) -> Self {
        SolverConfig {
            kind: SolverKind::Rk23,
            h_min,
            h_max,
            tolerance,
            sample_time,
        }
    }

    /// Fixed-step forward Euler with step `h`.
    pub fn euler(h: f64, sample_time: f64) -> Self {
        SolverConfig {
            kind: SolverKind::Euler,
            h_min: h,
            h_max: h,
            tolerance: f64::INFINITY,
            sample_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0 && self.h_min <= self.h_max && self.h_max.is_finite()) {
            return Err(Error::SolverConfig(format!(
                "need 0 < h_min <= h_max (got {} .. {})",
                self.h_min, self.h_max
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::SolverConfig("tolerance must be > 0".into()));
        }
        if self.kind == SolverKind::Rk23 && !self.tolerance.is_finite() {
            return Err(Error::SolverConfig("rk23 needs a finite tolerance".into()));
        }
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::SolverConfig("sample_time must be > 0".into()));
        }
        if self.h_min > self.sample_time * (1.0 + 1e-12) {
            return Err(Error::SolverConfig(format!(
                "h_min {} exceeds the sample time {}",
                self.h_min, self.sample_time
            )));
        }
        Ok(())
    }
}

pub fn euler_step<D: Dynamics + ?Sized>(f: &D, t: f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    f.deriv(t, x, &mut dx);
    x.iter().zip(&dx).map(|(xi, di)| xi + h * di).collect()
}

/// One Bogacki–Shampine 3(2) step: the third-order solution and the
/// per-component difference to the embedded second-order solution.
pub fn rk23_step<D: Dynamics + ?Sized>(f: &D, t: f64, x: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut stepper = Rk23::new(x.len());
    let mut k1 = vec![0.0; x.len()];
    f.deriv(t, x, &mut k1);
    stepper.step(f, t, x, h, &k1);
    (stepper.x_new.clone(), stepper.err.clone())
}

pub fn rk4_step<D: Dynamics + ?Sized>(f: &D, t: f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut s = Rk4::new(x.len());
    let mut out = x.to_vec();
    s.step(f, t, &mut out, h);
    out
}

/// `clamp(0.9·h·(tol/err)^(1/3), h_min, h_max)`; zero error jumps to `h_max`.
pub fn adapt_step(h: f64, error_estimate: f64, tolerance: f64, h_min: f64, h_max: f64) -> f64 {
    if error_estimate == 0.0 {
        return h_max;
    }
    (0.9 * h * (tolerance / error_estimate).cbrt()).clamp(h_min, h_max)
}

/// Bogacki–Shampine tableau with reusable buffers. `k1` is supplied by the
/// caller so the last stage can be carried over (first same as last).
pub(crate) struct Rk23 {
    k2: Vec<f64>,
    k3: Vec<f64>,
    pub(crate) k4: Vec<f64>,
    tmp: Vec<f64>,
    pub(crate) x_new: Vec<f64>,
    pub(crate) err: Vec<f64>,
}

impl Rk23 {
    pub(crate) fn new(n: usize) -> Self {
        Rk23 {
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            x_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    /// Fills `x_new`, `k4 = f(t+h, x_new)` and `err`; returns the max-norm error.
    pub(crate) fn step<D: Dynamics + ?Sized>(
        &mut self,
        f: &D,
        t: f64,
        x: &[f64],
        h: f64,
        k1: &[f64],
    ) -> f64 {
        let n = x.len();
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f.deriv(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.75 * h * self.k2[i];
        }
        f.deriv(t + 0.75 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.x_new[i] =
                x[i] + h * (2.0 / 9.0 * k1[i] + 1.0 / 3.0 * self.k2[i] + 4.0 / 9.0 * self.k3[i]);
        }
        f.deriv(t + h, &self.x_new, &mut self.k4);
        let mut norm = 0.0_f64;
        for i in 0..n {
            let e = h
                * (-5.0 / 72.0 * k1[i] + 1.0 / 12.0 * self.k2[i] + 1.0 / 9.0 * self.k3[i]
                    - 1.0 / 8.0 * self.k4[i]);
            self.err[i] = e;
            norm = norm.max(e.abs());
        }
        if norm.is_nan() {
            f64::INFINITY
        } else {
            norm
        }
    }
}

pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub(crate) fn step<D: Dynamics + ?Sized>(&mut self, f: &D, t: f64, x: &mut [f64], h: f64) {
        let n = x.len();
        f.deriv(t, x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f.deriv(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f.deriv(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f.deriv(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> (usize, impl Fn(f64, &[f64], &mut [f64])) {
        (1, |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -x[0])
    }

    #[test]
    fn euler_examples() {
        assert!((euler_step(&decay(), 0.0, &[1.0], 0.1)[0] - 0.9).abs() < 1e-15);
        let one = (1, |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 1.0);
        assert!((euler_step(&one, 0.0, &[0.0], 0.01)[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn euler_grows_on_lightly_damped_oscillator() {
        // companion form of s² + 8.1s + 5994
        let osc = (2, |_t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = -5994.0 * x[0] - 8.1 * x[1];
        });
        let mut x = vec![1.0, 0.0];
        let energy = |x: &[f64]| (5994.0 * x[0] * x[0] + x[1] * x[1]).sqrt();
        let e0 = energy(&x);
        for _ in 0..100 {
            x = euler_step(&osc, 0.0, &x, 0.02);
        }
        assert!(energy(&x) > 1e10 * e0);
    }

    #[test]
    fn rk23_examples() {
        let (x, err) = rk23_step(&decay(), 0.0, &[1.0], 0.1);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-5);
        assert!(err[0].abs() > 0.0);

        let still = (1, |_t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 0.0);
        let (x, err) = rk23_step(&still, 0.0, &[3.0], 0.5);
        assert_eq!(x[0], 3.0);
        assert_eq!(err[0], 0.0);
    }

    #[test]
    fn rk23_integrates_quadratic_rate_exactly() {
        let f = (1, |t: f64, _x: &[f64], dx: &mut [f64]| dx[0] = 3.0 * t * t);
        let mut x = vec![0.0];
        let h = 0.1;
        for i in 0..10 {
            x = rk23_step(&f, i as f64 * h, &x, h).0;
        }
        assert!((x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adapt_step_examples() {
        assert!((adapt_step(0.05, 0.1, 0.1, 0.01, 0.1) - 0.045).abs() < 1e-15);
        assert_eq!(adapt_step(0.05, 1e9, 0.1, 0.01, 0.1), 0.01);
        assert!((adapt_step(0.01, 0.1 / 8.0, 0.1, 0.01, 0.1) - 0.018).abs() < 1e-15);
        assert_eq!(adapt_step(0.05, 0.0, 0.1, 0.01, 0.1), 0.1);
    }

    #[test]
    fn euler_order_check() {
        let f = decay();
        let global_err = |h: f64| {
            let n = (1.0 / h).round() as usize;
            let mut x = vec![1.0];
            for i in 0..n {
                x = euler_step(&f, i as f64 * h, &x, h);
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = global_err(0.01) / global_err(0.005);
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::paper().validate().is_ok());
        assert!(SolverConfig::rk23(0.02, 0.1, 0.1, 0.01).validate().is_err());
        assert!(SolverConfig::rk23(0.1, 0.01, 0.1, 0.1).validate().is_err());
        assert!(SolverConfig::rk23(0.001, 0.1, 0.0, 0.01).validate().is_err());
    }
}
