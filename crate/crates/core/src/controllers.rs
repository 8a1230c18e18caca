//! PID and lead-lag compensators, output saturation, and bilinear
//! discretization for the sampled control loop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Polynomial, TransferFunction};

pub const DEFAULT_DERIVATIVE_FILTER_N: f64 = 100.0;

/// Parallel PID gains. Units assume metres in, volts out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// The filtered derivative is `kd·s / ((kd/N)·s + 1)`.
    #[serde(default = "default_n", alias = "n")]
    pub derivative_filter_n: f64,
}

fn default_n() -> f64 {
    DEFAULT_DERIVATIVE_FILTER_N
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        PidGains {
            kp,
            ki,
            kd,
            derivative_filter_n: DEFAULT_DERIVATIVE_FILTER_N,
        }
    }

    /// Gains chosen by the reference tuner for the maglev plant.
    pub fn paper() -> Self {
        PidGains::new(6.55, 149.36, 0.022)
    }

    pub fn is_zero(&self) -> bool {
        self.kp == 0.0 && self.ki == 0.0 && self.kd == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.kd > 0.0 && !(self.derivative_filter_n > 0.0 && self.derivative_filter_n.is_finite())
        {
            return Err(Error::param(
                "derivative_filter_n",
                "must be > 0 when kd > 0",
            ));
        }
        Ok(())
    }
}

/// `kc · (s + 1/τ_lead)/(s + 1/(α·τ_lead)) · (s + 1/τ_lag)/(s + 1/(β·τ_lag))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadLagParams {
    pub kc: f64,
    pub tau_lead: f64,
    pub alpha: f64,
    pub tau_lag: f64,
    pub beta: f64,
}

impl LeadLagParams {
    pub fn paper() -> Self {
        LeadLagParams {
            kc: 11.0,
            tau_lead: 0.00556,
            alpha: 0.24,
            tau_lag: 1000.0,
            beta: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kc == 0.0 || !self.kc.is_finite() {
            return Err(Error::param("kc", "must be nonzero"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha", format!("must satisfy 0 < alpha < 1, got {}", self.alpha)));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("must be > 1, got {}", self.beta)));
        }
        if !(self.tau_lead > 0.0 && self.tau_lead.is_finite()) {
            return Err(Error::param("tau_lead", "must be > 0"));
        }
        if !(self.tau_lag > 0.0 && self.tau_lag.is_finite()) {
            return Err(Error::param("tau_lag", "must be > 0"));
        }
        Ok(())
    }
}

/// Actuator voltage limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub lo: f64,
    pub hi: f64,
}

impl Saturation {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(Error::param("saturation", format!("need lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Saturation { lo, hi })
    }

    /// ±12 V supply.
    pub fn supply_12v() -> Self {
        Saturation { lo: -12.0, hi: 12.0 }
    }

    pub fn unbounded() -> Self {
        Saturation {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() || self.hi.is_finite()
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }

    pub fn validate(&self) -> Result<()> {
        Saturation::new(self.lo, self.hi).map(|_| ())
    }
}

pub fn saturate(u: f64, s: &Saturation) -> f64 {
    u.clamp(s.lo, s.hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DesignWarning {
    /// Every gain is zero; the controller outputs nothing.
    ZeroController,
}

/// A designed compensator plus any warnings raised while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct Designed {
    pub tf: TransferFunction,
    pub warnings: Vec<DesignWarning>,
}

/// Ideal parallel PID, `(kd·s² + kp·s + ki) / s`, reduced to `kp` or
/// `kd·s + kp` when the integral gain is zero.
pub fn pid_tf(g: &PidGains) -> Result<Designed> {
    g.validate()?;
    let mut warnings = Vec::new();
    if g.is_zero() {
        warnings.push(DesignWarning::ZeroController);
    }
    let tf = if g.ki == 0.0 {
        TransferFunction::new(vec![g.kd, g.kp], vec![1.0])?
    } else {
        TransferFunction::new(vec![g.kd, g.kp, g.ki], vec![1.0, 0.0])?
    };
    Ok(Designed { tf, warnings })
}

/// PID with a first-order filtered derivative; proper by construction.
pub fn pid_tf_filtered(g: &PidGains) -> Result<TransferFunction> {
    g.validate()?;
    if g.kd == 0.0 {
        return pid_tf(g).map(|d| d.tf);
    }
    let filter = Polynomial::new(vec![g.kd / g.derivative_filter_n, 1.0]);
    if g.ki == 0.0 {
        // no integral term: kp + kd·s/(τs + 1) has no pole at the origin
        let num = &(&Polynomial::constant(g.kp) * &filter) + &Polynomial::new(vec![g.kd, 0.0]);
        return TransferFunction::new(num, filter);
    }
    let pi_num = Polynomial::new(vec![g.kp, g.ki]);
    let num = &(&pi_num * &filter) + &Polynomial::new(vec![g.kd, 0.0, 0.0]);
    let den = &Polynomial::s() * &filter;
    TransferFunction::new(num, den)
}

pub fn leadlag_tf(p: &LeadLagParams) -> Result<TransferFunction> {
    p.validate()?;
    let zl = 1.0 / p.tau_lead;
    let pl = 1.0 / (p.alpha * p.tau_lead);
    let zg = 1.0 / p.tau_lag;
    let pg = 1.0 / (p.beta * p.tau_lag);
    let num = (&Polynomial::new(vec![1.0, zl]) * &Polynomial::new(vec![1.0, zg])).scale(p.kc);
    let den = &Polynomial::new(vec![1.0, pl]) * &Polynomial::new(vec![1.0, pg]);
    TransferFunction::new(num, den)
}

/// The published compensator `11 (s+180)(s+0.001) / ((s+750)(s+0.0001))`.
pub fn paper_leadlag_tf() -> TransferFunction {
    let num = (&Polynomial::new(vec![1.0, 180.0]) * &Polynomial::new(vec![1.0, 0.001])).scale(11.0);
    let den = &Polynomial::new(vec![1.0, 750.0]) * &Polynomial::new(vec![1.0, 0.0001]);
    TransferFunction::new(num, den).expect("static compensator is valid")
}

/// Linear difference equation
/// `y[k] = Σ b[i]·e[k−i] − Σ_{i≥1} a[i]·y[k−i]` with `a[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteController {
    b: Vec<f64>,
    a: Vec<f64>,
    sample_time: f64,
    inputs: VecDeque<f64>,
    outputs: VecDeque<f64>,
}

impl DiscreteController {
    pub fn new(b: Vec<f64>, a: Vec<f64>, sample_time: f64) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::InvalidArgument("empty difference-equation coefficients".into()));
        }
        if a[0] != 1.0 {
            return Err(Error::InvalidArgument("a[0] must be 1".into()));
        }
        if b.len() > a.len() {
            return Err(Error::InvalidArgument(
                "feedforward order exceeds feedback order".into(),
            ));
        }
        if !(sample_time > 0.0) {
            return Err(Error::param("sample_time", "must be > 0"));
        }
        let order = a.len() - 1;
        Ok(DiscreteController {
            inputs: VecDeque::from(vec![0.0; b.len()]),
            outputs: VecDeque::from(vec![0.0; order]),
            b,
            a,
            sample_time,
        })
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn order(&self) -> usize {
        self.a.len() - 1
    }

    pub fn reset(&mut self) {
        self.inputs.iter_mut().for_each(|x| *x = 0.0);
        self.outputs.iter_mut().for_each(|x| *x = 0.0);
    }

    /// `H(z)` at `z = e^{jωT}` (or any complex `z`).
    pub fn eval_z(&self, z: num_complex::Complex64) -> num_complex::Complex64 {
        let zi = z.inv();
        let poly = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(num_complex::Complex64::new(0.0, 0.0), |acc, &x| acc * zi + x)
        };
        poly(&self.b) / poly(&self.a)
    }

    /// DC gain `H(1)`.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Advance one sample and return the saturated output.
    ///
    /// The recursion stores the applied (clamped) output, so an integrating
    /// controller stops accumulating while the actuator sits on a limit and
    /// comes off it as soon as the error reverses.
    pub fn step(&mut self, e: f64, sat: &Saturation) -> f64 {
        self.inputs.pop_back();
        self.inputs.push_front(e);
        let ff: f64 = self.b.iter().zip(&self.inputs).map(|(b, x)| b * x).sum();
        let fb: f64 = self.a[1..].iter().zip(&self.outputs).map(|(a, y)| a * y).sum();
        let u = saturate(ff - fb, sat);
        if !self.outputs.is_empty() {
            self.outputs.pop_back();
            self.outputs.push_front(u);
        }
        u
    }

    /// Swap coefficients in place. History is kept when the order matches.
    pub fn retune(&mut self, other: DiscreteController) {
        let same_shape = other.b.len() == self.b.len() && other.a.len() == self.a.len();
        let (inputs, outputs) = (self.inputs.clone(), self.outputs.clone());
        *self = other;
        if same_shape {
            self.inputs = inputs;
            self.outputs = outputs;
        }
    }
}

/// Map `s → (2/T)(z−1)/(z+1)` on a proper transfer function.
pub fn discretize_tustin(g: &TransferFunction, sample_time: f64) -> Result<DiscreteController> {
    if !g.is_proper() {
        return Err(Error::Improper {
            num: g.num().degree(),
            den: g.den().degree(),
        });
    }
    if !(sample_time > 0.0 && sample_time.is_finite()) {
        return Err(Error::param("sample_time", "must be > 0"));
    }
    let n = g.den().degree();
    let k = 2.0 / sample_time;
    let zp1 = Polynomial::new(vec![1.0, 1.0]);
    let zm1 = Polynomial::new(vec![1.0, -1.0]);

    let map = |c: &[f64]| -> Vec<f64> {
        // c is highest-first with degree n; coefficient of s^i is c[n-i]
        let mut acc = Polynomial::zero();
        for i in 0..=n {
            let ci = c[n - i];
            if ci == 0.0 {
                continue;
            }
            let mut term = Polynomial::constant(ci * k.powi(i as i32));
            for _ in 0..i {
                term = &term * &zm1;
            }
            for _ in 0..(n - i) {
                term = &term * &zp1;
            }
            acc = &acc + &term;
        }
        acc.padded(n)
    };
    let bz = map(&g.num().padded(n));
    let az = map(g.den().coeffs());
    let a0 = az[0];
    if a0 == 0.0 {
        return Err(Error::Degenerate(
            "bilinear map produced a zero leading coefficient (pole at s = 2/T)".into(),
        ));
    }
    let b: Vec<f64> = bz.iter().map(|x| x / a0).collect();
    let mut a: Vec<f64> = az.iter().map(|x| x / a0).collect();
    a[0] = 1.0;
    DiscreteController::new(b, a, sample_time)
}

pub fn controller_step(c: &mut DiscreteController, e: f64, sat: &Saturation) -> f64 {
    c.step(e, sat)
}
