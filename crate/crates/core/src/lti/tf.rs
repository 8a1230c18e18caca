use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::{ComplexRoot, Polynomial};
use crate::error::{Error, Result};

/// Real-rational continuous-time transfer function `num(s) / den(s)`.
///
/// No pole-zero cancellation is ever performed implicitly; see
/// [`TransferFunction::near_cancellations`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTf", into = "RawTf")]
pub struct TransferFunction {
    num: Polynomial,
    den: Polynomial,
}

#[derive(Serialize, Deserialize)]
struct RawTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<RawTf> for TransferFunction {
    type Error = Error;

    fn try_from(raw: RawTf) -> Result<Self> {
        if raw.num.is_empty() || raw.den.is_empty() {
            return Err(Error::Format(
                "transfer function coefficient arrays must be non-empty".into(),
            ));
        }
        TransferFunction::new(raw.num, raw.den)
    }
}

impl From<TransferFunction> for RawTf {
    fn from(tf: TransferFunction) -> Self {
        RawTf {
            num: tf.num.into(),
            den: tf.den.into(),
        }
    }
}

/// DC gain of a transfer function; integrating systems have an infinite one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DcGain {
    Finite(f64),
    Infinite,
}

impl DcGain {
    pub fn finite(self) -> Option<f64> {
        match self {
            DcGain::Finite(g) => Some(g),
            DcGain::Infinite => None,
        }
    }
}

/// A pole and zero closer than the cancellation tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NearCancellation {
    pub pole: ComplexRoot,
    pub zero: ComplexRoot,
    pub distance: f64,
}

impl TransferFunction {
    pub fn new(num: impl Into<Polynomial>, den: impl Into<Polynomial>) -> Result<Self> {
        let num = num.into();
        let den = den.into();
        if den.is_zero() {
            return Err(Error::Degenerate(
                "transfer function denominator is identically zero".into(),
            ));
        }
        Ok(TransferFunction { num, den })
    }

    pub fn gain(k: f64) -> Self {
        TransferFunction {
            num: Polynomial::constant(k),
            den: Polynomial::constant(1.0),
        }
    }

    pub fn identity() -> Self {
        TransferFunction::gain(1.0)
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() <= self.den.degree()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() < self.den.degree()
    }

    /// `deg den − deg num`; negative for improper systems.
    pub fn relative_degree(&self) -> isize {
        if self.num.is_zero() {
            return isize::MAX;
        }
        self.den.degree() as isize - self.num.degree() as isize
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval_complex(s) / self.den.eval_complex(s)
    }

    pub fn freq_response(&self, omega: f64) -> Complex64 {
        self.eval(Complex64::new(0.0, omega))
    }

    pub fn poles(&self) -> Result<Vec<ComplexRoot>> {
        if self.den.degree() == 0 {
            return Ok(Vec::new());
        }
        self.den.roots()
    }

    pub fn zeros(&self) -> Result<Vec<ComplexRoot>> {
        if self.num.is_zero() {
            return Err(Error::Degenerate("zeros of the zero transfer function".into()));
        }
        if self.num.degree() == 0 {
            return Ok(Vec::new());
        }
        self.num.roots()
    }

    /// Series connection `a · b`, without cancellation.
    pub fn series(&self, other: &TransferFunction) -> TransferFunction {
        TransferFunction {
            num: &self.num * &other.num,
            den: &self.den * &other.den,
        }
    }

    /// Parallel connection `a + b`.
    pub fn parallel(&self, other: &TransferFunction) -> TransferFunction {
        TransferFunction {
            num: &(&self.num * &other.den) + &(&other.num * &self.den),
            den: &self.den * &other.den,
        }
    }

    pub fn scale(&self, k: f64) -> TransferFunction {
        TransferFunction {
            num: self.num.scale(k),
            den: self.den.clone(),
        }
    }

    /// Closed loop `L / (1 + L)` for unity negative feedback.
    pub fn unity_feedback(&self) -> Result<TransferFunction> {
        let den = &self.den + &self.num;
        if den.is_zero() {
            return Err(Error::DegenerateFeedback);
        }
        Ok(TransferFunction {
            num: self.num.clone(),
            den,
        })
    }

    pub fn dc_gain(&self) -> Result<DcGain> {
        let n0 = self.num.coeff(0);
        let d0 = self.den.coeff(0);
        match (n0 == 0.0, d0 == 0.0) {
            (_, false) => Ok(DcGain::Finite(n0 / d0)),
            (false, true) => Ok(DcGain::Infinite),
            (true, true) => Err(Error::IndeterminateDcGain),
        }
    }

    /// True iff every pole has real part below `-1e-9`.
    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.poles()?.iter().all(|p| p.re < -1e-9))
    }

    /// Pole/zero pairs closer than `tol`. Reported, never removed.
    pub fn near_cancellations(&self, tol: f64) -> Result<Vec<NearCancellation>> {
        if self.num.is_zero() || self.num.degree() == 0 {
            return Ok(Vec::new());
        }
        let zeros = self.zeros()?;
        let poles = self.poles()?;
        let mut out = Vec::new();
        for p in &poles {
            for z in &zeros {
                let d = p.dist(z);
                if d < tol {
                    out.push(NearCancellation {
                        pole: *p,
                        zero: *z,
                        distance: d,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Split into a polynomial part and a strictly proper remainder:
    /// `num/den = q(s) + r(s)/den(s)`.
    pub fn split_polynomial(&self) -> (Polynomial, TransferFunction) {
        let (q, r) = self
            .num
            .div_rem(&self.den)
            .expect("denominator is nonzero by construction");
        (
            q,
            TransferFunction {
                num: r,
                den: self.den.clone(),
            },
        )
    }
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}
