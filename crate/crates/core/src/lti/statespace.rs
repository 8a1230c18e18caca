use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use super::tf::TransferFunction;
use crate::error::{Error, Result};

/// Single-input single-output realization `ẋ = Ax + Bu, y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C (sI − A)⁻¹ B + D`
    pub fn eval(&self, s: Complex64) -> Result<Complex64> {
        let n = self.order();
        if n == 0 {
            return Ok(Complex64::new(self.d, 0.0));
        }
        let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let b = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let x = m
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("sI - A is singular at the evaluation point".into()))?;
        let cx = (0..n).fold(Complex64::new(0.0, 0.0), |acc, i| acc + x[i] * self.c[i]);
        Ok(cx + self.d)
    }

    pub fn freq_response(&self, omega: f64) -> Result<Complex64> {
        self.eval(Complex64::new(0.0, omega))
    }

    /// Dual realization `(Aᵀ, Cᵀ, Bᵀ, D)`; the transfer function is unchanged.
    pub fn dual(&self) -> StateSpace {
        StateSpace {
            a: self.a.transpose(),
            b: self.c.transpose(),
            c: self.b.transpose(),
            d: self.d,
        }
    }
}

/// Controllable canonical realization of a proper transfer function.
pub fn tf_to_statespace(g: &TransferFunction) -> Result<StateSpace> {
    if !g.is_proper() {
        return Err(Error::Improper {
            num: g.num().degree(),
            den: g.den().degree(),
        });
    }
    let n = g.den().degree();
    let lead = g.den().leading();
    let den: Vec<f64> = g.den().coeffs().iter().map(|c| c / lead).collect();
    let num: Vec<f64> = g.num().padded(n).iter().map(|c| c / lead).collect();

    let d = num[0];
    // strictly proper remainder num − d·den, highest power first, degree n−1
    let rem: Vec<f64> = (1..=n).map(|i| num[i] - d * den[i]).collect();

    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    if n > 0 {
        for j in 0..n {
            // last row: −a_n … −a_1 for states x1 … xn
            a[(n - 1, j)] = -den[n - j];
        }
    }
    let mut b = DVector::<f64>::zeros(n);
    if n > 0 {
        b[n - 1] = 1.0;
    }
    let c = RowDVector::<f64>::from_fn(n, |_, j| rem[n - 1 - j]);
    Ok(StateSpace { a, b, c, d })
}
