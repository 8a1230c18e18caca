use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A root of a real polynomial, in the Laplace plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexRoot {
    pub re: f64,
    pub im: f64,
}

impl ComplexRoot {
    pub fn new(re: f64, im: f64) -> Self {
        ComplexRoot { re, im }
    }

    pub fn real(re: f64) -> Self {
        ComplexRoot { re, im: 0.0 }
    }

    pub fn conj(self) -> Self {
        ComplexRoot::new(self.re, -self.im)
    }

    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }

    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn dist(&self, other: &ComplexRoot) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }
}

impl From<Complex64> for ComplexRoot {
    fn from(c: Complex64) -> Self {
        ComplexRoot::new(c.re, c.im)
    }
}

impl From<ComplexRoot> for Complex64 {
    fn from(r: ComplexRoot) -> Self {
        Complex64::new(r.re, r.im)
    }
}

impl fmt::Display for ComplexRoot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im == 0.0 {
            write!(f, "{}", self.re)
        } else if self.im > 0.0 {
            write!(f, "{}+{}j", self.re, self.im)
        } else {
            write!(f, "{}-{}j", self.re, -self.im)
        }
    }
}

/// Real polynomial with coefficients stored highest degree first.
///
/// Leading zeros are stripped on construction; the zero polynomial is `[0.0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for Polynomial {
    fn from(v: Vec<f64>) -> Self {
        Polynomial::new(v)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Polynomial {
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut coeffs: Vec<f64> = coeffs.into();
        let first = coeffs.iter().position(|&c| c != 0.0);
        match first {
            Some(i) => {
                coeffs.drain(..i);
            }
            None => coeffs = vec![0.0],
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// `s`
    pub fn s() -> Self {
        Polynomial::new(vec![1.0, 0.0])
    }

    /// Monic polynomial with the given real roots.
    pub fn from_real_roots(roots: &[f64]) -> Self {
        roots.iter().fold(Polynomial::constant(1.0), |acc, &r| {
            &acc * &Polynomial::new(vec![1.0, -r])
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[0]
    }

    /// Coefficient of `s^power` (zero when out of range).
    pub fn coeff(&self, power: usize) -> f64 {
        let n = self.coeffs.len();
        if power >= n {
            0.0
        } else {
            self.coeffs[n - 1 - power]
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let n = self.degree();
        if n == 0 {
            return Polynomial::zero();
        }
        let coeffs = self.coeffs[..n]
            .iter()
            .enumerate()
            .map(|(i, &c)| c * (n - i) as f64)
            .collect::<Vec<_>>();
        Polynomial::new(coeffs)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * k).collect::<Vec<_>>())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// Coefficients padded with leading zeros to `degree + 1` entries.
    pub fn padded(&self, degree: usize) -> Vec<f64> {
        let n = self.coeffs.len();
        assert!(degree + 1 >= n, "cannot pad to a lower degree");
        let mut out = vec![0.0; degree + 1 - n];
        out.extend_from_slice(&self.coeffs);
        out
    }

    /// Polynomial long division: returns `(quotient, remainder)`.
    pub fn div_rem(&self, divisor: &Polynomial) -> Result<(Polynomial, Polynomial)> {
        if divisor.is_zero() {
            return Err(Error::Degenerate("division by the zero polynomial".into()));
        }
        if self.degree() < divisor.degree() || self.is_zero() {
            return Ok((Polynomial::zero(), self.clone()));
        }
        let mut rem = self.coeffs.clone();
        let dn = divisor.coeffs.len();
        let qn = rem.len() - dn + 1;
        let mut q = vec![0.0; qn];
        for i in 0..qn {
            let c = rem[i] / divisor.coeffs[0];
            q[i] = c;
            for (j, &d) in divisor.coeffs.iter().enumerate() {
                rem[i + j] -= c * d;
            }
        }
        let r = rem[qn..].to_vec();
        Ok((Polynomial::new(q), Polynomial::new(r)))
    }

    /// All complex roots, conjugate pairs made exactly symmetric.
    ///
    /// Eigenvalues of the companion matrix, each refined by a few Newton
    /// iterations on the original coefficients when that lowers the residual.
    pub fn roots(&self) -> Result<Vec<ComplexRoot>> {
        if self.is_zero() {
            return Err(Error::Degenerate("roots of the zero polynomial".into()));
        }
        let n = self.degree();
        if n == 0 {
            return Err(Error::Degenerate(
                "roots of a nonzero constant polynomial".into(),
            ));
        }
        let lead = self.leading();
        let monic: Vec<f64> = self.coeffs.iter().map(|c| c / lead).collect();

        // zeros at the origin are split off exactly
        let trailing = monic.iter().rev().take_while(|&&c| c == 0.0).count();
        let core = &monic[..monic.len() - trailing];
        let m = core.len() - 1;

        let mut raw: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); trailing];
        if m == 1 {
            raw.push(Complex64::new(-core[1], 0.0));
        } else if m >= 2 {
            let mut companion = DMatrix::<f64>::zeros(m, m);
            for j in 0..m {
                companion[(0, j)] = -core[j + 1];
            }
            for i in 1..m {
                companion[(i, i - 1)] = 1.0;
            }
            raw.extend(companion.complex_eigenvalues().iter().copied());
        }

        let polished: Vec<Complex64> = raw.into_iter().map(|z| self.polish(z)).collect();
        Ok(pair_conjugates(polished))
    }

    fn polish(&self, z0: Complex64) -> Complex64 {
        let dp = self.derivative();
        let mut z = z0;
        let mut best = z0;
        let mut best_res = self.eval_complex(z0).norm();
        for _ in 0..8 {
            let d = dp.eval_complex(z);
            if d.norm() == 0.0 {
                break;
            }
            z -= self.eval_complex(z) / d;
            if !z.re.is_finite() || !z.im.is_finite() {
                break;
            }
            let res = self.eval_complex(z).norm();
            if res < best_res {
                best_res = res;
                best = z;
            }
            if res == 0.0 {
                break;
            }
        }
        best
    }
}

/// Snap near-real roots onto the axis and make complex pairs exact conjugates.
fn pair_conjugates(mut roots: Vec<Complex64>) -> Vec<ComplexRoot> {
    let scale = |z: &Complex64| 1e-9 * z.norm().max(1.0);
    for z in roots.iter_mut() {
        if z.im.abs() <= scale(z) {
            z.im = 0.0;
        }
    }
    let mut out: Vec<ComplexRoot> = roots
        .iter()
        .filter(|z| z.im == 0.0)
        .map(|z| ComplexRoot::real(z.re))
        .collect();

    let mut upper: Vec<Complex64> = roots.iter().copied().filter(|z| z.im > 0.0).collect();
    let mut lower: Vec<Complex64> = roots.iter().copied().filter(|z| z.im < 0.0).collect();
    upper.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    for u in upper {
        let partner = lower
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (*a - u.conj()).norm().total_cmp(&(*b - u.conj()).norm()))
            .map(|(i, _)| i);
        match partner {
            Some(i) => {
                let l = lower.swap_remove(i);
                let re = 0.5 * (u.re + l.re);
                let im = 0.5 * (u.im - l.im);
                out.push(ComplexRoot::new(re, im));
                out.push(ComplexRoot::new(re, -im));
            }
            None => out.push(u.into()),
        }
    }
    out.extend(lower.into_iter().map(ComplexRoot::from));
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(b.im.total_cmp(&a.im)));
    out
}

impl Add for &Polynomial {
    type Output = Polynomial;

    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.degree().max(rhs.degree());
        let a = self.padded(n);
        let b = rhs.padded(n);
        Polynomial::new(a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<_>>())
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;

    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;

    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;

    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.degree();
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate() {
            let p = n - i;
            if c == 0.0 && !(n == 0) {
                continue;
            }
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let a = c.abs();
            match p {
                0 => write!(f, "{a}")?,
                1 if a == 1.0 => write!(f, "s")?,
                1 => write!(f, "{a}s")?,
                _ if a == 1.0 => write!(f, "s^{p}")?,
                _ => write!(f, "{a}s^{p}")?,
            }
        }
        Ok(())
    }
}
