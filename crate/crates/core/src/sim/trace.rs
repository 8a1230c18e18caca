use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controllers::Saturation;
use crate::error::{Error, Result};

/// Sampled closed-loop response. Units: s, m, m, V.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

impl SimTrace {
    pub fn with_capacity(n: usize) -> Self {
        SimTrace {
            t: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, r: f64, y: f64, u: f64) {
        self.t.push(t);
        self.r.push(r);
        self.y.push(y);
        self.u.push(u);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Equal lengths and strictly increasing time.
    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if self.r.len() != n || self.y.len() != n || self.u.len() != n {
            return Err(Error::Format("trace columns differ in length".into()));
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("trace time is not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn within(&self, sat: &Saturation) -> bool {
        self.u.iter().all(|&u| sat.contains(u))
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    /// Sup-norm of the output difference; both traces must share the grid.
    pub fn sup_output_diff(&self, other: &SimTrace) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::InvalidArgument(format!(
                "traces have {} and {} samples",
                self.len(),
                other.len()
            )));
        }
        let mut worst = 0.0_f64;
        for i in 0..self.len() {
            if (self.t[i] - other.t[i]).abs() > 1e-9 * self.t[i].abs().max(1.0) {
                return Err(Error::InvalidArgument(format!("sample grids differ at index {i}")));
            }
            worst = worst.max((self.y[i] - other.y[i]).abs());
        }
        Ok(worst)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "r", "y", "u"])?;
        for i in 0..self.len() {
            out.write_record([
                sig9(self.t[i]),
                sig9(self.r[i]),
                sig9(self.y[i]),
                sig9(self.u[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "r", "y", "u"] {
            return Err(Error::Format(format!("unexpected trace header {headers:?}")));
        }
        let mut trace = SimTrace::default();
        for rec in rd.records() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(Error::Format("trace row must have 4 fields".into()));
            }
            trace.push(v[0], v[1], v[2], v[3]);
        }
        trace.validate()?;
        Ok(trace)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Same trace with every value rounded the way the CSV export writes it.
    pub fn as_exported(&self) -> SimTrace {
        let q = |v: &[f64]| v.iter().map(|&x| round_sig9(x)).collect();
        SimTrace {
            t: q(&self.t),
            r: q(&self.r),
            y: q(&self.y),
            u: q(&self.u),
        }
    }
}

/// Nine significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs();
    if (1e-4..1e9).contains(&mag) {
        let decimals = (8 - mag.log10().floor() as i32).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

pub(crate) fn round_sig9(x: f64) -> f64 {
    sig9(x).parse().expect("formatted float parses")
}
