//! Hall-sensor calibration: monotone voltage/distance map, ADC quantization,
//! and inverse readout.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalPoint {
    /// V
    pub voltage: f64,
    /// m
    pub distance: f64,
}

/// Measurement points, distance ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CalPoint>", into = "Vec<CalPoint>")]
pub struct CalibrationTable {
    points: Vec<CalPoint>,
}

impl TryFrom<Vec<CalPoint>> for CalibrationTable {
    type Error = Error;

    fn try_from(points: Vec<CalPoint>) -> Result<Self> {
        CalibrationTable::new(points)
    }
}

impl From<CalibrationTable> for Vec<CalPoint> {
    fn from(t: CalibrationTable) -> Self {
        t.points
    }
}

/// Constants of the stand-in law `V(d) = 2.5 + A/(d + d0)²`, chosen so that
/// V(5 mm) = 4.5 V and V(35 mm) = 2.6 V.
pub fn synthetic_law() -> (f64, f64) {
    let r = 20f64.sqrt();
    let d0 = (0.035 - r * 0.005) / (r - 1.0);
    let a = 2.0 * (0.005 + d0).powi(2);
    (a, d0)
}

pub fn synthetic_voltage(d: f64) -> f64 {
    let (a, d0) = synthetic_law();
    2.5 + a / (d + d0).powi(2)
}

impl CalibrationTable {
    pub fn new(points: Vec<CalPoint>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Calibration(format!(
                "need at least 4 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !p.voltage.is_finite() || !p.distance.is_finite())
        {
            return Err(Error::Calibration(format!("non-finite point {p:?}")));
        }
        for (i, w) in points.windows(2).enumerate() {
            if !(w[1].distance > w[0].distance) {
                return Err(Error::Calibration(format!(
                    "distances not strictly increasing between points {} ({} m) and {} ({} m)",
                    i,
                    w[0].distance,
                    i + 1,
                    w[1].distance
                )));
            }
        }
        let dir = (points[1].voltage - points[0].voltage).signum();
        for (i, w) in points.windows(2).enumerate() {
            let step = w[1].voltage - w[0].voltage;
            if step == 0.0 || step.signum() != dir || dir == 0.0 {
                return Err(Error::Calibration(format!(
                    "voltages not strictly monotone between points {} ({} V) and {} ({} V)",
                    i,
                    w[0].voltage,
                    i + 1,
                    w[1].voltage
                )));
            }
        }
        Ok(CalibrationTable { points })
    }

    pub fn points(&self) -> &[CalPoint] {
        &self.points
    }

    /// Eight points of the stand-in law over 5–35 mm, geometrically spaced so
    /// the steep near-field end gets more knots.
    pub fn synthetic_default() -> Self {
        let points = (0..8)
            .map(|i| {
                let d = if i == 7 {
                    0.035
                } else {
                    0.005 * 7f64.powf(i as f64 / 7.0)
                };
                CalPoint {
                    voltage: synthetic_voltage(d),
                    distance: d,
                }
            })
            .collect();
        CalibrationTable::new(points).expect("stand-in table is monotone")
    }

    /// Two columns `voltage_v,distance_m` with a header row.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != ["voltage_v", "distance_m"] {
            return Err(Error::Format(format!(
                "expected header voltage_v,distance_m, got {headers:?}"
            )));
        }
        let mut points = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                let f = rec.get(i).unwrap_or("").trim();
                f.parse()
                    .map_err(|_| Error::Format(format!("row {}: bad number {f:?}", line + 1)))
            };
            points.push(CalPoint {
                voltage: num(0)?,
                distance: num(1)?,
            });
        }
        CalibrationTable::new(points)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["voltage_v", "distance_m"])?;
        for p in &self.points {
            out.write_record([p.voltage.to_string(), p.distance.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shape-preserving piecewise cubic (Fritsch–Carlson slopes) of voltage
/// over distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

pub fn fit_calibration(table: &CalibrationTable) -> MonotoneCubic {
    let x: Vec<f64> = table.points.iter().map(|p| p.distance).collect();
    let y: Vec<f64> = table.points.iter().map(|p| p.voltage).collect();
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut m = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    m[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    MonotoneCubic {
        knots: x,
        values: y,
        slopes: m,
    }
}

/// One-sided three-point end slope, limited to keep the end segment monotone.
fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

impl MonotoneCubic {
    fn segment(&self, x: f64) -> usize {
        let n = self.knots.len();
        match self.knots.partition_point(|&k| k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value at `x`; outside the knot span the end cubic is extended.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        let h = self.knots[k + 1] - self.knots[k];
        let t = (x - self.knots[k]) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k], self.slopes[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let k = self.segment(x);
        let h = self.knots[k + 1] - self.knots[k];
        let t = (x - self.knots[k]) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k], self.slopes[k + 1]);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * y0 + (6.0 * t - 6.0 * t2) * y1) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (3.0 * t2 - 2.0 * t) * m1
    }

    pub fn span(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }
}

/// Distance readout; `extrapolated` marks a voltage outside the calibrated
/// span, in which case `distance` is the nearest span edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub distance: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SensorSpec", into = "SensorSpec")]
pub struct SensorModel {
    table: CalibrationTable,
    interp: MonotoneCubic,
    /// V
    pub adc_resolution: f64,
    /// mV/G, informational
    pub sensitivity: f64,
}

#[derive(Serialize, Deserialize)]
struct SensorSpec {
    table: CalibrationTable,
    adc_resolution: f64,
    sensitivity: f64,
}

impl TryFrom<SensorSpec> for SensorModel {
    type Error = Error;

    fn try_from(s: SensorSpec) -> Result<Self> {
        SensorModel::new(s.table, s.adc_resolution, s.sensitivity)
    }
}

impl From<SensorModel> for SensorSpec {
    fn from(m: SensorModel) -> Self {
        SensorSpec {
            table: m.table,
            adc_resolution: m.adc_resolution,
            sensitivity: m.sensitivity,
        }
    }
}

impl SensorModel {
    pub fn new(table: CalibrationTable, adc_resolution: f64, sensitivity: f64) -> Result<Self> {
        if !(adc_resolution > 0.0 && adc_resolution.is_finite()) {
            return Err(Error::param("adc_resolution", "must be > 0"));
        }
        let interp = fit_calibration(&table);
        Ok(SensorModel {
            table,
            interp,
            adc_resolution,
            sensitivity,
        })
    }

    /// Stand-in table, 0.02 V converter steps, 1.8 mV/G.
    pub fn default_model() -> Self {
        SensorModel::new(CalibrationTable::synthetic_default(), 0.02, 1.8)
            .expect("default resolution is valid")
    }

    pub fn table(&self) -> &CalibrationTable {
        &self.table
    }

    pub fn interpolant(&self) -> &MonotoneCubic {
        &self.interp
    }

    /// Forward map; distances outside the span read the edge voltage.
    pub fn distance_to_voltage(&self, d: f64) -> f64 {
        let (lo, hi) = self.interp.span();
        self.interp.eval(d.clamp(lo, hi))
    }

    pub fn voltage_span(&self) -> (f64, f64) {
        let (lo, hi) = self.interp.span();
        let (a, b) = (self.interp.eval(lo), self.interp.eval(hi));
        (a.min(b), a.max(b))
    }

    /// Distance change per converter step at `d`, m.
    pub fn distance_resolution(&self, d: f64) -> f64 {
        self.adc_resolution / self.interp.derivative(d).abs()
    }
}

pub fn quantize(model: &SensorModel, v: f64) -> f64 {
    (v / model.adc_resolution).round() * model.adc_resolution
}

pub fn voltage_to_distance(model: &SensorModel, v: f64) -> Readout {
    let f = &model.interp;
    let n = f.knots.len();
    let increasing = f.values[n - 1] > f.values[0];
    let (vlo, vhi) = model.voltage_span();
    if v <= vlo || v >= vhi || v.is_nan() {
        let at_low_voltage = v <= vlo;
        let edge = if at_low_voltage == increasing {
            f.knots[0]
        } else {
            f.knots[n - 1]
        };
        let exact = v == vlo || v == vhi;
        return Readout {
            distance: edge,
            extrapolated: !exact,
        };
    }
    // segment whose end voltages bracket v
    let k = (0..n - 1)
        .find(|&k| {
            let (a, b) = (f.values[k], f.values[k + 1]);
            (a.min(b)..=a.max(b)).contains(&v)
        })
        .expect("v lies inside the span");
    if v == f.values[k] {
        return Readout {
            distance: f.knots[k],
            extrapolated: false,
        };
    }
    if v == f.values[k + 1] {
        return Readout {
            distance: f.knots[k + 1],
            extrapolated: false,
        };
    }
    let (mut lo, mut hi) = (f.knots[k], f.knots[k + 1]);
    let below = |d: f64| (f.eval(d) < v) == increasing;
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Readout {
        distance: 0.5 * (lo + hi),
        extrapolated: false,
    }
}
