//! Lumped mass-spring-damper model of the magnet-tipped cantilever.
//!
//! The beam's first mode is represented by an equivalent mass
//! `M_eq = m + m_c/4` and tip stiffness `k_eq = 3EI/L³`; the electromagnet is a
//! linear voltage-to-force gain. Two plants are available: one derived from
//! geometry, and the literal reference plant `337.5 / (s² + 8.1s + 5994)`
//! that all acceptance checks run against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::TransferFunction;

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Default damping, a small assumed value.
pub const DEFAULT_B_EQ: f64 = 0.1;

/// Force per volt of the electromagnet driver, N/V.
pub const DEFAULT_ACTUATOR_GAIN: f64 = 4.167;

/// Cantilever geometry and material, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    /// m
    pub length: f64,
    /// m
    pub width: f64,
    /// m
    pub thickness: f64,
    /// Pa
    pub elastic_modulus: f64,
    /// kg
    pub beam_mass: f64,
    /// kg
    pub tip_magnet_mass: f64,
}

impl BeamGeometry {
    /// Stainless ruler with an N35 tip magnet.
    pub fn paper() -> Self {
        BeamGeometry {
            length: 0.150,
            width: 0.016,
            thickness: 0.0007,
            elastic_modulus: 195e9,
            beam_mass: 0.02,
            tip_magnet_mass: 0.0075,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("length", self.length),
            ("width", self.width),
            ("thickness", self.thickness),
            ("elastic_modulus", self.elastic_modulus),
            ("beam_mass", self.beam_mass),
            ("tip_magnet_mass", self.tip_magnet_mass),
        ];
        for (name, v) in fields {
            // the massless-beam idealization is allowed
            let ok = if name == "beam_mass" { v >= 0.0 } else { v > 0.0 };
            if !ok || !v.is_finite() {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Equivalent lumped parameters of the levitated tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParameters {
    /// kg
    pub m_eq: f64,
    /// N/m
    pub k_eq: f64,
    /// N·s/m
    pub b_eq: f64,
    /// N/V; force = actuator_gain · voltage
    pub actuator_gain: f64,
    /// m/s²
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

impl PlantParameters {
    /// The rounded values quoted alongside the reference plant.
    pub fn paper_reported() -> Self {
        PlantParameters {
            m_eq: 0.0123,
            k_eq: 74.0,
            b_eq: DEFAULT_B_EQ,
            actuator_gain: DEFAULT_ACTUATOR_GAIN,
            gravity: STANDARD_GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_eq > 0.0 && self.m_eq.is_finite()) {
            return Err(Error::param("m_eq", "must be > 0"));
        }
        if !(self.k_eq > 0.0 && self.k_eq.is_finite()) {
            return Err(Error::param("k_eq", "must be > 0"));
        }
        if !(self.b_eq >= 0.0 && self.b_eq.is_finite()) {
            return Err(Error::param("b_eq", "must be >= 0"));
        }
        if self.actuator_gain == 0.0 || !self.actuator_gain.is_finite() {
            return Err(Error::param("actuator_gain", "must be nonzero"));
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return Err(Error::param("gravity", "must be >= 0"));
        }
        Ok(())
    }

    /// Undamped natural frequency, rad/s.
    pub fn natural_frequency(&self) -> f64 {
        (self.k_eq / self.m_eq).sqrt()
    }
}

/// Static operating point around which the linear model is written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// N, gravity compensation force
    pub bias_force: f64,
    /// m, sensor offset
    pub sensor_offset: f64,
}

/// Second moment of area of a rectangular section, `W·t³/12`.
pub fn second_moment(geometry: &BeamGeometry) -> f64 {
    geometry.width * geometry.thickness.powi(3) / 12.0
}

pub fn equivalent_params(
    geometry: &BeamGeometry,
    b_eq: f64,
    actuator_gain: f64,
) -> Result<PlantParameters> {
    geometry.validate()?;
    let m_eq = geometry.tip_magnet_mass + 0.25 * geometry.beam_mass;
    let k_eq = 3.0 * geometry.elastic_modulus * second_moment(geometry) / geometry.length.powi(3);
    let p = PlantParameters {
        m_eq,
        k_eq,
        b_eq,
        actuator_gain,
        gravity: STANDARD_GRAVITY,
    };
    p.validate()?;
    Ok(p)
}

/// Force-to-displacement model `(1/M) / (s² + (b/M)s + k/M)`.
pub fn mechanical_tf(p: &PlantParameters) -> Result<TransferFunction> {
    p.validate()?;
    TransferFunction::new(
        vec![1.0 / p.m_eq],
        vec![1.0, p.b_eq / p.m_eq, p.k_eq / p.m_eq],
    )
}

/// Voltage-to-displacement model `(K/M) / (s² + (b/M)s + k/M)`.
pub fn plant_tf(p: &PlantParameters) -> Result<TransferFunction> {
    mechanical_tf(p).map(|g| g.scale(p.actuator_gain))
}

/// The literal reference plant `337.5 / (s² + 8.1s + 5994)`.
pub fn paper_plant() -> TransferFunction {
    TransferFunction::new(vec![337.5], vec![1.0, 8.1, 5994.0]).expect("static plant is valid")
}

pub fn gravity_bias(p: &PlantParameters) -> OperatingPoint {
    OperatingPoint {
        bias_force: p.m_eq * p.gravity,
        sensor_offset: 0.0,
    }
}
