//! Virtual levitation rig: beam tip dynamics, PWM driver and Hall sensor
//! behind the framed protocol.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::{cmd, err, Frame};
use crate::error::{Error, Result};
use crate::plant::PlantParameters;
use crate::sensor::{quantize, SensorModel};

pub const DEVICE_ID: &[u8; 8] = b"MAGLEV01";

/// Internal integration step, s.
pub const TICK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// force away from the sensor, positive voltage
    Push,
    Pull,
}

impl Direction {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Direction::Push),
            1 => Some(Direction::Pull),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Direction::Push => 0,
            Direction::Pull => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub plant: PlantParameters,
    /// m, sensor-to-tip distance of the unloaded beam
    pub rest_distance: f64,
    /// m, hard stops at 0 and here
    pub travel: f64,
    /// V at full duty
    pub supply_voltage: f64,
    pub sensor: SensorModel,
    /// V, standard deviation of additive sensor noise before quantization
    pub noise_std: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            plant: PlantParameters::paper_reported(),
            rest_distance: 0.020,
            travel: 0.035,
            supply_voltage: 12.0,
            sensor: SensorModel::default_model(),
            noise_std: 0.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if !(self.travel > 0.0) {
            return Err(Error::param("travel", "must be > 0"));
        }
        if !(0.0..=self.travel).contains(&self.rest_distance) {
            return Err(Error::param("rest_distance", "must lie within the travel"));
        }
        if !(self.supply_voltage > 0.0) {
            return Err(Error::param("supply_voltage", "must be > 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::param("noise_std", "must be >= 0"));
        }
        Ok(())
    }

    /// Sensor distance where spring and weight balance with the coil off.
    pub fn equilibrium_distance(&self) -> f64 {
        self.static_distance(0.0)
    }

    /// Static balance `k·y = K·V − M·g`, clamped to the stops.
    pub fn static_distance(&self, voltage: f64) -> f64 {
        let p = &self.plant;
        let y = (p.actuator_gain * voltage - p.m_eq * p.gravity) / p.k_eq;
        (self.rest_distance + y).clamp(0.0, self.travel)
    }

    /// Voltage applied for a duty byte and direction.
    pub fn pwm_voltage(&self, duty: u8, dir: Direction) -> f64 {
        let v = duty as f64 / 255.0 * self.supply_voltage;
        match dir {
            Direction::Push => v,
            Direction::Pull => -v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// m from the sensor face
    pub position: f64,
    /// m/s
    pub velocity: f64,
    pub pwm_duty: u8,
    pub pwm_direction: Direction,
    /// s
    pub clock: f64,
    /// ms between unsolicited analog frames, 0 when off
    pub stream_period_ms: u16,
}

#[derive(Debug, Clone)]
pub struct DeviceSim {
    pub params: DeviceParams,
    pub state: DeviceState,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    next_stream: f64,
    stream_seq: u8,
}

impl DeviceSim {
    /// At rest on the gravity equilibrium, coil off.
    pub fn new(params: DeviceParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let noise = if params.noise_std > 0.0 {
            Some(Normal::new(0.0, params.noise_std).map_err(|e| Error::param("noise_std", e.to_string()))?)
        } else {
            None
        };
        let state = DeviceState {
            position: params.equilibrium_distance(),
            velocity: 0.0,
            pwm_duty: 0,
            pwm_direction: Direction::Push,
            clock: 0.0,
            stream_period_ms: 0,
        };
        Ok(DeviceSim {
            params,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            next_stream: 0.0,
            stream_seq: 0,
        })
    }

    pub fn applied_voltage(&self) -> f64 {
        self.params
            .pwm_voltage(self.state.pwm_duty, self.state.pwm_direction)
    }

    /// `½Mv² + ½k·y² + M·g·y` with `y` measured from the unloaded position.
    pub fn mechanical_energy(&self) -> f64 {
        let p = &self.params.plant;
        let y = self.state.position - self.params.rest_distance;
        0.5 * p.m_eq * self.state.velocity.powi(2) + 0.5 * p.k_eq * y * y + p.m_eq * p.gravity * y
    }

    /// Sensor voltage after noise and quantization.
    pub fn read_voltage(&mut self) -> f64 {
        let mut v = self.params.sensor.distance_to_voltage(self.state.position);
        if let Some(n) = &self.noise {
            v += n.sample(&mut self.rng);
        }
        quantize(&self.params.sensor, v)
    }

    fn analog_payload(&mut self) -> [u8; 2] {
        let centi = (self.read_voltage() * 100.0).round().clamp(0.0, 65535.0) as u16;
        centi.to_be_bytes()
    }

    /// Unsolicited analog frame when streaming is on and due.
    pub fn poll_stream(&mut self) -> Option<Frame> {
        if self.state.stream_period_ms == 0 || self.state.clock + 1e-12 < self.next_stream {
            return None;
        }
        self.next_stream += self.state.stream_period_ms as f64 / 1000.0;
        self.stream_seq = self.stream_seq.wrapping_add(1);
        let payload = self.analog_payload();
        Some(Frame::new(self.stream_seq, cmd::READ_ANALOG, payload))
    }
}

fn error_reply(f: &Frame, code: u8) -> Frame {
    Frame::new(f.seq, f.cmd | cmd::ERROR_FLAG, [code])
}

/// Apply one command; quiet commands return no reply.
pub fn device_handle(dev: &mut DeviceSim, f: &Frame) -> Option<Frame> {
    let bad = || Some(error_reply(f, err::BAD_PAYLOAD));
    match f.cmd {
        cmd::GET_DEVICE_ID => {
            if !f.payload.is_empty() {
                return bad();
            }
            Some(Frame::new(f.seq, f.cmd, DEVICE_ID.to_vec()))
        }
        cmd::READ_ANALOG => {
            if !f.payload.is_empty() {
                return bad();
            }
            let p = dev.analog_payload();
            Some(Frame::new(f.seq, f.cmd, p))
        }
        cmd::SET_PWM | cmd::SET_PWM_QUIET => {
            let [duty, dir] = f.payload[..] else {
                return bad();
            };
            let Some(dir) = Direction::from_byte(dir) else {
                return bad();
            };
            dev.state.pwm_duty = duty;
            dev.state.pwm_direction = dir;
            (f.cmd == cmd::SET_PWM).then(|| Frame::new(f.seq, f.cmd, []))
        }
        cmd::STREAM_START => {
            let [hi, lo] = f.payload[..] else {
                return bad();
            };
            let period = u16::from_be_bytes([hi, lo]);
            if period == 0 {
                return bad();
            }
            dev.state.stream_period_ms = period;
            dev.next_stream = dev.state.clock + period as f64 / 1000.0;
            Some(Frame::new(f.seq, f.cmd, []))
        }
        cmd::STREAM_STOP => {
            if !f.payload.is_empty() {
                return bad();
            }
            dev.state.stream_period_ms = 0;
            Some(Frame::new(f.seq, f.cmd, []))
        }
        _ => Some(error_reply(f, err::UNKNOWN_COMMAND)),
    }
}

/// Advance the tip by `dt ≤ 1 ms` with one RK4 step of
/// `M·ÿ + b·ẏ + k·y = K·V − M·g`, then enforce the stops.
pub fn device_tick(dev: &mut DeviceSim, dt: f64) {
    debug_assert!(dt > 0.0 && dt <= TICK + 1e-15);
    let p = dev.params.plant;
    let rest = dev.params.rest_distance;
    let force = p.actuator_gain * dev.applied_voltage() - p.m_eq * p.gravity;
    let f = |y: f64, v: f64| (v, (force - p.b_eq * v - p.k_eq * y) / p.m_eq);
    let y0 = dev.state.position - rest;
    let v0 = dev.state.velocity;
    let (a1, b1) = f(y0, v0);
    let (a2, b2) = f(y0 + 0.5 * dt * a1, v0 + 0.5 * dt * b1);
    let (a3, b3) = f(y0 + 0.5 * dt * a2, v0 + 0.5 * dt * b2);
    let (a4, b4) = f(y0 + dt * a3, v0 + dt * b3);
    let y = y0 + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    let v = v0 + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    let d = rest + y;
    if d <= 0.0 || d >= dev.params.travel {
        dev.state.position = d.clamp(0.0, dev.params.travel);
        dev.state.velocity = 0.0;
    } else {
        dev.state.position = d;
        dev.state.velocity = v;
    }
    dev.state.clock += dt;
}

/// Advance to `t` in whole ticks.
pub fn advance_to(dev: &mut DeviceSim, t: f64) {
    while dev.state.clock + TICK <= t + 1e-12 {
        device_tick(dev, TICK);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hil::frame::{decode_frame, encode};

    fn sim() -> DeviceSim {
        DeviceSim::new(DeviceParams::default(), 0).unwrap()
    }

    #[test]
    fn equilibrium_sag() {
        let p = DeviceParams::default();
        let sag = p.plant.m_eq * p.plant.gravity / p.plant.k_eq;
        assert!((p.equilibrium_distance() - (0.020 - sag)).abs() < 1e-15);
        assert!((p.equilibrium_distance() - 0.018_37).abs() < 1e-5);
    }

    #[test]
    fn identity_and_unknown() {
        let mut d = sim();
        let r = device_handle(&mut d, &Frame::new(1, cmd::GET_DEVICE_ID, [])).unwrap();
        assert_eq!(r.payload, b"MAGLEV01");
        let r = device_handle(&mut d, &Frame::new(9, 0x7F, [])).unwrap();
        assert_eq!(r.cmd, 0xFF);
        assert_eq!(r.payload, [err::UNKNOWN_COMMAND]);
        let r = device_handle(&mut d, &Frame::new(9, cmd::SET_PWM, [1])).unwrap();
        assert_eq!((r.cmd, r.payload.as_slice()), (0xA0, &[err::BAD_PAYLOAD][..]));
        // every reply fits a frame
        assert!(encode(&r).is_ok());
    }

    #[test]
    fn read_at_rest() {
        let mut d = sim();
        let r = device_handle(&mut d, &Frame::new(2, cmd::READ_ANALOG, [])).unwrap();
        let centi = u16::from_be_bytes([r.payload[0], r.payload[1]]);
        let s = &d.params.sensor;
        let expected = quantize(s, s.distance_to_voltage(d.params.equilibrium_distance()));
        assert_eq!(centi as f64 / 100.0, (expected * 100.0).round() / 100.0);
    }

    #[test]
    fn full_push() {
        let mut d = sim();
        let ack = device_handle(&mut d, &Frame::new(3, cmd::SET_PWM, [255, 0])).unwrap();
        assert!(ack.payload.is_empty() && ack.cmd == cmd::SET_PWM);
        assert_eq!(d.applied_voltage(), 12.0);
        // 50 N against a 74 N/m spring: pinned on the far stop
        for _ in 0..2000 {
            device_tick(&mut d, TICK);
        }
        assert_eq!(d.state.position, 0.035);
    }

    #[test]
    fn rest_is_fixed_point() {
        let mut d = sim();
        let x0 = d.state.position;
        for _ in 0..1000 {
            device_tick(&mut d, TICK);
        }
        assert!((d.state.position - x0).abs() < 1e-9);
        assert!(d.state.velocity.abs() < 1e-9);
    }

    #[test]
    fn constant_voltage_reaches_static_balance() {
        let mut d = sim();
        device_handle(&mut d, &Frame::new(1, cmd::SET_PWM_QUIET, [3, 0]));
        let target = d.params.static_distance(d.applied_voltage());
        // decay rate b/2M ≈ 4 1/s
        for _ in 0..4000 {
            device_tick(&mut d, TICK);
        }
        assert!((d.state.position - target).abs() < 1e-4);
    }

    #[test]
    fn stream_cadence() {
        let mut d = sim();
        let start = decode_frame(&encode(&Frame::new(4, cmd::STREAM_START, [0, 10])).unwrap()).unwrap();
        device_handle(&mut d, &start).unwrap();
        let mut frames = 0;
        for _ in 0..1000 {
            device_tick(&mut d, TICK);
            if d.poll_stream().is_some() {
                frames += 1;
            }
        }
        assert_eq!(frames, 100);
    }
}
