//! Wall-clock loop runner and the device-side server loop.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::device::{advance_to, device_handle, DeviceParams, DeviceSim, Direction};
use super::frame::{cmd, encode, Frame, FrameDecoder};
use super::transport::{pipe_pair, PipeEnd, Transport};
use crate::controllers::{DiscreteController, Saturation};
use crate::error::{Error, Result};
use crate::sensor::{voltage_to_distance, SensorModel};
use crate::sim::SimTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopMode {
    /// device pushes one analog frame per period; commands are not acked
    Stream,
    /// READ_ANALOG request and acked SET_PWM every period
    Poll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// m, step above the position read at start
    pub reference: f64,
    /// s
    pub duration: f64,
    /// s
    pub period: f64,
    pub sat: Saturation,
    /// V at full duty
    pub supply_voltage: f64,
    pub mode: LoopMode,
    /// host-side copy of the sensor calibration
    pub sensor: SensorModel,
}

impl LoopConfig {
    pub fn new(reference: f64, duration: f64) -> Self {
        LoopConfig {
            reference,
            duration,
            period: 0.01,
            sat: Saturation::supply_12v(),
            supply_voltage: 12.0,
            mode: LoopMode::Stream,
            sensor: SensorModel::default_model(),
        }
    }

    /// Bytes each direction carries per period.
    pub fn bytes_per_period(&self) -> (usize, usize) {
        match self.mode {
            // host→device SET_PWM_QUIET; device→host analog frame
            LoopMode::Stream => (7, 7),
            // READ + SET_PWM out; analog reply + ack back
            LoopMode::Poll => (5 + 7, 7 + 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    /// s
    pub period: f64,
    pub iterations: usize,
    pub deadline_misses: usize,
    /// s
    pub max_jitter: f64,
    /// bytes on the busier direction each period
    pub link_bytes_per_period: usize,
    /// s of line time those bytes take, 0 when unthrottled
    pub link_time_per_period: f64,
    /// s, period minus link time; negative means the link cannot keep up
    pub link_margin: f64,
    pub decode_errors: usize,
    /// set when the run stopped early
    pub aborted: Option<String>,
}

/// Split a saturated voltage into duty byte and direction.
pub fn pwm_command(u: f64, supply: f64) -> (u8, Direction) {
    let duty = (u.abs() / supply * 255.0).round().clamp(0.0, 255.0) as u8;
    let dir = if u >= 0.0 { Direction::Push } else { Direction::Pull };
    (duty, dir)
}

struct Link<'a, T: Transport> {
    t: &'a mut T,
    dec: FrameDecoder,
    buf: Vec<u8>,
    seq: u8,
}

impl<T: Transport> Link<'_, T> {
    fn send(&mut self, cmd: u8, payload: &[u8]) -> Result<u8> {
        self.seq = self.seq.wrapping_add(1);
        let bytes = encode(&Frame::new(self.seq, cmd, payload.to_vec()))
            .map_err(|e| Error::Format(e.to_string()))?;
        self.t.send(&bytes)?;
        Ok(self.seq)
    }

    /// Next frame matching `pred`, or `None` at `deadline`.
    fn wait_for(&mut self, deadline: Instant, pred: impl Fn(&Frame) -> bool) -> Result<Option<Frame>> {
        loop {
            while let Some(f) = self.dec.next_frame() {
                if pred(&f) {
                    return Ok(Some(f));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            self.buf.clear();
            self.t.recv_timeout(&mut self.buf, deadline - now)?;
            self.dec.push(&self.buf);
        }
    }

    /// All frames already buffered or arriving within `d`.
    fn drain(&mut self, d: Duration) -> Result<Vec<Frame>> {
        self.buf.clear();
        self.t.recv_timeout(&mut self.buf, d)?;
        self.dec.push(&self.buf);
        let mut out = Vec::new();
        while let Some(f) = self.dec.next_frame() {
            out.push(f);
        }
        Ok(out)
    }
}

fn analog_volts(f: &Frame) -> Option<f64> {
    match f.payload[..] {
        [hi, lo] if f.cmd == cmd::READ_ANALOG => Some(u16::from_be_bytes([hi, lo]) as f64 / 100.0),
        _ => None,
    }
}

/// Mid-run changes a loop observer may hand back.
#[derive(Debug, Clone)]
pub enum LoopUpdate {
    /// bumpless when the orders match, see [`DiscreteController::retune`]
    Controller(DiscreteController),
    Reference(f64),
}

/// Hook into a running loop. Called on the loop thread, so keep it cheap.
pub trait LoopObserver {
    /// After each sample; return `false` to end the run.
    fn on_sample(&mut self, t: f64, r: f64, y: f64, u: f64) -> bool;

    fn poll_update(&mut self) -> Option<LoopUpdate> {
        None
    }
}

struct Silent;

impl LoopObserver for Silent {
    fn on_sample(&mut self, _: f64, _: f64, _: f64, _: f64) -> bool {
        true
    }
}

struct Stepper<'c> {
    cfg: &'c LoopConfig,
    controller: DiscreteController,
    reference: f64,
    origin: Option<f64>,
    stopped: bool,
}

impl Stepper<'_> {
    fn step(&mut self, v: f64, k: usize, trace: &mut SimTrace, obs: &mut dyn LoopObserver) -> Result<(u8, Direction)> {
        while let Some(up) = obs.poll_update() {
            match up {
                LoopUpdate::Controller(c) => {
                    if (c.sample_time() - self.cfg.period).abs() > 1e-9 {
                        return Err(Error::InvalidArgument("controller sample time differs from loop period".into()));
                    }
                    self.controller.retune(c);
                }
                LoopUpdate::Reference(r) if r.is_finite() => self.reference = r,
                LoopUpdate::Reference(r) => return Err(Error::param("reference", format!("must be finite, got {r}"))),
            }
        }
        let cfg = self.cfg;
        let d = voltage_to_distance(&cfg.sensor, v).distance;
        let d0 = *self.origin.get_or_insert(d);
        let y = d - d0;
        let u = self.controller.step(self.reference - y, &cfg.sat);
        let (duty, dir) = pwm_command(u, cfg.supply_voltage);
        let sign = if dir == Direction::Push { 1.0 } else { -1.0 };
        let applied = cfg.sat_clamp(duty as f64 / 255.0 * cfg.supply_voltage * sign);
        let t = k as f64 * cfg.period;
        trace.push(t, self.reference, y, applied);
        if !obs.on_sample(t, self.reference, y, applied) {
            self.stopped = true;
        }
        Ok((duty, dir))
    }
}

/// Close the loop against a device over `transport`: read the sensor,
/// invert the calibration, step the controller, command the PWM, once per
/// period. Timing quality is measured, not assumed.
pub fn run_realtime_loop<T: Transport>(
    transport: &mut T,
    controller: DiscreteController,
    cfg: &LoopConfig,
) -> Result<(SimTrace, LoopStats)> {
    run_realtime_loop_observed(transport, controller, cfg, &mut Silent)
}

/// [`run_realtime_loop`] with a per-sample observer that may stop the run
/// early or swap controller and reference between samples.
pub fn run_realtime_loop_observed<T: Transport>(
    transport: &mut T,
    mut controller: DiscreteController,
    cfg: &LoopConfig,
    observer: &mut dyn LoopObserver,
) -> Result<(SimTrace, LoopStats)> {
    if !(cfg.period > 0.0 && cfg.duration >= cfg.period) {
        return Err(Error::InvalidArgument("need 0 < period <= duration".into()));
    }
    if (controller.sample_time() - cfg.period).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "controller sample time {} differs from loop period {}",
            controller.sample_time(),
            cfg.period
        )));
    }
    cfg.sat.validate()?;
    let period_ms = (cfg.period * 1000.0).round();
    if !(1.0..=65535.0).contains(&period_ms) {
        return Err(Error::InvalidArgument("period must be 1..65535 ms".into()));
    }

    let (up, down) = cfg.bytes_per_period();
    let busiest = up.max(down);
    let link_time = transport
        .byte_time()
        .map_or(0.0, |bt| bt.as_secs_f64() * busiest as f64);
    let mut stats = LoopStats {
        period: cfg.period,
        iterations: 0,
        deadline_misses: 0,
        max_jitter: 0.0,
        link_bytes_per_period: busiest,
        link_time_per_period: link_time,
        link_margin: cfg.period - link_time,
        decode_errors: 0,
        aborted: None,
    };
    let n_iter = (cfg.duration / cfg.period).round() as usize;
    let period = Duration::from_secs_f64(cfg.period);
    let timeout = 2 * period;
    let mut trace = SimTrace::with_capacity(n_iter.min(1 << 16));
    let mut link = Link {
        t: transport,
        dec: FrameDecoder::new(),
        buf: Vec::with_capacity(64),
        seq: 0,
    };
    controller.reset();
    let mut stepper = Stepper {
        cfg,
        controller,
        reference: cfg.reference,
        origin: None,
        stopped: false,
    };

    match cfg.mode {
        LoopMode::Stream => {
            let s = link.send(cmd::STREAM_START, &(period_ms as u16).to_be_bytes())?;
            let deadline = Instant::now() + timeout + period;
            if link.wait_for(deadline, |f| f.cmd == cmd::STREAM_START && f.seq == s)?.is_none() {
                stats.aborted = Some("device did not acknowledge STREAM_START".into());
                return Ok((trace, stats));
            }
            let mut t0: Option<Instant> = None;
            let mut k = 0usize;
            while k < n_iter {
                let Some(first) = link.wait_for(Instant::now() + timeout, |f| analog_volts(f).is_some())? else {
                    stats.aborted = Some(format!(
                        "no sensor frame for {:.0} ms after iteration {k}",
                        timeout.as_secs_f64() * 1e3
                    ));
                    break;
                };
                // take the newest reading if a backlog built up
                let mut latest = first;
                let mut skipped = 0;
                while let Some(f) = link.dec.next_frame() {
                    if analog_volts(&f).is_some() {
                        latest = f;
                        skipped += 1;
                    }
                }
                let arrived = Instant::now();
                let t0v = *t0.get_or_insert(arrived);
                if skipped > 0 {
                    stats.deadline_misses += skipped;
                    k += skipped;
                    if k >= n_iter {
                        break;
                    }
                }
                let scheduled = t0v + period * k as u32;
                let lag = arrived.saturating_duration_since(scheduled).as_secs_f64();
                let lead = scheduled.saturating_duration_since(arrived).as_secs_f64();
                stats.max_jitter = stats.max_jitter.max(lag.max(lead));

                let v = analog_volts(&latest).expect("filtered on analog frames");
                let (duty, dir) = stepper.step(v, k, &mut trace, observer)?;
                link.send(cmd::SET_PWM_QUIET, &[duty, dir.to_byte()])?;
                if Instant::now() > scheduled + period {
                    stats.deadline_misses += 1;
                }
                stats.iterations += 1;
                k += 1;
                if stepper.stopped {
                    break;
                }
            }
            let _ = link.send(cmd::SET_PWM_QUIET, &[0, 0]);
            let _ = link.send(cmd::STREAM_STOP, &[]);
        }
        LoopMode::Poll => {
            let start = Instant::now();
            for k in 0..n_iter {
                let slot = start + period * k as u32;
                let now = Instant::now();
                if slot > now {
                    thread::sleep(slot - now);
                }
                let began = Instant::now();
                stats.max_jitter = stats.max_jitter.max((began - slot).as_secs_f64());
                let s = link.send(cmd::READ_ANALOG, &[])?;
                let Some(reply) = link.wait_for(began + timeout, |f| f.cmd == cmd::READ_ANALOG && f.seq == s)? else {
                    stats.aborted = Some(format!(
                        "no READ_ANALOG reply within {:.0} ms at iteration {k}",
                        timeout.as_secs_f64() * 1e3
                    ));
                    break;
                };
                let v = analog_volts(&reply).ok_or_else(|| Error::Format("short analog reply".into()))?;
                let (duty, dir) = stepper.step(v, k, &mut trace, observer)?;
                link.send(cmd::SET_PWM, &[duty, dir.to_byte()])?;
                if Instant::now() > slot + period {
                    stats.deadline_misses += 1;
                }
                stats.iterations += 1;
                if stepper.stopped {
                    break;
                }
            }
            let _ = link.send(cmd::SET_PWM, &[0, 0]);
            let _ = link.drain(Duration::from_millis(1));
        }
    }
    stats.decode_errors = link.dec.rejected;
    Ok((trace, stats))
}

impl LoopConfig {
    fn sat_clamp(&self, u: f64) -> f64 {
        u.clamp(self.sat.lo, self.sat.hi)
    }
}

/// Serve one connection until the peer leaves or `stop` is raised. The
/// device clock follows the wall clock from the call.
pub fn run_device<T: Transport>(dev: &mut DeviceSim, transport: &mut T, stop: &AtomicBool) -> Result<()> {
    let start = Instant::now();
    let t_offset = dev.state.clock;
    let mut dec = FrameDecoder::new();
    let mut buf = Vec::with_capacity(64);
    while !stop.load(Ordering::Relaxed) {
        buf.clear();
        match transport.recv_timeout(&mut buf, Duration::from_micros(250)) {
            Ok(_) => {}
            Err(_) => break,
        }
        advance_to(dev, t_offset + start.elapsed().as_secs_f64());
        dec.push(&buf);
        while let Some(f) = dec.next_frame() {
            if let Some(reply) = device_handle(dev, &f) {
                let bytes = encode(&reply).map_err(|e| Error::Format(e.to_string()))?;
                if transport.send(&bytes).is_err() {
                    return Ok(());
                }
            }
        }
        if let Some(frame) = dev.poll_stream() {
            let bytes = encode(&frame).map_err(|e| Error::Format(e.to_string()))?;
            if transport.send(&bytes).is_err() {
                return Ok(());
            }
        }
    }
    Ok(())
}

/// Device simulator running on its own thread behind an in-process line.
pub struct DeviceThread {
    stop: Arc<AtomicBool>,
    handle: Option<thread::JoinHandle<Result<DeviceSim>>>,
}

impl DeviceThread {
    /// Returns the host end of the line and the running device.
    pub fn spawn(params: DeviceParams, seed: u64, baud: Option<u32>) -> Result<(PipeEnd, DeviceThread)> {
        let mut dev = DeviceSim::new(params, seed)?;
        let (host, mut device_end) = pipe_pair(baud);
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            run_device(&mut dev, &mut device_end, &flag)?;
            Ok(dev)
        });
        Ok((
            host,
            DeviceThread {
                stop,
                handle: Some(handle),
            },
        ))
    }

    /// Stop the device and return its final state.
    pub fn finish(mut self) -> Result<DeviceSim> {
        self.stop.store(true, Ordering::Relaxed);
        self.handle
            .take()
            .expect("joined once")
            .join()
            .map_err(|_| Error::Io("device thread panicked".into()))?
    }
}

impl Drop for DeviceThread {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
