//! Live tuning sessions over a WebSocket.
//!
//! Client messages (`type` tag): `start`, `set_controller`, `set_reference`,
//! `stop`. The server answers with `hello`, `started`, `ack`, `sample`,
//! `metrics`, `stopped` and `error`. Samples are forwarded at most every
//! 20 ms; the run store gets every sample.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc as std_mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket};
use levlab::controllers::{discretize_tustin, Saturation};
use levlab::experiment::{metrics_or_note, ControllerSpec, ExperimentConfig, RunKind};
use levlab::hil::{
    run_realtime_loop_observed, DeviceParams, DeviceThread, LoopConfig, LoopMode, LoopObserver, LoopStats,
    LoopUpdate, TcpTransport, DEFAULT_BAUD,
};
use levlab::lti::TransferFunction;
use levlab::sim::{LiveSample, LiveSim, SimTrace, StepMetrics};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{self, error::TryRecvError, UnboundedReceiver, UnboundedSender};
use tokio::time::MissedTickBehavior;

use crate::server::{parse_body, AppState, ErrorBody};

/// Minimum spacing of forwarded samples, i.e. at most 50 per second.
pub const SAMPLE_SPACING: Duration = Duration::from_millis(20);
pub const METRICS_PERIOD: Duration = Duration::from_millis(500);
/// s, ceiling on an open-ended session
pub const MAX_SESSION_DURATION: f64 = 3600.0;
const MAX_SPEED: f64 = 100.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sim,
    Hil,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HilOptions {
    /// device address; an in-process device when absent
    pub connect: Option<String>,
    /// 0 disables line throttling
    pub baud: Option<u32>,
    pub loop_mode: Option<LoopMode>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Start {
        #[serde(default)]
        mode: Mode,
        /// replaces the session config when present
        #[serde(default)]
        config: Option<Box<ExperimentConfig>>,
        #[serde(default)]
        hil: HilOptions,
        /// simulated seconds per wall second, sim mode only
        #[serde(default)]
        speed: Option<f64>,
        /// s; open-ended when absent
        #[serde(default)]
        duration: Option<f64>,
    },
    SetController {
        controller: ControllerSpec,
    },
    SetReference {
        reference: f64,
    },
    Stop,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Hello {
        session: u64,
        max_sample_rate: f64,
        config: ExperimentConfig,
    },
    Started {
        mode: Mode,
        sample_time: f64,
        config: ExperimentConfig,
    },
    /// `applies_at` is the sample instant from which the change acts; absent
    /// while idle
    Ack {
        request: &'static str,
        applies_at: Option<f64>,
    },
    Sample {
        t: f64,
        r: f64,
        y: f64,
        u: f64,
    },
    /// figures for the step since the last reference change
    Metrics {
        t: f64,
        metrics: Option<StepMetrics>,
        #[serde(skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Stopped {
        reason: String,
        samples: usize,
        run_id: Option<String>,
        loop_stats: Option<LoopStats>,
    },
    Error {
        error: ErrorBody,
    },
}

/// Session defaults: a 5 mm step with the ±12 V supply.
pub fn session_default_config() -> ExperimentConfig {
    ExperimentConfig {
        reference: 0.005,
        saturation: Some(Saturation::supply_12v()),
        ..Default::default()
    }
}

enum Event {
    Sample(LiveSample),
    Ack { request: &'static str, applies_at: f64 },
    Error(ErrorBody),
    Ended { reason: String, loop_stats: Option<LoopStats> },
}

enum SimCmd {
    Controller(TransferFunction),
    Reference(f64),
}

enum Control {
    Sim(UnboundedSender<SimCmd>, Arc<AtomicBool>),
    Hil(std_mpsc::Sender<(LoopUpdate, &'static str)>, Arc<AtomicBool>, f64),
}

impl Control {
    fn stop(&self) {
        match self {
            Control::Sim(_, s) | Control::Hil(_, s, _) => s.store(true, Ordering::Relaxed),
        }
    }
}

struct Running {
    mode: Mode,
    control: Control,
    events: UnboundedReceiver<Event>,
    config: ExperimentConfig,
    trace: SimTrace,
    segment_start: usize,
    last_sent: Option<Instant>,
}

fn core_error(e: &levlab::Error, field: &str) -> ErrorBody {
    ErrorBody::from_core(e, Some(field)).1
}

async fn send(socket: &mut WebSocket, msg: &ServerMsg) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn next_event(r: &mut Option<Running>) -> Option<Event> {
    match r {
        Some(r) => r.events.recv().await,
        None => std::future::pending().await,
    }
}

pub async fn run(mut socket: WebSocket, state: AppState) {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let mut config = session_default_config();
    let mut running: Option<Running> = None;
    let hello = ServerMsg::Hello {
        session: id,
        max_sample_rate: 1.0 / SAMPLE_SPACING.as_secs_f64(),
        config: config.clone(),
    };
    if !send(&mut socket, &hello).await {
        return;
    }
    let mut metrics_tick = tokio::time::interval(METRICS_PERIOD);
    metrics_tick.set_missed_tick_behavior(MissedTickBehavior::Delay);

    loop {
        tokio::select! {
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match parse_body::<ClientMsg>(text.as_bytes()) {
                    Ok(m) => handle_client(m, &mut config, &mut running),
                    Err(e) => vec![ServerMsg::Error { error: e }],
                };
                for m in &reply {
                    if !send(&mut socket, m).await {
                        break;
                    }
                }
                if let Some(ServerMsg::Started { .. }) = reply.last() {
                    metrics_tick.reset();
                }
            }
            ev = next_event(&mut running) => {
                let Some(ev) = ev else { continue };
                let run = running.as_mut().expect("events only while running");
                match ev {
                    Event::Sample(s) => {
                        run.trace.push(s.t, s.r, s.y, s.u);
                        let due = run.last_sent.is_none_or(|t| t.elapsed() >= SAMPLE_SPACING);
                        if due {
                            run.last_sent = Some(Instant::now());
                            let m = ServerMsg::Sample { t: s.t, r: s.r, y: s.y, u: s.u };
                            if !send(&mut socket, &m).await {
                                break;
                            }
                        }
                    }
                    Event::Ack { request, applies_at } => {
                        if request == "set_reference" {
                            run.segment_start = run.trace.len();
                        }
                        let _ = send(&mut socket, &ServerMsg::Ack { request, applies_at: Some(applies_at) }).await;
                    }
                    Event::Error(error) => {
                        let _ = send(&mut socket, &ServerMsg::Error { error }).await;
                    }
                    Event::Ended { reason, loop_stats } => {
                        let run = running.take().expect("running");
                        let msg = finish(&state, run, reason, loop_stats).await;
                        if !send(&mut socket, &msg).await {
                            break;
                        }
                    }
                }
            }
            _ = metrics_tick.tick() => {
                if let Some(run) = &running {
                    if let Some(m) = snapshot(run) {
                        if !send(&mut socket, &m).await {
                            break;
                        }
                    }
                }
            }
        }
    }

    // client gone: stop the loop and keep what it produced
    if let Some(mut run) = running.take() {
        run.control.stop();
        let deadline = tokio::time::sleep(Duration::from_secs(2));
        tokio::pin!(deadline);
        loop {
            tokio::select! {
                ev = run.events.recv() => match ev {
                    Some(Event::Sample(s)) => run.trace.push(s.t, s.r, s.y, s.u),
                    Some(Event::Ended { reason, loop_stats }) => {
                        finish(&state, run, reason, loop_stats).await;
                        break;
                    }
                    Some(_) => {}
                    None => break,
                },
                _ = &mut deadline => break,
            }
        }
    }
}

/// Metrics of the segment since the last reference change, measured from
/// where the output stood at that change.
fn snapshot(run: &Running) -> Option<ServerMsg> {
    let tr = &run.trace;
    let k0 = run.segment_start;
    if tr.len() < k0 + 10 {
        return None;
    }
    let (t0, y0) = (tr.t[k0], tr.y[k0]);
    let mut seg = SimTrace::with_capacity(tr.len() - k0);
    for k in k0..tr.len() {
        seg.push(tr.t[k] - t0, tr.r[k] - y0, tr.y[k] - y0, tr.u[k]);
    }
    let (metrics, note) = metrics_or_note(&seg, run.config.settle_band);
    Some(ServerMsg::Metrics {
        t: *tr.t.last().expect("non-empty"),
        metrics,
        note,
    })
}

async fn finish(state: &AppState, run: Running, reason: String, loop_stats: Option<LoopStats>) -> ServerMsg {
    let samples = run.trace.len();
    let kind = match run.mode {
        Mode::Sim => RunKind::Live,
        Mode::Hil => RunKind::Hil,
    };
    let store = state.store.clone();
    let stats = loop_stats.clone();
    let saved = if samples > 0 {
        tokio::task::spawn_blocking(move || store.save(kind, &run.config, &run.trace, None, stats))
            .await
            .ok()
            .and_then(|r| r.ok())
    } else {
        None
    };
    ServerMsg::Stopped {
        reason,
        samples,
        run_id: saved.map(|r| r.id),
        loop_stats,
    }
}

fn state_error(msg: &str) -> Vec<ServerMsg> {
    vec![ServerMsg::Error {
        error: ErrorBody::new("state", None, msg),
    }]
}

fn handle_client(msg: ClientMsg, config: &mut ExperimentConfig, running: &mut Option<Running>) -> Vec<ServerMsg> {
    match msg {
        ClientMsg::Start {
            mode,
            config: new_cfg,
            hil,
            speed,
            duration,
        } => {
            if running.is_some() {
                return state_error("a run is already in progress; stop it first");
            }
            let cfg = new_cfg.map_or_else(|| config.clone(), |c| *c);
            match start(mode, &cfg, &hil, speed, duration) {
                Ok(r) => {
                    let sample_time = match &r.control {
                        Control::Hil(_, _, p) => *p,
                        Control::Sim(..) => cfg.solver.sample_time,
                    };
                    *config = cfg.clone();
                    *running = Some(r);
                    vec![ServerMsg::Started {
                        mode,
                        sample_time,
                        config: cfg,
                    }]
                }
                Err(e) => vec![ServerMsg::Error { error: e }],
            }
        }
        ClientMsg::SetController { controller } => {
            let result = match running.as_ref().map(|r| &r.control) {
                None => controller.transfer_function().map(|_| ()),
                Some(Control::Sim(tx, _)) => controller
                    .transfer_function()
                    .map(|g| drop(tx.send(SimCmd::Controller(g)))),
                Some(Control::Hil(tx, _, period)) => controller
                    .proper_transfer_function()
                    .and_then(|g| discretize_tustin(&g, *period))
                    .map(|d| drop(tx.send((LoopUpdate::Controller(d), "set_controller")))),
            };
            match result {
                Err(e) => vec![ServerMsg::Error {
                    error: core_error(&e, "controller"),
                }],
                Ok(()) => {
                    config.controller = controller;
                    if running.is_some() {
                        // acknowledged by the loop once applied
                        Vec::new()
                    } else {
                        vec![ServerMsg::Ack {
                            request: "set_controller",
                            applies_at: None,
                        }]
                    }
                }
            }
        }
        ClientMsg::SetReference { reference } => {
            if !reference.is_finite() {
                return vec![ServerMsg::Error {
                    error: ErrorBody::new("validation", Some("reference".into()), "reference must be finite"),
                }];
            }
            config.reference = reference;
            match running.as_ref().map(|r| &r.control) {
                None => vec![ServerMsg::Ack {
                    request: "set_reference",
                    applies_at: None,
                }],
                Some(Control::Sim(tx, _)) => {
                    let _ = tx.send(SimCmd::Reference(reference));
                    Vec::new()
                }
                Some(Control::Hil(tx, _, _)) => {
                    let _ = tx.send((LoopUpdate::Reference(reference), "set_reference"));
                    Vec::new()
                }
            }
        }
        ClientMsg::Stop => match running {
            Some(r) => {
                r.control.stop();
                Vec::new()
            }
            None => state_error("no run in progress"),
        },
    }
}

fn start(
    mode: Mode,
    cfg: &ExperimentConfig,
    hil: &HilOptions,
    speed: Option<f64>,
    duration: Option<f64>,
) -> Result<Running, ErrorBody> {
    cfg.validate().map_err(|e| core_error(&e, "config"))?;
    let duration = duration.unwrap_or(MAX_SESSION_DURATION);
    if !(duration > 0.0 && duration <= MAX_SESSION_DURATION) {
        return Err(ErrorBody::new(
            "validation",
            Some("duration".into()),
            format!("must lie in (0, {MAX_SESSION_DURATION}] s"),
        ));
    }
    let (tx, events) = mpsc::unbounded_channel();
    let stop = Arc::new(AtomicBool::new(false));
    let control = match mode {
        Mode::Sim => {
            let speed = speed.unwrap_or(1.0);
            if !(speed > 0.0 && speed <= MAX_SPEED) {
                return Err(ErrorBody::new(
                    "validation",
                    Some("speed".into()),
                    format!("must lie in (0, {MAX_SPEED}]"),
                ));
            }
            let plant = cfg.plant.transfer_function().map_err(|e| core_error(&e, "plant"))?;
            let ctrl = cfg
                .controller
                .transfer_function()
                .map_err(|e| core_error(&e, "controller"))?;
            let sim = LiveSim::new(
                &plant,
                &ctrl,
                cfg.reference,
                cfg.saturation(),
                cfg.solver.sample_time,
                cfg.noise_std,
                cfg.seed,
            )
            .map_err(|e| core_error(&e, "config"))?;
            let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
            let period = Duration::from_secs_f64(cfg.solver.sample_time / speed);
            tokio::spawn(run_sim(sim, cmd_rx, tx, stop.clone(), period, duration));
            Control::Sim(cmd_tx, stop)
        }
        Mode::Hil => {
            if speed.is_some() {
                return Err(ErrorBody::new("validation", Some("speed".into()), "hil runs in real time"));
            }
            let mut lc = LoopConfig::new(cfg.reference, duration);
            if let Some(s) = cfg.saturation {
                lc.sat = s;
            }
            if let Some(m) = hil.loop_mode {
                lc.mode = m;
            }
            let ctrl = cfg
                .controller
                .proper_transfer_function()
                .and_then(|g| discretize_tustin(&g, lc.period))
                .map_err(|e| core_error(&e, "controller"))?;
            let baud = match hil.baud.unwrap_or(DEFAULT_BAUD) {
                0 => None,
                b => Some(b),
            };
            let (up_tx, up_rx) = std_mpsc::channel();
            let period = lc.period;
            let mut obs = HilObserver {
                events: tx.clone(),
                updates: up_rx,
                stop: stop.clone(),
                next_t: 0.0,
                period,
            };
            let connect = hil.connect.clone();
            let seed = cfg.seed;
            std::thread::spawn(move || {
                let result = match connect {
                    Some(addr) => TcpTransport::connect(&addr, baud)
                        .and_then(|mut t| run_realtime_loop_observed(&mut t, ctrl, &lc, &mut obs)),
                    None => DeviceThread::spawn(DeviceParams::default(), seed, baud).and_then(|(mut host, dev)| {
                        let r = run_realtime_loop_observed(&mut host, ctrl, &lc, &mut obs);
                        drop(host);
                        let _ = dev.finish();
                        r
                    }),
                };
                let ended = match result {
                    Ok((_, stats)) => Event::Ended {
                        reason: stats.aborted.clone().unwrap_or_else(|| {
                            if obs.stop.load(Ordering::Relaxed) { "stopped" } else { "duration" }.into()
                        }),
                        loop_stats: Some(stats),
                    },
                    Err(e) => Event::Ended {
                        reason: e.to_string(),
                        loop_stats: None,
                    },
                };
                let _ = tx.send(ended);
            });
            Control::Hil(up_tx, stop, period)
        }
    };
    Ok(Running {
        mode,
        control,
        events,
        config: cfg.clone(),
        trace: SimTrace::default(),
        segment_start: 0,
        last_sent: None,
    })
}

async fn run_sim(
    mut sim: LiveSim,
    mut cmds: UnboundedReceiver<SimCmd>,
    events: UnboundedSender<Event>,
    stop: Arc<AtomicBool>,
    period: Duration,
    duration: f64,
) {
    let end = |reason: &str| Event::Ended {
        reason: reason.into(),
        loop_stats: None,
    };
    if events.send(Event::Sample(sim.current())).is_err() {
        return;
    }
    let mut tick = tokio::time::interval(period);
    tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
    tick.tick().await;
    loop {
        tick.tick().await;
        if stop.load(Ordering::Relaxed) {
            let _ = events.send(end("stopped"));
            return;
        }
        loop {
            let (request, outcome) = match cmds.try_recv() {
                Ok(SimCmd::Controller(g)) => ("set_controller", sim.set_controller(&g).map_err(|e| core_error(&e, "controller"))),
                Ok(SimCmd::Reference(r)) => ("set_reference", sim.set_reference(r).map_err(|e| core_error(&e, "reference"))),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = events.send(end("stopped"));
                    return;
                }
            };
            let ev = match outcome {
                Ok(()) => Event::Ack {
                    request,
                    applies_at: sim.time(),
                },
                Err(e) => Event::Error(e),
            };
            let _ = events.send(ev);
        }
        if sim.time() >= duration - 1e-9 {
            let _ = events.send(end("duration"));
            return;
        }
        match sim.step() {
            Ok(s) => {
                if events.send(Event::Sample(s)).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = events.send(end(&e.to_string()));
                return;
            }
        }
    }
}

struct HilObserver {
    events: UnboundedSender<Event>,
    updates: std_mpsc::Receiver<(LoopUpdate, &'static str)>,
    stop: Arc<AtomicBool>,
    next_t: f64,
    period: f64,
}

impl LoopObserver for HilObserver {
    fn on_sample(&mut self, t: f64, r: f64, y: f64, u: f64) -> bool {
        self.next_t = t + self.period;
        let _ = self.events.send(Event::Sample(LiveSample { t, r, y, u }));
        !self.stop.load(Ordering::Relaxed)
    }

    fn poll_update(&mut self) -> Option<LoopUpdate> {
        let (up, request) = self.updates.try_recv().ok()?;
        let _ = self.events.send(Event::Ack {
            request,
            applies_at: self.next_t,
        });
        Some(up)
    }
}
