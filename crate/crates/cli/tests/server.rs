use std::net::SocketAddr;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use levlab::experiment::RunStore;
use levlab_cli::server::{serve, AppState};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn spawn_server() -> (SocketAddr, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = AppState::new(RunStore::new(dir.path()));
    tokio::spawn(serve(listener, state));
    (addr, dir)
}

async fn post(addr: SocketAddr, path: &str, body: &str) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}{path}"))
        .header("content-type", "application/json")
        .body(body.to_owned())
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/api/session")).await.unwrap();
    ws
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server message within 10 s")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn recv_until(ws: &mut Ws, ty: &str, seen: &mut Vec<Value>) -> Value {
    loop {
        let m = recv(ws).await;
        if m["type"] == ty {
            return m;
        }
        seen.push(m);
    }
}

#[tokio::test]
async fn plant_endpoint_reports_reference_model() {
    let (addr, _dir) = spawn_server().await;
    let v: Value = reqwest::get(format!("http://{addr}/api/plant")).await.unwrap().json().await.unwrap();
    assert_eq!(v["transfer_function"]["den"], json!([1.0, 8.1, 5994.0]));
    assert_eq!(v["transfer_function"]["num"], json!([337.5]));
    assert!(v["presets"].as_array().unwrap().contains(&json!("pid-paper")));
}

#[tokio::test]
async fn simulate_is_deterministic_and_meets_bounds() {
    let (addr, _dir) = spawn_server().await;
    let body = r#"{"controller":{"kind":"preset","name":"pid-paper"},"duration":2}"#;
    let (s1, a) = post(addr, "/api/simulate", body).await;
    let (s2, b) = post(addr, "/api/simulate", body).await;
    assert_eq!((s1, s2), (200, 200));
    assert_eq!(a["trace"], b["trace"]);
    let m = &a["metrics"];
    assert!(m["ts"].as_f64().unwrap() < 0.75);
    assert!(m["mp"].as_f64().unwrap() < 2.0);
    assert!(m["ess"].as_f64().unwrap() < 0.02);
}

#[tokio::test]
async fn invalid_configs_get_structured_errors() {
    let (addr, _dir) = spawn_server().await;
    let (s, v) = post(addr, "/api/simulate", r#"{"duration":-2}"#).await;
    assert_eq!(s, 422);
    assert_eq!(v["error"]["field"], "duration");
    assert_eq!(v["error"]["kind"], "validation");

    let (s, v) = post(addr, "/api/simulate", r#"{"controller":{"kind":"pid","kp":"x","ki":1,"kd":0}}"#).await;
    assert_eq!(s, 400);
    assert_eq!(v["error"]["kind"], "parse");
    assert!(v["error"]["field"].as_str().unwrap().starts_with("controller"));

    let (s, v) = post(addr, "/api/simulate", r#"{"solver":{"kind":"rk23","h_min":0.1,"h_max":0.01,"tolerance":1,"sample_time":0.01}}"#).await;
    assert_eq!(s, 422);
    assert_eq!(v["error"]["field"], "solver");

    let (s, v) = post(addr, "/api/simulate", r#"{"controller":{"kind":"pid","kp":-1,"ki":1,"kd":0}}"#).await;
    assert_eq!(s, 422);
    assert_eq!(v["error"]["field"], "kp");

    let (s, _) = post(addr, "/api/simulate", r#"{"unknown":1}"#).await;
    assert_eq!(s, 400);
}

#[tokio::test]
async fn rootlocus_endpoint() {
    let (addr, _dir) = spawn_server().await;
    let (s, v) = post(addr, "/api/rootlocus", r#"{"gains":{"lo":0.01,"hi":100,"n":50}}"#).await;
    assert_eq!(s, 200);
    let b = v["branches"].as_array().unwrap();
    assert_eq!(b.len(), 2);
    assert_eq!(b[0]["points"].as_array().unwrap().len(), 50);
    let (s, v) = post(addr, "/api/rootlocus", r#"{"gains":{"lo":0,"hi":100,"n":50}}"#).await;
    assert_eq!(s, 422);
    assert_eq!(v["error"]["field"], "gains");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn session_streams_retunes_and_persists() {
    let (addr, dir) = spawn_server().await;
    let mut ws = connect(addr).await;
    assert_eq!(recv(&mut ws).await["type"], "hello");

    send(&mut ws, json!({"type":"start","mode":"sim","speed":1.0,"duration":1.5})).await;
    let started = recv(&mut ws).await;
    assert_eq!(started["type"], "started", "{started}");
    let t_start = Instant::now();

    let mut seen = Vec::new();
    for _ in 0..5 {
        recv_until(&mut ws, "sample", &mut seen).await;
    }
    send(&mut ws, json!({"type":"set_controller","controller":{"kind":"pid","kp":10,"ki":100,"kd":0.03}})).await;
    let ack = recv_until(&mut ws, "ack", &mut seen).await;
    assert_eq!(ack["request"], "set_controller");
    let applies_at = ack["applies_at"].as_f64().unwrap();
    send(&mut ws, json!({"type":"set_reference","reference":0.008})).await;
    let stopped = recv_until(&mut ws, "stopped", &mut seen).await;
    let wall = t_start.elapsed().as_secs_f64();

    let samples: Vec<&Value> = seen.iter().filter(|m| m["type"] == "sample").collect();
    let t: Vec<f64> = samples.iter().map(|m| m["t"].as_f64().unwrap()).collect();
    assert!(t.windows(2).all(|w| w[1] > w[0]), "timestamps increase");
    assert!(applies_at > 0.0);
    assert!(samples.len() as f64 <= 50.0 * wall + 2.0, "{} samples in {wall} s", samples.len());
    assert!(seen.iter().any(|m| m["type"] == "metrics"));
    assert!(seen.iter().any(|m| m["type"] == "ack" && m["request"] == "set_reference"));
    assert!(samples.iter().any(|m| m["r"] == 0.008));
    assert!(samples.iter().all(|m| m["u"].as_f64().unwrap().abs() <= 12.0));

    assert_eq!(stopped["reason"], "duration");
    assert_eq!(stopped["samples"], 151);
    let id = stopped["run_id"].as_str().unwrap();
    assert!(dir.path().join("runs").join(id).join("trace.csv").exists());
}

async fn noise_run(addr: SocketAddr, seed: u64) -> Vec<f64> {
    let mut ws = connect(addr).await;
    recv(&mut ws).await;
    let config = json!({"reference":0.0,"noise_std":1e-4,"seed":seed,"saturation":{"lo":-12,"hi":12}});
    send(&mut ws, json!({"type":"start","config":config,"speed":4.0,"duration":2.0})).await;
    let mut seen = Vec::new();
    recv_until(&mut ws, "stopped", &mut seen).await;
    seen.iter().filter(|m| m["type"] == "sample").map(|m| m["y"].as_f64().unwrap()).collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_are_isolated() {
    let (addr, _dir) = spawn_server().await;
    let (a, b) = tokio::join!(noise_run(addr, 1), noise_run(addr, 2));
    assert!(a.len() > 5 && b.len() > 5);
    assert_ne!(a, b);
    assert!(a.iter().all(|y| y.abs() < 1e-2));
}

#[tokio::test]
async fn session_rejects_bad_messages() {
    let (addr, _dir) = spawn_server().await;
    let mut ws = connect(addr).await;
    recv(&mut ws).await;
    send(&mut ws, json!({"type":"warp"})).await;
    assert_eq!(recv(&mut ws).await["error"]["kind"], "parse");
    send(&mut ws, json!({"type":"stop"})).await;
    assert_eq!(recv(&mut ws).await["error"]["kind"], "state");
    send(&mut ws, json!({"type":"set_controller","controller":{"kind":"lead-lag","kc":1,"tau_lead":1,"alpha":2,"tau_lag":1,"beta":10}})).await;
    let e = recv(&mut ws).await;
    assert_eq!(e["error"]["field"], "alpha");
    send(&mut ws, json!({"type":"set_reference","reference":0.002})).await;
    let ack = recv(&mut ws).await;
    assert_eq!(ack["type"], "ack");
    assert!(ack["applies_at"].is_null());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hil_session_runs_against_in_process_device() {
    let (addr, _dir) = spawn_server().await;
    let mut ws = connect(addr).await;
    recv(&mut ws).await;
    let config = json!({"reference":0.002,"controller":{"kind":"pid","kp":0,"ki":20,"kd":0,"n":100}});
    send(&mut ws, json!({"type":"start","mode":"hil","config":config,"duration":0.6,"hil":{"baud":0}})).await;
    assert_eq!(recv(&mut ws).await["type"], "started");
    let mut seen = Vec::new();
    let stopped = recv_until(&mut ws, "stopped", &mut seen).await;
    assert!(stopped["loop_stats"]["iterations"].as_u64().unwrap() > 0);
    let t: Vec<f64> = seen.iter().filter(|m| m["type"] == "sample").map(|m| m["t"].as_f64().unwrap()).collect();
    assert!(!t.is_empty());
    assert!(t.windows(2).all(|w| w[1] > w[0]));
}
