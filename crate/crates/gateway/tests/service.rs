mod common;

use std::sync::Arc;
use std::time::Duration;

use entrain::protocol::{Connection, Disposition, ServerMessage, WireFrameIn};
use entrain::server::{serve, ServeConfig};
use entrain_core::arena::{run_episode_logged, ArenaConfig, Method};
use entrain_core::signal::{PoseSequence, PoseVector, Side};
use futures::{SinkExt, StreamExt};
use serde_json::json;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

fn handshake(method: &str, seed: u64, dim: usize) -> String {
    json!({"session": {"method": method, "seed": seed, "dim": dim, "n_states": 3, "weights": {"w_e": 1.0, "w_p": 1.0}}})
        .to_string()
}

fn frame(tick: u64, pose: &[f64]) -> String {
    serde_json::to_string(&WireFrameIn {
        tick,
        partner_pose: pose.to_vec(),
    })
    .unwrap()
}

fn connection() -> Connection {
    Connection::new(Arc::new(common::small_models(1)), ArenaConfig::default())
}

#[test]
fn handshake_reports_rates_and_window() {
    let mut c = connection();
    let (reply, d) = c.handle(&handshake("fep", 0, common::D));
    assert_eq!(d, Disposition::Continue);
    let v: serde_json::Value = serde_json::from_str(&reply.to_text()).unwrap();
    assert_eq!(v["ok"]["tick_hz"], 8.0);
    assert_eq!(v["ok"]["L"], common::L);
    assert_eq!(v["ok"]["K"], 8);
}

#[test]
fn dim_mismatch_rejects_the_session() {
    let mut c = connection();
    let (reply, d) = c.handle(&handshake("fep", 0, 5));
    assert_eq!(d, Disposition::Close);
    let v: serde_json::Value = serde_json::from_str(&reply.to_text()).unwrap();
    assert_eq!(v, json!({"error": "dim_mismatch", "expected": common::D, "got": 5}));
}

#[test]
fn bad_messages_get_error_frames_and_the_session_continues() {
    let mut c = connection();
    let err = |m: &ServerMessage| match m {
        ServerMessage::Error(e) => e.error.clone(),
        other => panic!("expected an error frame, got {other:?}"),
    };
    let pose = vec![0.0; common::D];
    assert_eq!(err(&c.handle(&frame(0, &pose)).0), "no_session");
    c.handle(&handshake("random_prm", 3, common::D));
    assert_eq!(err(&c.handle("{not json").0), "malformed");
    assert_eq!(err(&c.handle(r#"{"tick": "x"}"#).0), "malformed");
    assert_eq!(err(&c.handle(&frame(0, &[0.0; 3])).0), "dim_mismatch");
    assert!(matches!(c.handle(&frame(5, &pose)).0, ServerMessage::Frame(_)));
    assert_eq!(err(&c.handle(&frame(5, &pose)).0), "tick_order");
    assert_eq!(err(&c.handle(&frame(4, &pose)).0), "tick_order");
    assert!(matches!(c.handle(&frame(6, &pose)).0, ServerMessage::Frame(_)));
    assert_eq!(c.ticks(), 2);
}

#[test]
fn frames_match_an_offline_episode() {
    let models = Arc::new(common::small_models(2));
    let frames = common::partner_frames(7, 60);
    let mut c = Connection::new(Arc::clone(&models), ArenaConfig::default());
    c.handle(&handshake("fep", 11, common::D));
    let outs: Vec<_> = frames
        .iter()
        .enumerate()
        .map(|(t, f)| match c.handle(&frame(t as u64 * 2, f)).0 {
            ServerMessage::Frame(o) => o,
            other => panic!("{other:?}"),
        })
        .collect();

    let partner = PoseSequence::new(frames.iter().cloned().map(PoseVector).collect(), 8.0, Side::PartnerSide).unwrap();
    let (_, records) = run_episode_logged(Method::Fep, &partner, &models, &ArenaConfig::default(), None, 11).unwrap();
    let mut chosen = None;
    for (t, (o, r)) in outs.iter().zip(&records).enumerate() {
        assert_eq!(o.tick, 2 * t as u64);
        assert_eq!(o.agent_pose, r.agent_pose);
        assert_eq!(o.belief, r.belief);
        assert_eq!(o.disc_score, r.disc_score);
        chosen = r.chosen_f.or(chosen);
        assert_eq!(o.chosen_free_energy, chosen);
        // Serialized belief still sums to one.
        let text = ServerMessage::Frame(o.clone()).to_text();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let sum: f64 = v["belief"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

async fn start(heartbeat: Duration) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let models = Arc::new(common::small_models(3));
    let cfg = ServeConfig {
        arena: ArenaConfig::default(),
        heartbeat,
    };
    tokio::spawn(serve(listener, models, cfg));
    format!("ws://{addr}")
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_non_heartbeat(ws: &mut Ws) -> Option<String> {
    while let Some(msg) = ws.next().await {
        match msg.unwrap() {
            Message::Text(t) => {
                let parsed: ServerMessage = serde_json::from_str(t.as_str()).unwrap();
                if !parsed.is_heartbeat() {
                    return Some(t.to_string());
                }
            }
            Message::Close(_) => return None,
            _ => {}
        }
    }
    None
}

/// Sends the handshake and `frames`, returning every non-heartbeat reply.
async fn transcript(url: &str, seed: u64, frames: &[Vec<f64>]) -> Vec<String> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    ws.send(Message::text(handshake("fep", seed, common::D))).await.unwrap();
    let mut out = vec![next_non_heartbeat(&mut ws).await.unwrap()];
    for (t, f) in frames.iter().enumerate() {
        ws.send(Message::text(frame(t as u64, f))).await.unwrap();
    }
    for _ in frames {
        out.push(next_non_heartbeat(&mut ws).await.unwrap());
    }
    ws.close(None).await.unwrap();
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hundred_frames_in_hundred_frames_out() {
    let url = start(Duration::from_secs(5)).await;
    let frames = common::partner_frames(1, 100);
    let t = transcript(&url, 4, &frames).await;
    assert!(t[0].contains("\"ok\""));
    assert_eq!(t.len(), 101);
    for (i, text) in t[1..].iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(v["tick"].as_u64(), Some(i as u64), "{text}");
        assert_eq!(v["agent_pose"].as_array().unwrap().len(), common::D);
    }
    // Replaying the same client script gives a byte-identical transcript.
    assert_eq!(transcript(&url, 4, &frames).await, t);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn dim_mismatch_over_the_wire() {
    let url = start(Duration::from_secs(5)).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    ws.send(Message::text(handshake("perlin", 0, 3))).await.unwrap();
    let reply: serde_json::Value = serde_json::from_str(&next_non_heartbeat(&mut ws).await.unwrap()).unwrap();
    assert_eq!(reply["error"], "dim_mismatch");
    assert_eq!(reply["expected"], common::D);
    assert_eq!(reply["got"], 3);
    assert!(next_non_heartbeat(&mut ws).await.is_none(), "server closes after rejecting");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn heartbeats_carry_the_tick_count() {
    let url = start(Duration::from_millis(100)).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    ws.send(Message::text(handshake("perlin", 0, common::D))).await.unwrap();
    let frames = common::partner_frames(2, 3);
    for (t, f) in frames.iter().enumerate() {
        ws.send(Message::text(frame(t as u64, f))).await.unwrap();
    }
    let mut beats = Vec::new();
    while beats.len() < 2 {
        let Some(Ok(Message::Text(t))) = ws.next().await else { panic!("stream ended") };
        if let ServerMessage::Heartbeat { hb } = serde_json::from_str(t.as_str()).unwrap() {
            beats.push(hb);
        }
    }
    assert_eq!(beats.last(), Some(&3));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_are_independent() {
    let url = start(Duration::from_secs(5)).await;
    let frames = common::partner_frames(5, 60);
    let (mut a, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let (mut b, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    for ws in [&mut a, &mut b] {
        ws.send(Message::text(handshake("fep", 9, common::D))).await.unwrap();
    }
    ta.push(next_non_heartbeat(&mut a).await.unwrap());
    tb.push(next_non_heartbeat(&mut b).await.unwrap());
    // Interleave: a, b, a, b, ...
    for (t, f) in frames.iter().enumerate() {
        a.send(Message::text(frame(t as u64, f))).await.unwrap();
        b.send(Message::text(frame(t as u64, f))).await.unwrap();
        ta.push(next_non_heartbeat(&mut a).await.unwrap());
        tb.push(next_non_heartbeat(&mut b).await.unwrap());
    }
    assert_eq!(ta, tb);
    assert_eq!(ta, transcript(&url, 9, &frames).await);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn survives_clients_dropping_mid_session() {
    let url = start(Duration::from_secs(5)).await;
    let frames = common::partner_frames(6, 30);
    for round in 0..5 {
        let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        ws.send(Message::text(handshake("random_prm", round, common::D))).await.unwrap();
        for (t, f) in frames.iter().take(10).enumerate() {
            ws.send(Message::text(frame(t as u64, f))).await.unwrap();
        }
        // Drop without a close handshake.
        drop(ws);
    }
    let t = transcript(&url, 1, &frames).await;
    assert_eq!(t.len(), frames.len() + 1);
}
