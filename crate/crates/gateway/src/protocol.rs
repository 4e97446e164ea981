//! Wire protocol of the live service.
//!
//! Every message is one JSON text frame. The client opens with
//! `{"session": {...}}`, then streams [`WireFrameIn`]; the server answers each
//! input frame with exactly one [`WireFrameOut`] (or an error frame), in order.

use std::sync::Arc;

use entrain_core::arena::{ArenaConfig, Method, Models, Session};
use entrain_core::signal::PoseVector;
use serde::{Deserialize, Serialize};

pub const TICK_HZ: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_e: f64,
    pub w_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub method: Method,
    pub seed: u64,
    pub dim: usize,
    #[serde(default)]
    pub n_states: Option<usize>,
    #[serde(default)]
    pub weights: Option<Weights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub session: SessionRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrameIn {
    pub tick: u64,
    pub partner_pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrameOut {
    pub tick: u64,
    pub agent_pose: Vec<f64>,
    pub belief: Vec<f64>,
    /// Free energy of the sequence being executed; `null` for baselines.
    pub chosen_free_energy: Option<f64>,
    /// `null` until a full window has been seen.
    pub disc_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub tick_hz: f64,
    #[serde(rename = "L")]
    pub window_len: usize,
    #[serde(rename = "K")]
    pub horizon: usize,
    /// How input faster than `tick_hz` is treated.
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub got: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ErrorFrame {
    pub fn new(error: &str, detail: impl Into<String>) -> Self {
        ErrorFrame {
            error: error.into(),
            expected: None,
            got: None,
            detail: Some(detail.into()),
        }
    }

    pub fn mismatch(error: &str, expected: usize, got: usize) -> Self {
        ErrorFrame {
            error: error.into(),
            expected: Some(expected),
            got: Some(got),
            detail: None,
        }
    }
}

/// Messages sent by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerMessage {
    Ok { ok: Accepted },
    Heartbeat { hb: u64 },
    Frame(WireFrameOut),
    Error(ErrorFrame),
}

impl ServerMessage {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn is_heartbeat(&self) -> bool {
        matches!(self, ServerMessage::Heartbeat { .. })
    }
}

/// What the transport should do after a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Continue,
    /// The handshake was rejected; send the reply and close.
    Close,
}

struct Active {
    session: Session,
    last_tick: Option<u64>,
    chosen_f: Option<f64>,
}

/// Per-connection protocol state. Holds no I/O; the transport feeds it text
/// frames and sends back what it returns.
pub struct Connection {
    models: Arc<Models>,
    base: ArenaConfig,
    active: Option<Active>,
}

impl Connection {
    pub fn new(models: Arc<Models>, base: ArenaConfig) -> Self {
        Connection {
            models,
            base,
            active: None,
        }
    }

    /// Ticks processed so far in the current session.
    pub fn ticks(&self) -> u64 {
        self.active.as_ref().map_or(0, |a| a.session.tick() as u64)
    }

    pub fn handle(&mut self, text: &str) -> (ServerMessage, Disposition) {
        let value: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return (ServerMessage::Error(ErrorFrame::new("malformed", e.to_string())), Disposition::Continue),
        };
        if value.get("session").is_some() {
            return match serde_json::from_value::<Handshake>(value) {
                Ok(h) => self.open(h.session),
                Err(e) => (
                    ServerMessage::Error(ErrorFrame::new("bad_handshake", e.to_string())),
                    Disposition::Close,
                ),
            };
        }
        match serde_json::from_value::<WireFrameIn>(value) {
            Ok(f) => (self.frame(f), Disposition::Continue),
            Err(e) => (ServerMessage::Error(ErrorFrame::new("malformed", e.to_string())), Disposition::Continue),
        }
    }

    fn open(&mut self, req: SessionRequest) -> (ServerMessage, Disposition) {
        let reject = |e: ErrorFrame| (ServerMessage::Error(e), Disposition::Close);
        let dim = self.models.dim();
        if req.dim != dim {
            return reject(ErrorFrame::mismatch("dim_mismatch", dim, req.dim));
        }
        let n_states = self.models.hmm.n_states;
        if let Some(n) = req.n_states.filter(|&n| n != n_states) {
            return reject(ErrorFrame::mismatch("n_states_mismatch", n_states, n));
        }
        let mut cfg = self.base.clone();
        if let Some(w) = req.weights {
            cfg.fep.w_epistemic = w.w_e;
            cfg.fep.w_pragmatic = w.w_p;
        }
        let session = match Session::new(Arc::clone(&self.models), req.method, cfg.clone(), req.seed) {
            Ok(s) => s,
            Err(e) => return reject(ErrorFrame::new("bad_handshake", e.to_string())),
        };
        self.active = Some(Active {
            session,
            last_tick: None,
            chosen_f: None,
        });
        let ok = Accepted {
            tick_hz: TICK_HZ,
            window_len: self.models.window_len(),
            horizon: cfg.fep.horizon,
            input: "one_output_per_frame".into(),
        };
        (ServerMessage::Ok { ok }, Disposition::Continue)
    }

    fn frame(&mut self, f: WireFrameIn) -> ServerMessage {
        let dim = self.models.dim();
        let Some(a) = self.active.as_mut() else {
            return ServerMessage::Error(ErrorFrame::new("no_session", "send a session handshake first"));
        };
        if f.partner_pose.len() != dim {
            return ServerMessage::Error(ErrorFrame::mismatch("dim_mismatch", dim, f.partner_pose.len()));
        }
        if a.last_tick.is_some_and(|t| f.tick <= t) {
            return ServerMessage::Error(ErrorFrame::new(
                "tick_order",
                format!("tick {} after {}", f.tick, a.last_tick.unwrap_or_default()),
            ));
        }
        match a.session.step(&PoseVector(f.partner_pose)) {
            Ok(r) => {
                a.last_tick = Some(f.tick);
                if r.chosen_f.is_some() {
                    a.chosen_f = r.chosen_f;
                }
                ServerMessage::Frame(WireFrameOut {
                    tick: f.tick,
                    agent_pose: r.agent_pose,
                    belief: r.belief,
                    chosen_free_energy: a.chosen_f,
                    disc_score: r.disc_score,
                })
            }
            Err(e) => ServerMessage::Error(ErrorFrame::new("step_failed", e.to_string())),
        }
    }
}
