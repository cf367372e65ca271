//! JSON wire protocol, version 1. Every message carries `"v":1` and a
//! per-sender sequence number that strictly increases.

use serde::{Deserialize, Serialize};

use ikk_core::experiments::{ControllerKind, TrialResult};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    Free,
    Exp1,
    Exp2Single,
    Exp2Parallel,
}

impl SessionMode {
    pub const ALL: [SessionMode; 4] = [SessionMode::Free, SessionMode::Exp1, SessionMode::Exp2Single, SessionMode::Exp2Parallel];
}

/// How the session clock advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Fixed 100 Hz wall-clock loop.
    #[default]
    Realtime,
    /// One tick per received input message (scripted clients and replays).
    Lockstep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientBody {
    Hello {
        #[serde(default)]
        client: Option<String>,
    },
    Start {
        mode: SessionMode,
        #[serde(default)]
        clock: ClockMode,
        /// Profile seed (exp1) or schedule seed (exp2).
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        controller: Option<ControllerKind>,
        #[serde(default)]
        subject: Option<String>,
    },
    /// Null-space velocity coefficient in [-1, 1].
    Jog { u: f64 },
    /// Desired hand velocity, m/s.
    IkMove { dx: [f64; 3] },
    /// Control value set directly, bypassing the arm.
    Direct { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ClientBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskPayload {
    None,
    Exp1 {
        profile: String,
        reference: f64,
        /// Pointer position across the canvas, 0–1 (full width per trial).
        progress: f64,
    },
    Exp2 {
        radius: f64,
        target_radius: f64,
        center: [f64; 3],
        progress: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub session: u64,
    pub mode: SessionMode,
    pub t: f64,
    pub q: Vec<f64>,
    pub hand: [f64; 3],
    pub value: f64,
    pub inside_hull: bool,
    pub task: TaskPayload,
    pub paused: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerBody {
    Hello {
        session: u64,
        dof: usize,
        nodes: usize,
        modes: Vec<SessionMode>,
        loop_hz: f64,
        render_hz: f64,
        max_jog: f64,
    },
    State(StatePayload),
    Result(Box<TrialResult>),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("sequence number {got} does not follow {prev}")]
    Sequence { prev: u64, got: u64 },
}

/// Parse a client frame, checking version and sequence ordering.
pub fn parse_client(text: &str, last_seq: Option<u64>) -> Result<ClientMessage, ProtocolError> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if msg.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(msg.v));
    }
    if let Some(prev) = last_seq {
        if msg.seq <= prev {
            return Err(ProtocolError::Sequence { prev, got: msg.seq });
        }
    }
    Ok(msg)
}
