//! Session host for live trials over WebSocket: a 100 Hz control loop per
//! connection, JSON messages in and out, results written in the same format
//! as simulated runs.

pub mod client;
pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientBody, ClientMessage, ClockMode, ServerBody, ServerMessage, SessionMode, StatePayload, TaskPayload};
pub use server::{ServeConfig, Server};
pub use session::{Session, SessionConfig};
