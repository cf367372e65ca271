//! Minimal scripted client, used for replays and tests.

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use ikk_core::experiments::{ControllerKind, TrialResult};

use crate::protocol::{ClientBody, ClientMessage, ClockMode, ServerBody, ServerMessage, SessionMode, PROTOCOL_VERSION};

pub type ClientError = Box<dyn std::error::Error + Send + Sync>;

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
}

impl Client {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(Client { ws, seq: 0 })
    }

    pub async fn send(&mut self, body: ClientBody) -> Result<(), ClientError> {
        self.seq += 1;
        let msg = ClientMessage {
            v: PROTOCOL_VERSION,
            seq: self.seq,
            body,
        };
        self.send_raw(&serde_json::to_string(&msg)?).await
    }

    pub async fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    /// Next server message; `None` once the server closes.
    pub async fn recv(&mut self) -> Result<Option<ServerMessage>, ClientError> {
        while let Some(m) = self.ws.next().await {
            match m? {
                Message::Text(t) => return Ok(Some(serde_json::from_str(t.as_str())?)),
                Message::Close(_) => return Ok(None),
                _ => {}
            }
        }
        Ok(None)
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}

/// Drive an Experiment 1 trial in lockstep by replaying null-space speed
/// commands (rad/s, one per tick including warm-up) as jog inputs.
pub async fn replay_exp1(url: &str, profile_seed: u64, commands: &[f64], subject: &str) -> Result<TrialResult, ClientError> {
    let mut c = Client::connect(url).await?;
    c.send(ClientBody::Hello { client: Some("replay".into()) }).await?;
    let max_jog = loop {
        match c.recv().await?.ok_or("closed before hello")?.body {
            ServerBody::Hello { max_jog, .. } => break max_jog,
            ServerBody::Error { message } => return Err(message.into()),
            _ => {}
        }
    };
    c.send(ClientBody::Start {
        mode: SessionMode::Exp1,
        clock: ClockMode::Lockstep,
        seed: Some(profile_seed),
        controller: Some(ControllerKind::Ikk),
        subject: Some(subject.into()),
    })
    .await?;
    for &s in commands {
        c.send(ClientBody::Jog { u: s / max_jog }).await?;
    }
    loop {
        match c.recv().await?.ok_or("closed before result")?.body {
            ServerBody::Result(r) => {
                c.close().await.ok();
                return Ok(*r);
            }
            ServerBody::Error { message } => return Err(message.into()),
            _ => {}
        }
    }
}
