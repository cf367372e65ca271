use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::time::{interval, Instant, MissedTickBehavior};
use tokio_tungstenite::tungstenite::Message;

use ikk_core::experiments::TrialResult;
use ikk_core::simuser::LOOP_RATE_HZ;
use ikk_core::{ArmModel, InterpolationVolume};

use crate::protocol::{parse_client, ClientBody, ClockMode, ServerBody, ServerMessage, SessionMode, PROTOCOL_VERSION};
use crate::session::{Session, SessionConfig};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    /// Trial results land in `<dir>/<exp>/<trial>.{csv,json}`.
    pub results_dir: Option<PathBuf>,
    /// State messages per second in realtime mode.
    pub render_hz: f64,
    pub session: SessionConfig,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 8765)),
            results_dir: None,
            render_hz: 50.0,
            session: SessionConfig::default(),
        }
    }
}

struct Shared {
    model: ArmModel,
    volume: InterpolationVolume,
    cfg: ServeConfig,
    next_id: AtomicU64,
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub async fn bind(model: ArmModel, volume: InterpolationVolume, cfg: ServeConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(cfg.addr).await?;
        Ok(Server {
            listener,
            shared: Arc::new(Shared {
                model,
                volume,
                cfg,
                next_id: AtomicU64::new(1),
            }),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept connections forever, one session each.
    pub async fn run(self) -> std::io::Result<()> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let shared = self.shared.clone();
            tokio::spawn(async move {
                if let Err(e) = connection(stream, shared).await {
                    log::warn!("session with {peer} ended: {e}");
                }
            });
        }
    }
}

fn write_result(dir: &std::path::Path, r: &TrialResult) -> std::io::Result<()> {
    let sub = dir.join(r.experiment.name());
    std::fs::create_dir_all(&sub)?;
    r.write_csv(std::fs::File::create(sub.join(format!("{}.csv", r.trial)))?)
        .map_err(std::io::Error::other)?;
    std::fs::write(
        sub.join(format!("{}.json", r.trial)),
        serde_json::to_string_pretty(&r.summary()).map_err(std::io::Error::other)?,
    )
}

struct Outbox {
    tx: mpsc::UnboundedSender<Message>,
    seq: u64,
}

impl Outbox {
    fn send(&mut self, body: ServerBody) -> bool {
        self.seq += 1;
        let msg = ServerMessage {
            v: PROTOCOL_VERSION,
            seq: self.seq,
            body,
        };
        match serde_json::to_string(&msg) {
            Ok(text) => self.tx.send(Message::text(text)).is_ok(),
            Err(e) => {
                log::error!("cannot encode message: {e}");
                false
            }
        }
    }
}

async fn connection(stream: TcpStream, shared: Arc<Shared>) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();

    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            let close = matches!(m, Message::Close(_));
            if sink.send(m).await.is_err() || close {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let (in_tx, mut in_rx) = mpsc::unbounded_channel::<String>();
    let reader = tokio::spawn(async move {
        while let Some(Ok(m)) = source.next().await {
            match m {
                Message::Text(t) => {
                    if in_tx.send(t.as_str().to_owned()).is_err() {
                        break;
                    }
                }
                Message::Binary(_) => {
                    let _ = in_tx.send(String::from("<binary frame>"));
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let mut session = Session::new(id, &shared.model, &shared.volume, shared.cfg.session.clone())?;
    let mut out = Outbox { tx: out_tx, seq: 0 };
    let mut clock = ClockMode::Realtime;
    let mut last_seq = None;
    let mut last_input = Instant::now();
    let stall = Duration::from_secs_f64(session.config().stall_timeout);
    let render_every = ((LOOP_RATE_HZ / shared.cfg.render_hz).round() as u64).max(1);
    let mut ticks: u64 = 0;
    let mut ticker = interval(Duration::from_secs_f64(1.0 / LOOP_RATE_HZ));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);

    let emit_result = |out: &mut Outbox, r: TrialResult| {
        if let Some(dir) = &shared.cfg.results_dir {
            if let Err(e) = write_result(dir, &r) {
                log::error!("cannot write trial {}: {e}", r.trial);
            }
        }
        out.send(ServerBody::Result(Box::new(r)))
    };

    loop {
        tokio::select! {
            text = in_rx.recv() => {
                let Some(text) = text else { break };
                let msg = match parse_client(&text, last_seq) {
                    Ok(m) => m,
                    Err(e) => {
                        out.send(ServerBody::Error { message: e.to_string() });
                        let _ = out.tx.send(Message::Close(None));
                        break;
                    }
                };
                last_seq = Some(msg.seq);
                last_input = Instant::now();
                session.paused = false;
                match &msg.body {
                    ClientBody::Hello { .. } => {
                        out.send(ServerBody::Hello {
                            session: id,
                            dof: shared.volume.dof(),
                            nodes: shared.volume.nodes.len(),
                            modes: SessionMode::ALL.to_vec(),
                            loop_hz: LOOP_RATE_HZ,
                            render_hz: shared.cfg.render_hz,
                            max_jog: session.config().max_jog,
                        });
                    }
                    ClientBody::Start { mode, clock: c, seed, controller, subject } => {
                        match session.start(*mode, *seed, *controller, subject.clone()) {
                            Ok(()) => clock = *c,
                            Err(e) => {
                                out.send(ServerBody::Error { message: e.to_string() });
                            }
                        }
                    }
                    body => {
                        session.apply(body);
                        if clock == ClockMode::Lockstep {
                            let result = session.tick()?;
                            out.send(ServerBody::State(session.state()));
                            if let Some(r) = result {
                                emit_result(&mut out, r);
                            }
                        }
                    }
                }
            }
            _ = ticker.tick(), if clock == ClockMode::Realtime => {
                session.paused = last_input.elapsed() > stall;
                let mut result = None;
                if !session.paused {
                    result = session.tick()?;
                }
                ticks += 1;
                if ticks % render_every == 0 && !out.send(ServerBody::State(session.state())) {
                    break;
                }
                if let Some(r) = result {
                    if !emit_result(&mut out, r) {
                        break;
                    }
                }
            }
        }
    }
    drop(out);
    reader.abort();
    let _ = writer.await;
    Ok(())
}
