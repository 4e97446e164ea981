//! Websocket transport for [`Connection`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use entrain_core::arena::{ArenaConfig, Models};
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::protocol::{Connection, Disposition, ServerMessage};

pub const DEFAULT_BIND: &str = "127.0.0.1:7878";

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub arena: ArenaConfig,
    pub heartbeat: Duration,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            arena: ArenaConfig::default(),
            heartbeat: Duration::from_secs(5),
        }
    }
}

/// Accepts connections until the listener fails. Models are shared read-only;
/// every connection gets its own task and session state.
pub async fn serve(listener: TcpListener, models: Arc<Models>, cfg: ServeConfig) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "listening");
    loop {
        let (stream, peer) = listener.accept().await?;
        let models = Arc::clone(&models);
        let cfg = cfg.clone();
        tokio::spawn(async move {
            if let Err(e) = handle(stream, peer, models, cfg).await {
                debug!(%peer, error = %e, "connection ended with error");
            }
        });
    }
}

async fn handle(
    stream: TcpStream,
    peer: SocketAddr,
    models: Arc<Models>,
    cfg: ServeConfig,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    info!(%peer, "connected");
    let (mut tx, mut rx) = ws.split();
    let mut conn = Connection::new(models, cfg.arena);
    let mut hb = tokio::time::interval_at(tokio::time::Instant::now() + cfg.heartbeat, cfg.heartbeat);
    loop {
        tokio::select! {
            msg = rx.next() => {
                let Some(msg) = msg else { break };
                match msg? {
                    Message::Text(text) => {
                        let (reply, disposition) = conn.handle(text.as_str());
                        if let ServerMessage::Error(e) = &reply {
                            warn!(%peer, error = %e.error, "rejected message");
                        }
                        tx.send(Message::text(reply.to_text())).await?;
                        if disposition == Disposition::Close {
                            tx.send(Message::Close(None)).await?;
                            break;
                        }
                    }
                    Message::Binary(_) => {
                        let reply = ServerMessage::Error(crate::protocol::ErrorFrame::new(
                            "malformed",
                            "binary frames are not supported",
                        ));
                        tx.send(Message::text(reply.to_text())).await?;
                    }
                    Message::Close(_) => break,
                    _ => {}
                }
            }
            _ = hb.tick() => {
                let beat = ServerMessage::Heartbeat { hb: conn.ticks() };
                tx.send(Message::text(beat.to_text())).await?;
            }
        }
    }
    info!(%peer, ticks = conn.ticks(), "disconnected");
    Ok(())
}
