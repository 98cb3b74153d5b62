//! Connection handlers. They only parse frames and forward them to the actor.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, warn};

use sve_core::session::{decode_body, decode_message, FrameBuffer, WireError, WireMessage};

use crate::actor::{Command, ConnId, Frame, OUTBOX_DEPTH};

#[derive(Clone)]
pub struct Ctx {
    pub commands: mpsc::Sender<Command>,
    pub next_conn: Arc<AtomicU64>,
}

impl Ctx {
    async fn register(&self) -> Option<(ConnId, mpsc::Receiver<Frame>)> {
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let (outbox, rx) = mpsc::channel(OUTBOX_DEPTH);
        self.commands.send(Command::Connect { conn, outbox }).await.ok()?;
        Some((conn, rx))
    }

    async fn forward(&self, conn: ConnId, decoded: Result<WireMessage, WireError>) -> bool {
        match decoded {
            Ok(msg) => self.commands.send(Command::Message { conn, msg }).await.is_ok(),
            Err(e) => {
                debug!(conn, "skipping frame: {e}");
                true
            }
        }
    }
}

pub async fn accept_tcp(listener: TcpListener, ctx: Ctx, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = shutdown.changed() => return,
            res = listener.accept() => match res {
                Ok((stream, peer)) => {
                    debug!(%peer, "tcp connection");
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(serve_tcp(stream, ctx.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
        }
    }
}

async fn serve_tcp(stream: TcpStream, ctx: Ctx) {
    let Some((conn, mut outbox)) = ctx.register().await else {
        return;
    };
    let (mut reader, mut writer) = stream.into_split();
    let read = async {
        let mut frames = FrameBuffer::new();
        let mut buf = vec![0u8; 16 * 1024];
        loop {
            let n = match reader.read(&mut buf).await {
                Ok(0) | Err(_) => return,
                Ok(n) => n,
            };
            frames.extend(&buf[..n]);
            loop {
                match frames.next_body() {
                    Ok(Some(body)) => {
                        if !ctx.forward(conn, decode_body(&body)).await {
                            return;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        // The stream cannot be resynchronized after a bad length.
                        warn!(conn, "closing connection: {e}");
                        return;
                    }
                }
            }
        }
    };
    let write = async {
        while let Some(frame) = outbox.recv().await {
            if writer.write_all(&frame).await.is_err() {
                return;
            }
        }
        let _ = writer.shutdown().await;
    };
    tokio::select! {
        _ = read => {}
        _ = write => {}
    }
    let _ = ctx.commands.send(Command::Disconnect { conn }).await;
}

pub async fn accept_ws(listener: TcpListener, ctx: Ctx, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = shutdown.changed() => return,
            res = listener.accept() => match res {
                Ok((stream, peer)) => {
                    debug!(%peer, "websocket connection");
                    tokio::spawn(serve_ws(stream, ctx.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
        }
    }
}

/// One binary message carries one length-prefixed frame. Text messages are
/// taken as a bare JSON body, which is easier to produce from a browser.
async fn serve_ws(stream: TcpStream, ctx: Ctx) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("websocket handshake failed: {e}");
            return;
        }
    };
    let Some((conn, mut outbox)) = ctx.register().await else {
        return;
    };
    let (mut sink, mut source) = ws.split();
    let read = async {
        while let Some(Ok(msg)) = source.next().await {
            let decoded = match msg {
                Message::Binary(bytes) => decode_message(&bytes),
                Message::Text(text) => decode_body(text.as_bytes()),
                Message::Close(_) => return,
                _ => continue,
            };
            if !ctx.forward(conn, decoded).await {
                return;
            }
        }
    };
    let write = async {
        while let Some(frame) = outbox.recv().await {
            if sink.send(Message::Binary(frame.to_vec())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    };
    tokio::select! {
        _ = read => {}
        _ = write => {}
    }
    let _ = ctx.commands.send(Command::Disconnect { conn }).await;
}
