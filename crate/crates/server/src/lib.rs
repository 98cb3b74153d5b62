//! Network front end for the session engine.
//!
//! A single actor task owns the [`Session`](sve_core::Session) and advances
//! it at the configured tick rate. TCP and WebSocket connection tasks decode
//! frames and queue them for the actor; after every tick the actor fans the
//! snapshot and events out to each connection's bounded outbox.

mod actor;
mod net;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use anyhow::Context;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use sve_core::{NavMesh, SessionConfig};

pub use actor::{Mode, Summary};

#[derive(Debug)]
pub struct ServerOptions {
    pub config: SessionConfig,
    pub mesh: NavMesh,
    /// Length-prefixed TCP listener.
    pub tcp: Option<SocketAddr>,
    pub ws: Option<SocketAddr>,
    pub mode: Mode,
    /// Stop after this many session ticks.
    pub max_ticks: Option<u64>,
}

pub struct ServerHandle {
    tcp_addr: Option<SocketAddr>,
    ws_addr: Option<SocketAddr>,
    shutdown: watch::Sender<bool>,
    actor: JoinHandle<anyhow::Result<Summary>>,
}

impl ServerHandle {
    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Waits for the server to stop on its own (tick limit or replay end).
    pub async fn wait(self) -> anyhow::Result<Summary> {
        let summary = self.actor.await.context("simulation task panicked")?;
        let _ = self.shutdown.send(true);
        summary
    }

    pub async fn shutdown(self) -> anyhow::Result<Summary> {
        let _ = self.shutdown.send(true);
        self.actor.await.context("simulation task panicked")?
    }

    /// Runs until `signal` resolves or the server stops on its own.
    pub async fn run_until(mut self, signal: impl Future<Output = ()>) -> anyhow::Result<Summary> {
        tokio::select! {
            res = &mut self.actor => {
                let _ = self.shutdown.send(true);
                res.context("simulation task panicked")?
            }
            () = signal => self.shutdown().await,
        }
    }
}

/// Binds the listeners and starts the simulation.
pub async fn start(opts: ServerOptions) -> anyhow::Result<ServerHandle> {
    let actor = actor::Actor::new(opts.config, opts.mesh, opts.mode, opts.max_ticks)?;
    let (commands, rx) = mpsc::channel(4096);
    let (shutdown, shutdown_rx) = watch::channel(false);
    let ctx = net::Ctx {
        commands,
        next_conn: Arc::new(AtomicU64::new(1)),
    };

    let mut tcp_addr = None;
    if let Some(addr) = opts.tcp {
        let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        tcp_addr = Some(listener.local_addr()?);
        tokio::spawn(net::accept_tcp(listener, ctx.clone(), shutdown_rx.clone()));
    }
    let mut ws_addr = None;
    if let Some(addr) = opts.ws {
        let listener = TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        ws_addr = Some(listener.local_addr()?);
        tokio::spawn(net::accept_ws(listener, ctx.clone(), shutdown_rx.clone()));
    }
    drop(ctx);

    let actor = tokio::spawn(actor.run(rx, shutdown_rx));
    Ok(ServerHandle {
        tcp_addr,
        ws_addr,
        shutdown,
        actor,
    })
}
