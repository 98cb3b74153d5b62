use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use sve_core::harness::{self, canonical_snapshots, ConfigFile, HarnessError, Trace, TechniqueBundle};
use sve_core::locomotion::LocomotionMode;
use sve_core::navmesh::NavMeshError;
use sve_core::session::{AvatarStyle, Technique};
use sve_core::{NavMesh, SessionConfig, TransitionKind};
use sve_server::{Mode, ServerOptions};

#[derive(Parser)]
#[command(name = "sve", version, about = "Smart avatar session server and scenario harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a session server.
    Serve(ServeArgs),
    /// Replay a trace and print a summary of the final state.
    Replay {
        trace: PathBuf,
        /// Also write the canonical snapshot stream here.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Run a built-in scenario and print its metrics.
    Scenario(ScenarioArgs),
    /// Replay a trace and print its metrics.
    Metrics {
        trace: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Check a mesh file.
    ValidateMesh {
        file: PathBuf,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Args)]
struct Output {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Tuning {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config file.
    #[arg(long)]
    tick_rate: Option<f64>,
}

impl Tuning {
    fn load(&self) -> Result<(ConfigFile, SessionConfig), Failure> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        if let Some(rate) = self.tick_rate {
            file.session.tick_rate = rate;
        }
        let cfg = file.session_config()?;
        Ok((file, cfg))
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7777")]
    listen: SocketAddr,
    /// WebSocket listener; one binary message per frame.
    #[arg(long)]
    ws_listen: Option<SocketAddr>,
    /// Mesh file; overrides the config file's mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
    /// Drive the session from a trace instead of network input.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Record the session to a trace on exit.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Stop after this many ticks.
    #[arg(long)]
    ticks: Option<u64>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// figure_eight, fruit_course or straight_joystick.
    name: String,
    #[arg(long, default_value = "smooth_joystick", value_parser = snake_enum::<LocomotionMode>)]
    locomotion: LocomotionMode,
    #[arg(long, default_value = "smart", value_parser = snake_enum::<AvatarStyle>)]
    avatar: AvatarStyle,
    #[arg(long, default_value = "walking", value_parser = snake_enum::<TransitionKind>)]
    transition: TransitionKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-range of head tracking noise, meters.
    #[arg(long, default_value_t = 0.0)]
    head_jitter: f64,
    #[command(flatten)]
    tuning: Tuning,
    /// Save the generated trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
}

/// Parses a snake_case enum name the same way the JSON files spell it.
fn snake_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io(_) => Self { code: 1, error: e.into() },
            _ => Self::invalid(e),
        }
    }
}

impl From<NavMeshError> for Failure {
    fn from(e: NavMeshError) -> Self {
        match e {
            NavMeshError::Io(_) => Self { code: 1, error: e.into() },
            _ => Self::invalid(e),
        }
    }
}

fn emit(value: &impl Serialize, out: &Output) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(value).context("serializing report")?;
    match &out.out {
        Some(path) => std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn load_trace(path: &Path) -> Result<Trace, Failure> {
    Ok(Trace::load(path)?)
}

#[derive(Serialize)]
struct ReplaySummary {
    ticks: u64,
    users: usize,
    snapshot_bytes: usize,
    final_snapshot: sve_core::SessionSnapshot,
}

#[derive(Serialize)]
struct MeshReport {
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vertices: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    triangles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<[[f64; 2]; 2]>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Replay { trace, snapshots, out } => {
            let trace = load_trace(&trace)?;
            let outputs = harness::replay_trace(&trace)?;
            let stream = canonical_snapshots(&outputs);
            if let Some(path) = snapshots {
                std::fs::write(&path, &stream).with_context(|| format!("writing {}", path.display()))?;
            }
            let final_snapshot = outputs.last().map(|o| o.snapshot.clone()).unwrap_or_default();
            emit(
                &ReplaySummary {
                    ticks: outputs.len() as u64,
                    users: final_snapshot.users.len(),
                    snapshot_bytes: stream.len(),
                    final_snapshot,
                },
                &out,
            )
        }
        Command::Scenario(args) => {
            let scenario = harness::scenarios::by_name(&args.name)
                .ok_or_else(|| Failure::invalid(anyhow::anyhow!("unknown scenario {:?}", args.name)))?;
            let (_, config) = args.tuning.load()?;
            let bundle = TechniqueBundle {
                technique: Technique {
                    locomotion: args.locomotion,
                    avatar: args.avatar,
                    transition: args.transition,
                },
                config,
                head_jitter: args.head_jitter,
            };
            let trace = harness::scenario_trace(&scenario, &bundle, args.seed)?;
            if let Some(path) = &args.trace {
                trace.save(path)?;
            }
            let (report, _) = harness::run_trace(&trace)?;
            emit(&report, &args.out)
        }
        Command::Metrics { trace, out } => {
            let trace = load_trace(&trace)?;
            let (report, _) = harness::run_trace(&trace)?;
            emit(&report, &out)
        }
        Command::ValidateMesh { file, out } => match NavMesh::load(&file) {
            Ok(mesh) => {
                let (lo, hi) = mesh.bounds();
                emit(
                    &MeshReport {
                        valid: true,
                        error: None,
                        vertices: Some(mesh.vertices().len()),
                        triangles: Some(mesh.triangles().len()),
                        bounds: Some([[lo.x, lo.y], [hi.x, hi.y]]),
                    },
                    &out,
                )
            }
            Err(e) => {
                let failure = Failure::from(e);
                if failure.code == 2 {
                    emit(
                        &MeshReport {
                            valid: false,
                            error: Some(failure.error.to_string()),
                            vertices: None,
                            triangles: None,
                            bounds: None,
                        },
                        &out,
                    )?;
                }
                Err(failure)
            }
        },
    }
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let (file, mut config) = args.tuning.load()?;
    let mode = match (&args.replay, &args.record) {
        (Some(path), _) => Mode::Replay(load_trace(path)?),
        (None, Some(path)) => Mode::Record(path.clone()),
        (None, None) => Mode::Live,
    };
    let mesh = match (&mode, args.mesh.as_ref().or(file.session.mesh.as_ref())) {
        (Mode::Replay(trace), _) => {
            config = trace.header.config.clone();
            trace.header.mesh.clone()
        }
        (_, Some(path)) => NavMesh::load(path)?,
        (_, None) => harness::default_mesh(),
    };
    let opts = ServerOptions {
        config,
        mesh,
        tcp: Some(args.listen),
        ws: args.ws_listen,
        mode,
        max_ticks: args.ticks,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async move {
        let handle = sve_server::start(opts).await?;
        if let Some(addr) = handle.tcp_addr() {
            tracing::info!(%addr, "tcp listening");
        }
        if let Some(addr) = handle.ws_addr() {
            tracing::info!(%addr, "websocket listening");
        }
        let summary = handle
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        tracing::info!(ticks = summary.ticks, "stopped");
        anyhow::Ok(())
    })?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
