//! Federation runtime: orchestrates N agents and one server over an
//! in-process channel bus or a loopback/remote TCP transport, with
//! communication accounting. For a fixed config and seed the two
//! transports produce byte-identical traces; agent work may run on any
//! thread because every draw comes from a per-agent seeded stream and
//! all aggregation happens at barriers in agent-id order.

pub mod envelope;
pub mod ledger;
pub mod link;
pub mod session;
mod socket;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::config::{Algo, ConfigError, EnvKind, ExperimentConfig, Transport};
use crate::engine::{ArmId, EngineError};
use crate::env::{partition_arms, AgentArmView, ArmTable, EnvError, Environment};
use crate::linalg::Vector;
use crate::trace::TraceRecord;

use envelope::{FrameError, MsgType};
use ledger::{CommLedger, Counters};
use link::{channel_pair, Link, TcpLink};
use session::{AgentOutcome, PrefAgentTask, PrefServerTask, ScoreAgentTask, ScoreServerTask};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("round {round}: {source}")]
    EngineAt { round: u64, source: EngineError },
    #[error("round {round}: {source}")]
    EnvAt { round: u64, source: EnvError },
    #[error("agent {agent_id} failed: {source}")]
    AgentFailed {
        agent_id: u32,
        source: Box<RuntimeError>,
    },
    #[error("server failed: {source}")]
    ServerFailed { source: Box<RuntimeError> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("rejected by server: {0}")]
    HandshakeRejected(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("transport channel closed")]
    ChannelClosed,
    #[error("worker thread panicked: {0}")]
    WorkerPanic(String),
    #[error("setup: {0}")]
    Setup(String),
}

impl RuntimeError {
    /// Transport-teardown errors that usually shadow the root cause.
    fn is_secondary(&self) -> bool {
        matches!(
            self,
            RuntimeError::ChannelClosed | RuntimeError::Io(_) | RuntimeError::HandshakeRejected(_)
        )
    }
}

/// Observer events emitted by agents when capture is requested.
#[derive(Debug, Clone)]
pub enum RoundEvent {
    ModelRefreshed {
        round: u64,
        agent_id: u32,
        theta: Vector,
    },
    Observed {
        round: u64,
        agent_id: u32,
        arm_id: ArmId,
        score: f64,
    },
    Synced {
        round: u64,
        agent_id: u32,
    },
}

impl RoundEvent {
    fn sort_key(&self) -> (u64, u32, u8) {
        match self {
            RoundEvent::ModelRefreshed {
                round, agent_id, ..
            } => (*round, *agent_id, 0),
            RoundEvent::Observed {
                round, agent_id, ..
            } => (*round, *agent_id, 1),
            RoundEvent::Synced { round, agent_id } => (*round, *agent_id, 2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub capture_events: bool,
    pub handshake_timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            capture_events: false,
            handshake_timeout: Duration::from_secs(30),
        }
    }
}

/// Merged result of one full run.
#[derive(Debug)]
pub struct RunOutput {
    /// Rows sorted by `(round, agent_id)`.
    pub trace: Vec<TraceRecord>,
    pub ledger: CommLedger,
    /// Present when `capture_events` was set, sorted like the trace.
    pub events: Vec<RoundEvent>,
}

/// Builds the environment and the per-agent arm views from a validated
/// config.
pub fn prepare(
    config: &ExperimentConfig,
) -> Result<(Arc<Environment>, Vec<AgentArmView>), RuntimeError> {
    let environment = match config.env {
        EnvKind::Synthetic => {
            let k = config.k.expect("validated config has k");
            let seed = config.theta_star_seed.expect("validated config has seed");
            let table = ArmTable::synthetic(config.d, k, seed);
            Environment::synthetic(table, config.noise_sigma)
        }
        EnvKind::Cached => {
            let path = config
                .arm_table_path
                .as_ref()
                .expect("validated config has path");
            let table = ArmTable::load_csv(path)?;
            if table.dim() != config.d {
                return Err(RuntimeError::Setup(format!(
                    "config d={} but arm table {} has d={}",
                    config.d,
                    path.display(),
                    table.dim()
                )));
            }
            Environment::cached(table)
        }
    };
    let views = partition_arms(
        environment.table(),
        config.n_agents,
        config.shared_fraction,
        config.master_seed,
    )?;
    Ok((Arc::new(environment), views))
}

/// Prepares and runs the experiment the config describes.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput, RuntimeError> {
    let (env, views) = prepare(config)?;
    run_prepared(config, env, &views, opts)
}

/// Runs against an existing environment/view split.
pub fn run_prepared(
    config: &ExperimentConfig,
    env: Arc<Environment>,
    views: &[AgentArmView],
    opts: &RunOptions,
) -> Result<RunOutput, RuntimeError> {
    match config.algo {
        Algo::Fedpob => run_fedpob(config, env, views, opts),
        Algo::FedpobPref => run_fedpob_pref(config, env, views, opts),
    }
}

fn view_for(views: &[AgentArmView], agent_id: u32) -> Result<AgentArmView, RuntimeError> {
    views
        .iter()
        .find(|v| v.agent_id == agent_id)
        .cloned()
        .ok_or_else(|| RuntimeError::Setup(format!("no arm view for agent {agent_id}")))
}

fn score_task(
    config: &ExperimentConfig,
    env: Arc<Environment>,
    view: AgentArmView,
    capture_events: bool,
) -> ScoreAgentTask {
    ScoreAgentTask {
        agent_id: view.agent_id,
        dim: config.d,
        lambda: config.lambda,
        nu: config.nu,
        comm_threshold: config.comm_threshold,
        rounds: config.rounds,
        master_seed: config.master_seed,
        env,
        view,
        capture_events,
    }
}

fn pref_task(
    config: &ExperimentConfig,
    env: Arc<Environment>,
    view: AgentArmView,
    capture_events: bool,
) -> PrefAgentTask {
    PrefAgentTask {
        agent_id: view.agent_id,
        dim: config.d,
        lambda: config.lambda,
        delta: config.delta,
        lr: config.lr,
        local_iters: config.local_iters,
        n_agents: config.n_agents,
        rounds: config.rounds,
        master_seed: config.master_seed,
        env,
        view,
        capture_events,
    }
}

/// Event-triggered federated LinUCB over the configured transport.
pub fn run_fedpob(
    config: &ExperimentConfig,
    env: Arc<Environment>,
    views: &[AgentArmView],
    opts: &RunOptions,
) -> Result<RunOutput, RuntimeError> {
    debug_assert_eq!(config.algo, Algo::Fedpob);
    let agent_jobs: Vec<(u32, AgentJob)> = (0..config.n_agents)
        .map(|id| -> Result<(u32, AgentJob), RuntimeError> {
            let task = score_task(
                config,
                env.clone(),
                view_for(views, id)?,
                opts.capture_events,
            );
            Ok((
                id,
                Box::new(move |link: &mut dyn Link| task.run(link)) as AgentJob,
            ))
        })
        .collect::<Result<_, _>>()?;
    let server_task = ScoreServerTask {
        dim: config.d,
        rounds: config.rounds,
    };
    let server: ServerJob = Box::new(move |links, counters| server_task.run(links, counters));
    execute(config, agent_jobs, server, opts)
}

/// Federated dueling bandits (upload every round) over the configured
/// transport.
pub fn run_fedpob_pref(
    config: &ExperimentConfig,
    env: Arc<Environment>,
    views: &[AgentArmView],
    opts: &RunOptions,
) -> Result<RunOutput, RuntimeError> {
    debug_assert_eq!(config.algo, Algo::FedpobPref);
    let agent_jobs: Vec<(u32, AgentJob)> = (0..config.n_agents)
        .map(|id| -> Result<(u32, AgentJob), RuntimeError> {
            let task = pref_task(
                config,
                env.clone(),
                view_for(views, id)?,
                opts.capture_events,
            );
            Ok((
                id,
                Box::new(move |link: &mut dyn Link| task.run(link)) as AgentJob,
            ))
        })
        .collect::<Result<_, _>>()?;
    let server_task = PrefServerTask {
        dim: config.d,
        lambda: config.lambda,
        rounds: config.rounds,
    };
    let server: ServerJob = Box::new(move |links, counters| server_task.run(links, counters));
    execute(config, agent_jobs, server, opts)
}

type AgentJob = Box<dyn FnOnce(&mut dyn Link) -> Result<AgentOutcome, RuntimeError> + Send>;
type ServerJob =
    Box<dyn FnOnce(&mut [(u32, Box<dyn Link>)], Counters) -> Result<Counters, RuntimeError> + Send>;

fn execute(
    config: &ExperimentConfig,
    agent_jobs: Vec<(u32, AgentJob)>,
    server: ServerJob,
    opts: &RunOptions,
) -> Result<RunOutput, RuntimeError> {
    match config.transport {
        Transport::Inproc => execute_inproc(config, agent_jobs, server),
        Transport::Socket => execute_socket(config, agent_jobs, server, opts),
    }
}

/// Consumes one hello per link (ids are fixed by construction in-process,
/// but the message still flows so both transports count identically).
fn read_hellos(links: &mut [(u32, Box<dyn Link>)], dim: usize) -> Result<Counters, RuntimeError> {
    let mut counters = Counters::default();
    for (id, link) in links.iter_mut() {
        let hello = link.recv()?;
        counters.messages_received += 1;
        if hello.msg_type != MsgType::Hello || hello.agent_id != *id || hello.d as usize != dim {
            return Err(RuntimeError::Protocol(format!(
                "bad hello from agent {id}: {hello:?}"
            )));
        }
    }
    Ok(counters)
}

fn execute_inproc(
    config: &ExperimentConfig,
    agent_jobs: Vec<(u32, AgentJob)>,
    server: ServerJob,
) -> Result<RunOutput, RuntimeError> {
    let dim = config.d;
    let mut server_links: Vec<(u32, Box<dyn Link>)> = Vec::with_capacity(agent_jobs.len());
    let mut agent_sides = Vec::with_capacity(agent_jobs.len());
    for (id, job) in agent_jobs {
        let (agent_side, server_side) = channel_pair();
        server_links.push((id, Box::new(server_side)));
        agent_sides.push((id, job, agent_side));
    }

    let server_job = move |links: &mut [(u32, Box<dyn Link>)]| -> Result<Counters, RuntimeError> {
        let counters = read_hellos(links, dim)?;
        server(links, counters)
    };

    std::thread::scope(|scope| {
        let server_handle = scope.spawn(move || {
            let mut links = server_links;
            server_job(&mut links)
        });
        let agent_handles: Vec<_> = agent_sides
            .into_iter()
            .map(|(id, job, mut link)| (id, scope.spawn(move || job(&mut link))))
            .collect();

        let agent_results: Vec<(u32, Result<AgentOutcome, RuntimeError>)> = agent_handles
            .into_iter()
            .map(|(id, h)| (id, h.join().unwrap_or_else(|p| Err(panic_error(p)))))
            .collect();
        let server_result = server_handle.join().unwrap_or_else(|p| Err(panic_error(p)));
        merge_results(agent_results, server_result)
    })
}

fn execute_socket(
    config: &ExperimentConfig,
    agent_jobs: Vec<(u32, AgentJob)>,
    server: ServerJob,
    opts: &RunOptions,
) -> Result<RunOutput, RuntimeError> {
    let listener = std::net::TcpListener::bind(("127.0.0.1", 0))?;
    let addr = listener.local_addr()?;
    let n_agents = config.n_agents;
    let dim = config.d;
    let timeout = opts.handshake_timeout;

    std::thread::scope(|scope| {
        let server_handle = scope.spawn(move || -> Result<Counters, RuntimeError> {
            let setup = socket::accept_agents(&listener, n_agents, dim, timeout)?;
            let mut links = setup.links;
            server(&mut links, setup.counters)
        });
        let agent_handles: Vec<_> = agent_jobs
            .into_iter()
            .map(|(id, job)| {
                let handle = scope.spawn(move || -> Result<AgentOutcome, RuntimeError> {
                    let stream = socket::connect_with_retry(&addr.to_string(), timeout)?;
                    let mut link = TcpLink::new(stream)?;
                    job(&mut link)
                });
                (id, handle)
            })
            .collect();

        let agent_results: Vec<(u32, Result<AgentOutcome, RuntimeError>)> = agent_handles
            .into_iter()
            .map(|(id, h)| (id, h.join().unwrap_or_else(|p| Err(panic_error(p)))))
            .collect();
        let server_result = server_handle.join().unwrap_or_else(|p| Err(panic_error(p)));
        merge_results(agent_results, server_result)
    })
}

fn panic_error(payload: Box<dyn std::any::Any + Send>) -> RuntimeError {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    RuntimeError::WorkerPanic(msg)
}

/// Prefers root-cause errors over the secondary transport teardown they
/// trigger on the other side of the pipe.
fn merge_results(
    agent_results: Vec<(u32, Result<AgentOutcome, RuntimeError>)>,
    server_result: Result<Counters, RuntimeError>,
) -> Result<RunOutput, RuntimeError> {
    let mut primary: Option<RuntimeError> = None;
    let mut secondary: Option<RuntimeError> = None;
    let mut outcomes = Vec::with_capacity(agent_results.len());
    for (agent_id, result) in agent_results {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(source) => {
                let wrapped = RuntimeError::AgentFailed {
                    agent_id,
                    source: Box::new(source),
                };
                let slot = match &wrapped {
                    RuntimeError::AgentFailed { source, .. } if source.is_secondary() => {
                        &mut secondary
                    }
                    _ => &mut primary,
                };
                if slot.is_none() {
                    *slot = Some(wrapped);
                }
            }
        }
    }
    let server_counters = match server_result {
        Ok(counters) => counters,
        Err(source) => {
            let wrapped = RuntimeError::ServerFailed {
                source: Box::new(source),
            };
            let slot = match &wrapped {
                RuntimeError::ServerFailed { source } if source.is_secondary() => &mut secondary,
                _ => &mut primary,
            };
            if slot.is_none() {
                *slot = Some(wrapped);
            }
            Counters::default()
        }
    };
    if let Some(err) = primary.or(secondary) {
        return Err(err);
    }

    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut ledger = CommLedger::default();
    for outcome in outcomes {
        trace.extend(outcome.rows);
        events.extend(outcome.events);
        ledger.agents.insert(outcome.agent_id, outcome.counters);
    }
    ledger.server = server_counters;
    trace.sort_by_key(|r| (r.round, r.agent_id));
    events.sort_by_key(|e| e.sort_key());
    Ok(RunOutput {
        trace,
        ledger,
        events,
    })
}

/// Runs the central server on `bind` until the configured number of
/// rounds completes. Blocks for the whole run.
pub fn serve(
    bind: &str,
    config: &ExperimentConfig,
    handshake_timeout: Duration,
) -> Result<Counters, RuntimeError> {
    let listener = std::net::TcpListener::bind(bind)?;
    serve_listener(listener, config, handshake_timeout)
}

/// [`serve`] on an already-bound listener (useful for ephemeral ports).
pub fn serve_listener(
    listener: std::net::TcpListener,
    config: &ExperimentConfig,
    handshake_timeout: Duration,
) -> Result<Counters, RuntimeError> {
    let setup = socket::accept_agents(&listener, config.n_agents, config.d, handshake_timeout)?;
    let mut links = setup.links;
    match config.algo {
        Algo::Fedpob => ScoreServerTask {
            dim: config.d,
            rounds: config.rounds,
        }
        .run(&mut links, setup.counters),
        Algo::FedpobPref => PrefServerTask {
            dim: config.d,
            lambda: config.lambda,
            rounds: config.rounds,
        }
        .run(&mut links, setup.counters),
    }
}

/// Runs one agent against a remote server. The environment and views
/// are derived from the same config on every participant, so all
/// parties agree on the arm spaces without exchanging them.
pub fn connect_agent(
    addr: &str,
    agent_id: u32,
    config: &ExperimentConfig,
    env: Arc<Environment>,
    views: &[AgentArmView],
    opts: &RunOptions,
) -> Result<AgentOutcome, RuntimeError> {
    let stream = socket::connect_with_retry(addr, opts.handshake_timeout)?;
    let mut link = TcpLink::new(stream)?;
    let view = view_for(views, agent_id)?;
    match config.algo {
        Algo::Fedpob => score_task(config, env, view, opts.capture_events).run(&mut link),
        Algo::FedpobPref => pref_task(config, env, view, opts.capture_events).run(&mut link),
    }
}
