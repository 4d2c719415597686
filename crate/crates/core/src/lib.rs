//! Federated bandit optimization toolkit.
//!
//! Two engines over embedded arm spaces (e.g. candidate prompts mapped
//! to fixed-dimension embeddings):
//!
//! - **score feedback**: federated linear UCB with event-triggered
//!   communication — agents pool ridge sufficient statistics through a
//!   central server and sync only when the log-determinant of the local
//!   information matrix has grown enough;
//! - **preference feedback**: federated linear dueling bandits — agents
//!   observe binary comparisons, fit a pairwise logistic model under
//!   dynamic regularization, and the server averages models and drift
//!   gradients every round.
//!
//! Around the engines: synthetic and cached-replay environments with
//! logistic (Bradley-Terry) preference sampling, a federation runtime
//! with interchangeable in-process and TCP transports, and trace/summary
//! serialization for experiment tooling.

#![forbid(unsafe_code)]

pub mod config;
pub mod engine;
pub mod env;
pub mod linalg;
pub mod pref;
pub mod rng;
pub mod runtime;
pub mod score;
pub mod trace;

pub use config::{Algo, ConfigError, EnvKind, ExperimentConfig, Transport};
pub use engine::{ArmId, EngineError};
pub use env::{AgentArmView, Arm, ArmTable, Embedding, EnvError, Environment};
pub use linalg::{
    inv_weighted_norm, log_det, rank_one_update, solve_psd, Cholesky, LinalgError, SymMatrix,
    Vector,
};
pub use pref::{
    pairwise_loss, pairwise_loss_gradient, select_duel, BetaSchedule, LocalObjective,
    PairwiseLogistic, PrefAgentState, PrefServerState, PrefUpload, PreferenceRecord,
};
pub use runtime::{
    connect_agent,
    envelope::{decode_envelope, encode_envelope, FrameError, MsgType, SyncEnvelope},
    ledger::{CommLedger, Counters},
    prepare, run, run_fedpob, run_fedpob_pref, run_prepared, serve, serve_listener,
    session::AgentOutcome,
    RoundEvent, RunOptions, RunOutput, RuntimeError,
};
pub use score::{select_arm, ScoreAgentState, ScoreServerState};
pub use trace::{
    read_trace_csv, write_summary_csv, write_trace_csv, AgentSummary, TraceError, TraceRecord,
};
