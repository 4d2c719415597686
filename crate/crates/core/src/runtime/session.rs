//! Round/barrier session loops shared by both transports.
//!
//! One agent loop and one server loop per algorithm; the transports
//! differ only in how the [`Link`]s are built. All agents advance the
//! global round index in lockstep. For the score engine the server
//! starts a communication round as soon as any agent's determinant
//! trigger fires, and every agent then uploads and resets, including
//! those with empty accumulators. For the preference engine every round
//! is a communication round.

use std::sync::Arc;

use crate::engine::ArmId;
use crate::env::{AgentArmView, Environment};
use crate::linalg::{SymMatrix, Vector};
use crate::pref::{select_duel, BetaSchedule, PrefAgentState, PrefServerState, PrefUpload};
use crate::rng;
use crate::score::{select_arm, ScoreAgentState, ScoreServerState};
use crate::trace::TraceRecord;

use super::envelope::{MsgType, SyncEnvelope};
use super::ledger::Counters;
use super::link::Link;
use super::{RoundEvent, RuntimeError};

/// What one agent brings home from a run.
#[derive(Debug)]
pub struct AgentOutcome {
    pub agent_id: u32,
    pub rows: Vec<TraceRecord>,
    pub counters: Counters,
    pub events: Vec<RoundEvent>,
}

fn send_counted(
    link: &mut dyn Link,
    counters: &mut Counters,
    env: SyncEnvelope,
) -> Result<(), RuntimeError> {
    counters.messages_sent += 1;
    counters.bytes_sent += env.data_payload_bytes();
    link.send(env)
}

fn recv_counted(
    link: &mut dyn Link,
    counters: &mut Counters,
    expected: MsgType,
) -> Result<SyncEnvelope, RuntimeError> {
    let env = link.recv()?;
    counters.messages_received += 1;
    counters.bytes_received += env.data_payload_bytes();
    if env.msg_type == MsgType::Bye && expected != MsgType::Bye {
        return Err(RuntimeError::HandshakeRejected(format!(
            "peer closed the session while {expected:?} was expected"
        )));
    }
    if env.msg_type != expected {
        return Err(RuntimeError::Protocol(format!(
            "expected {expected:?}, received {:?} (round {})",
            env.msg_type, env.round
        )));
    }
    Ok(env)
}

/// Everything one score-feedback agent needs to run its rounds.
pub struct ScoreAgentTask {
    pub agent_id: u32,
    pub dim: usize,
    pub lambda: f64,
    pub nu: f64,
    pub comm_threshold: f64,
    pub rounds: u64,
    pub master_seed: u64,
    pub env: Arc<Environment>,
    pub view: AgentArmView,
    pub capture_events: bool,
}

impl ScoreAgentTask {
    pub fn run(self, link: &mut dyn Link) -> Result<AgentOutcome, RuntimeError> {
        let agent_id = self.agent_id;
        let mut counters = Counters::default();
        let mut events = Vec::new();
        let mut rows = Vec::with_capacity(self.rounds as usize);

        send_counted(link, &mut counters, SyncEnvelope::hello(agent_id, self.dim))?;

        let mut state = ScoreAgentState::new(agent_id, self.dim, self.lambda);
        let mut noise = rng::stream(self.master_seed, agent_id, "score-noise");
        let arms: Vec<(ArmId, &Vector)> = self.view.arms(self.env.table());
        let mut best = f64::NEG_INFINITY;

        for t in 1..=self.rounds {
            let engine_at = |source| RuntimeError::EngineAt { round: t, source };
            let env_at = |source| RuntimeError::EnvAt { round: t, source };

            let (info, theta) = state.refresh_model().map_err(engine_at)?;
            if self.capture_events {
                events.push(RoundEvent::ModelRefreshed {
                    round: t,
                    agent_id,
                    theta: theta.clone(),
                });
            }

            let chosen = select_arm(&theta, &info, &arms, self.nu).map_err(engine_at)?;
            let score = self
                .env
                .score_feedback(chosen, &mut noise)
                .map_err(env_at)?;
            let embedding = &self.env.table().arm(chosen).map_err(env_at)?.embedding;
            state.record_score(embedding, score).map_err(engine_at)?;
            if self.capture_events {
                events.push(RoundEvent::Observed {
                    round: t,
                    agent_id,
                    arm_id: chosen,
                    score,
                });
            }

            let requesting = state.should_sync(t, self.comm_threshold);
            send_counted(
                link,
                &mut counters,
                SyncEnvelope::sync_request(agent_id, t, self.dim, requesting),
            )?;
            let decision = recv_counted(link, &mut counters, MsgType::SyncRequest)?;
            if decision.flag() {
                let (gram, moment) = state.extract_delta();
                send_counted(
                    link,
                    &mut counters,
                    SyncEnvelope::delta_upload(agent_id, t, &gram, &moment),
                )?;
                counters.comm_rounds += 1;
                let broadcast = recv_counted(link, &mut counters, MsgType::SyncBroadcast)?;
                let (pooled_gram, pooled_moment) = broadcast.unpack_gram_vec()?;
                state
                    .apply_sync(pooled_gram, pooled_moment, t)
                    .map_err(engine_at)?;
                if self.capture_events {
                    events.push(RoundEvent::Synced { round: t, agent_id });
                }
            }

            best = best.max(score);
            rows.push(TraceRecord {
                round: t,
                agent_id,
                arm_id: chosen,
                arm_id_2: None,
                outcome: None,
                feedback: score,
                best_score_so_far: best,
                instant_regret: self
                    .env
                    .instant_regret(&self.view, chosen)
                    .map_err(env_at)?,
                cum_payload_bytes: counters.bytes_sent + counters.bytes_received,
            });
        }

        send_counted(
            link,
            &mut counters,
            SyncEnvelope::bye(agent_id, self.rounds, self.dim),
        )?;
        Ok(AgentOutcome {
            agent_id,
            rows,
            counters,
            events,
        })
    }
}

/// Score-feedback server: one coordination exchange per round, plus an
/// aggregate/broadcast cycle whenever any trigger fired.
pub struct ScoreServerTask {
    pub dim: usize,
    pub rounds: u64,
}

impl ScoreServerTask {
    pub fn run(
        self,
        links: &mut [(u32, Box<dyn Link>)],
        mut counters: Counters,
    ) -> Result<Counters, RuntimeError> {
        let agent_ids: Vec<u32> = links.iter().map(|(id, _)| *id).collect();
        let mut server = ScoreServerState::new(self.dim, agent_ids);

        for t in 1..=self.rounds {
            let mut any = false;
            for (id, link) in links.iter_mut() {
                let req = recv_counted(link.as_mut(), &mut counters, MsgType::SyncRequest)?;
                if req.agent_id != *id || req.round != t {
                    return Err(RuntimeError::Protocol(format!(
                        "agent {} sent request labeled (agent {}, round {}) during round {t}",
                        id, req.agent_id, req.round
                    )));
                }
                any |= req.flag();
            }
            for (id, link) in links.iter_mut() {
                send_counted(
                    link.as_mut(),
                    &mut counters,
                    SyncEnvelope::sync_request(*id, t, self.dim, any),
                )?;
            }
            if !any {
                continue;
            }

            let mut deltas = Vec::with_capacity(links.len());
            for (id, link) in links.iter_mut() {
                let upload = recv_counted(link.as_mut(), &mut counters, MsgType::DeltaUpload)?;
                let (gram, moment) = upload.unpack_gram_vec()?;
                deltas.push((*id, gram, moment));
            }
            counters.comm_rounds += 1;
            let (pooled_gram, pooled_moment) = server
                .aggregate(&deltas)
                .map_err(|source| RuntimeError::EngineAt { round: t, source })?;
            for (id, link) in links.iter_mut() {
                send_counted(
                    link.as_mut(),
                    &mut counters,
                    SyncEnvelope::sync_broadcast(*id, t, &pooled_gram, &pooled_moment),
                )?;
            }
        }

        for (_, link) in links.iter_mut() {
            recv_counted(link.as_mut(), &mut counters, MsgType::Bye)?;
        }
        Ok(counters)
    }
}

/// Shared zero-mean init for the global preference model; every agent
/// derives the identical vector from the master seed.
pub fn initial_pref_model(master_seed: u64, dim: usize) -> Vector {
    use rand_distr::StandardNormal;
    let mut gen = rng::stream(master_seed, rng::GLOBAL_SCOPE, "theta0");
    Vector::from_vec(
        (0..dim)
            .map(|_| 0.01 * rand::Rng::sample::<f64, _>(&mut gen, StandardNormal))
            .collect(),
    )
}

/// Everything one preference-feedback agent needs to run its rounds.
pub struct PrefAgentTask {
    pub agent_id: u32,
    pub dim: usize,
    pub lambda: f64,
    pub delta: f64,
    pub lr: f64,
    pub local_iters: u32,
    pub n_agents: u32,
    pub rounds: u64,
    pub master_seed: u64,
    pub env: Arc<Environment>,
    pub view: AgentArmView,
    pub capture_events: bool,
}

impl PrefAgentTask {
    pub fn run(self, link: &mut dyn Link) -> Result<AgentOutcome, RuntimeError> {
        let agent_id = self.agent_id;
        let mut counters = Counters::default();
        let mut events = Vec::new();
        let mut rows = Vec::with_capacity(self.rounds as usize);

        send_counted(link, &mut counters, SyncEnvelope::hello(agent_id, self.dim))?;

        let initial = initial_pref_model(self.master_seed, self.dim);
        let mut state = PrefAgentState::new(agent_id, self.dim, self.lambda, initial.clone());
        let mut btl = rng::stream(self.master_seed, agent_id, "btl");
        let schedule = BetaSchedule {
            delta: self.delta,
            dim: self.dim,
            lambda: self.lambda,
            kappa_mu: self.n_agents as f64,
        };
        let arms: Vec<(ArmId, &Vector)> = self.view.arms(self.env.table());

        let mut global_model = initial;
        let mut exploration_gram = SymMatrix::scaled_identity(self.dim, self.lambda);
        let mut best = f64::NEG_INFINITY;

        for t in 1..=self.rounds {
            let engine_at = |source| RuntimeError::EngineAt { round: t, source };
            let env_at = |source| RuntimeError::EnvAt { round: t, source };

            let beta = schedule.beta_at(t);
            let (exploit, explore) =
                select_duel(&global_model, &exploration_gram, &arms, beta).map_err(engine_at)?;
            let outcome = self
                .env
                .preference_feedback(exploit, explore, &mut btl)
                .map_err(env_at)?;
            let u1 = self
                .env
                .table()
                .arm(exploit)
                .map_err(env_at)?
                .embedding
                .clone();
            let u2 = self
                .env
                .table()
                .arm(explore)
                .map_err(env_at)?
                .embedding
                .clone();
            state
                .accumulate_pair(&u1, &u2, outcome)
                .map_err(engine_at)?;
            state
                .local_update(&global_model, self.lr, self.local_iters)
                .map_err(engine_at)?;
            state.drift_update(&global_model);

            send_counted(
                link,
                &mut counters,
                SyncEnvelope::pref_upload(
                    agent_id,
                    t,
                    state.local_model(),
                    state.drift_grad(),
                    state.fresh_pair_gram(),
                ),
            )?;
            counters.comm_rounds += 1;
            let broadcast = recv_counted(link, &mut counters, MsgType::ModelBroadcast)?;
            let (model, pair_gram) = broadcast.unpack_model_broadcast()?;
            global_model = model;
            exploration_gram = SymMatrix::scaled_identity(self.dim, self.lambda);
            exploration_gram
                .add_assign(&pair_gram)
                .map_err(|e| engine_at(e.into()))?;
            if self.capture_events {
                events.push(RoundEvent::ModelRefreshed {
                    round: t,
                    agent_id,
                    theta: global_model.clone(),
                });
            }

            // reported score is the exploitation arm's noiseless score
            let feedback = self.env.true_score(exploit).map_err(env_at)?;
            best = best.max(feedback);
            rows.push(TraceRecord {
                round: t,
                agent_id,
                arm_id: exploit,
                arm_id_2: Some(explore),
                outcome: Some(outcome),
                feedback,
                best_score_so_far: best,
                instant_regret: self
                    .env
                    .instant_regret(&self.view, exploit)
                    .map_err(env_at)?,
                cum_payload_bytes: counters.bytes_sent + counters.bytes_received,
            });
        }

        send_counted(
            link,
            &mut counters,
            SyncEnvelope::bye(agent_id, self.rounds, self.dim),
        )?;
        Ok(AgentOutcome {
            agent_id,
            rows,
            counters,
            events,
        })
    }
}

/// Preference-feedback server: every round is a full barrier
/// (upload → aggregate → broadcast).
pub struct PrefServerTask {
    pub dim: usize,
    pub lambda: f64,
    pub rounds: u64,
}

impl PrefServerTask {
    pub fn run(
        self,
        links: &mut [(u32, Box<dyn Link>)],
        mut counters: Counters,
    ) -> Result<Counters, RuntimeError> {
        let agent_ids: Vec<u32> = links.iter().map(|(id, _)| *id).collect();
        let mut server = PrefServerState::new(self.dim, self.lambda, agent_ids);

        for t in 1..=self.rounds {
            let mut uploads = Vec::with_capacity(links.len());
            for (id, link) in links.iter_mut() {
                let env = recv_counted(link.as_mut(), &mut counters, MsgType::PrefUpload)?;
                if env.agent_id != *id || env.round != t {
                    return Err(RuntimeError::Protocol(format!(
                        "agent {} sent upload labeled (agent {}, round {}) during round {t}",
                        id, env.agent_id, env.round
                    )));
                }
                let (local_model, drift_grad, pair_gram) = env.unpack_pref_upload()?;
                uploads.push(PrefUpload {
                    agent_id: *id,
                    local_model,
                    drift_grad,
                    pair_gram,
                });
            }
            counters.comm_rounds += 1;
            let (global_model, pair_gram) = server
                .server_round(&uploads)
                .map_err(|source| RuntimeError::EngineAt { round: t, source })?;
            for (id, link) in links.iter_mut() {
                send_counted(
                    link.as_mut(),
                    &mut counters,
                    SyncEnvelope::model_broadcast(*id, t, &global_model, &pair_gram),
                )?;
            }
        }

        for (_, link) in links.iter_mut() {
            recv_counted(link.as_mut(), &mut counters, MsgType::Bye)?;
        }
        Ok(counters)
    }
}
