//! Score-feedback federated linear UCB engine.
//!
//! Each agent keeps two pairs of ridge sufficient statistics: the
//! *synced* pair received from the server (the federation's pooled
//! history) and the *fresh* pair accumulated locally since the last
//! communication round. The model is the ridge solution over their sum,
//! arm selection is UCB with an inverse-information-matrix bonus, and
//! communication is event-triggered by log-determinant growth of the
//! information matrix weighted by rounds elapsed since the last sync.

use crate::engine::{argmax_lowest_id, ArmId, EngineError};
use crate::linalg::{SymMatrix, Vector};

/// One FedPOB agent's synchronized and fresh sufficient statistics.
#[derive(Debug, Clone)]
pub struct ScoreAgentState {
    agent_id: u32,
    dim: usize,
    lambda: f64,
    synced_gram: SymMatrix,
    synced_moment: Vector,
    fresh_gram: SymMatrix,
    fresh_moment: Vector,
    last_sync_round: u64,
    logdet_at_sync: f64,
}

impl ScoreAgentState {
    pub fn new(agent_id: u32, dim: usize, lambda: f64) -> Self {
        assert!(lambda > 0.0, "ridge parameter must be positive");
        Self {
            agent_id,
            dim,
            lambda,
            synced_gram: SymMatrix::zeros(dim),
            synced_moment: Vector::zeros(dim),
            fresh_gram: SymMatrix::zeros(dim),
            fresh_moment: Vector::zeros(dim),
            last_sync_round: 0,
            // det(λI) = λ^d
            logdet_at_sync: dim as f64 * lambda.ln(),
        }
    }

    pub fn agent_id(&self) -> u32 {
        self.agent_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn last_sync_round(&self) -> u64 {
        self.last_sync_round
    }

    pub fn fresh_gram(&self) -> &SymMatrix {
        &self.fresh_gram
    }

    pub fn fresh_moment(&self) -> &Vector {
        &self.fresh_moment
    }

    pub fn synced_gram(&self) -> &SymMatrix {
        &self.synced_gram
    }

    pub fn synced_moment(&self) -> &Vector {
        &self.synced_moment
    }

    /// Current information matrix `V = λI + synced + fresh`.
    pub fn information_matrix(&self) -> SymMatrix {
        let mut v = SymMatrix::scaled_identity(self.dim, self.lambda);
        v.add_assign(&self.synced_gram).expect("dims fixed at init");
        v.add_assign(&self.fresh_gram).expect("dims fixed at init");
        v
    }

    /// Recomputes `(V, θ̂)` from the current statistics; the state is
    /// not modified. `V` is positive definite for any λ > 0, so a
    /// factorization failure means the accumulators were corrupted.
    pub fn refresh_model(&self) -> Result<(SymMatrix, Vector), EngineError> {
        let v = self.information_matrix();
        let b = self.synced_moment.add(&self.fresh_moment);
        let theta = v.cholesky()?.solve(&b)?;
        Ok((v, theta))
    }

    /// Folds one observation `(u, score)` into the fresh statistics.
    pub fn record_score(&mut self, u: &Vector, score: f64) -> Result<(), EngineError> {
        if u.dim() != self.dim {
            return Err(EngineError::Dimension {
                expected: self.dim,
                got: u.dim(),
            });
        }
        if !score.is_finite() {
            return Err(EngineError::NonFiniteScore { score });
        }
        self.fresh_gram.add_assign_rank_one(u)?;
        self.fresh_moment.add_assign_scaled(u, score);
        Ok(())
    }

    /// Determinant trigger: true iff
    /// `(t − t_last) · (ln det V_t − ln det V_at_last_sync) > threshold`.
    pub fn should_sync(&self, round: u64, threshold: f64) -> bool {
        assert!(round >= self.last_sync_round, "round precedes last sync");
        let elapsed = (round - self.last_sync_round) as f64;
        if elapsed == 0.0 {
            return false;
        }
        let logdet_now = self
            .information_matrix()
            .cholesky()
            .expect("information matrix with λ > 0 must be positive definite")
            .log_det();
        elapsed * (logdet_now - self.logdet_at_sync) > threshold
    }

    /// Takes the fresh statistics for upload and zeroes them.
    pub fn extract_delta(&mut self) -> (SymMatrix, Vector) {
        let gram = std::mem::replace(&mut self.fresh_gram, SymMatrix::zeros(self.dim));
        let moment = std::mem::replace(&mut self.fresh_moment, Vector::zeros(self.dim));
        (gram, moment)
    }

    /// Installs a server broadcast, *replacing* the synced statistics
    /// (the server maintains the running total), and re-anchors the
    /// determinant trigger at this round.
    pub fn apply_sync(
        &mut self,
        synced_gram: SymMatrix,
        synced_moment: Vector,
        round: u64,
    ) -> Result<(), EngineError> {
        if synced_gram.dim() != self.dim {
            return Err(EngineError::Dimension {
                expected: self.dim,
                got: synced_gram.dim(),
            });
        }
        if synced_moment.dim() != self.dim {
            return Err(EngineError::Dimension {
                expected: self.dim,
                got: synced_moment.dim(),
            });
        }
        self.synced_gram = synced_gram;
        self.synced_moment = synced_moment;
        self.last_sync_round = round;
        let mut v = SymMatrix::scaled_identity(self.dim, self.lambda);
        v.add_assign(&self.synced_gram).expect("dim checked above");
        self.logdet_at_sync = v
            .cholesky()
            .expect("λI + PSD broadcast must be positive definite")
            .log_det();
        Ok(())
    }
}

/// UCB selection: maximizes `⟨θ̂, u⟩ + ν·‖u‖_{V⁻¹}`; ties break to the
/// lowest arm id.
pub fn select_arm(
    theta_hat: &Vector,
    info: &SymMatrix,
    arms: &[(ArmId, &Vector)],
    nu: f64,
) -> Result<ArmId, EngineError> {
    if arms.is_empty() {
        return Err(EngineError::EmptyArmSpace);
    }
    let factor = info.cholesky()?;
    let mut scored = Vec::with_capacity(arms.len());
    for (id, u) in arms {
        if u.dim() != theta_hat.dim() {
            return Err(EngineError::Dimension {
                expected: theta_hat.dim(),
                got: u.dim(),
            });
        }
        let ucb = theta_hat.dot(u) + nu * factor.inv_weighted_norm(u)?;
        scored.push((*id, ucb));
    }
    Ok(argmax_lowest_id(scored.into_iter()).expect("non-empty by check above"))
}

/// Server-side running totals of all uploaded deltas.
#[derive(Debug, Clone)]
pub struct ScoreServerState {
    dim: usize,
    gram: SymMatrix,
    moment: Vector,
    agent_ids: Vec<u32>,
}

impl ScoreServerState {
    pub fn new(dim: usize, mut agent_ids: Vec<u32>) -> Self {
        agent_ids.sort_unstable();
        Self {
            dim,
            gram: SymMatrix::zeros(dim),
            moment: Vector::zeros(dim),
            agent_ids,
        }
    }

    pub fn agent_ids(&self) -> &[u32] {
        &self.agent_ids
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn moment(&self) -> &Vector {
        &self.moment
    }

    /// Full-participation aggregation: requires exactly one delta per
    /// registered agent, folds the sums into the running totals, and
    /// returns the new broadcast pair. Deltas are summed in ascending
    /// agent-id order so the result is bitwise reproducible.
    pub fn aggregate(
        &mut self,
        deltas: &[(u32, SymMatrix, Vector)],
    ) -> Result<(SymMatrix, Vector), EngineError> {
        let mut seen: Vec<u32> = deltas.iter().map(|(id, _, _)| *id).collect();
        seen.sort_unstable();
        for id in &seen {
            if !self.agent_ids.contains(id) {
                return Err(EngineError::UnknownAgent { agent_id: *id });
            }
        }
        for id in &self.agent_ids {
            if !seen.contains(id) {
                return Err(EngineError::MissingUpload { agent_id: *id });
            }
        }
        if seen.len() != self.agent_ids.len() {
            // duplicate upload shadows a missing one
            for w in seen.windows(2) {
                if w[0] == w[1] {
                    return Err(EngineError::UnknownAgent { agent_id: w[0] });
                }
            }
        }
        let mut ordered: Vec<&(u32, SymMatrix, Vector)> = deltas.iter().collect();
        ordered.sort_by_key(|(id, _, _)| *id);
        for (_, gram, moment) in ordered {
            if gram.dim() != self.dim || moment.dim() != self.dim {
                return Err(EngineError::Dimension {
                    expected: self.dim,
                    got: gram.dim(),
                });
            }
            self.gram.add_assign(gram)?;
            self.moment.add_assign_scaled(moment, 1.0);
        }
        Ok((self.gram.clone(), self.moment.clone()))
    }
}
