//! Preference-feedback federated dueling-bandit engine.
//!
//! Agents select a duel per round (a pure-exploitation arm plus an arm
//! with an exploration bonus relative to it), observe a binary
//! preference, and fit a local model by minimizing the pairwise logistic
//! loss augmented with a dynamic regularizer: a linear drift-correction
//! term and a quadratic proximal term anchored at the previous global
//! model. The server averages local models, corrects by the averaged
//! drift gradients, and accumulates pair-difference outer products that
//! feed the exploration norm.

use crate::engine::{argmax_lowest_id, sigmoid, ArmId, EngineError};
use crate::linalg::{SymMatrix, Vector};

/// Floor for logistic log-arguments, avoiding `-inf` at extreme models.
const LOG_FLOOR: f64 = 1e-300;

/// Time-dependent exploration scale
/// `β_t = sqrt(2 ln(1/δ) + d ln(1 + t·κ_μ/(d·λ)))`.
#[derive(Debug, Clone, Copy)]
pub struct BetaSchedule {
    pub delta: f64,
    pub dim: usize,
    pub lambda: f64,
    /// Number of participating agents.
    pub kappa_mu: f64,
}

impl BetaSchedule {
    pub fn beta_at(&self, round: u64) -> f64 {
        debug_assert!(round >= 1);
        let d = self.dim as f64;
        let conf = 2.0 * (1.0 / self.delta).ln();
        let growth = d * (1.0 + round as f64 * self.kappa_mu / (d * self.lambda)).ln();
        (conf + growth).sqrt()
    }
}

/// One observed duel: embeddings of both arms and whether the first won.
#[derive(Debug, Clone)]
pub struct PreferenceRecord {
    pub first: Vector,
    pub second: Vector,
    /// 1 = first preferred, 0 = second preferred.
    pub outcome: bool,
}

impl PreferenceRecord {
    fn diff(&self) -> Vector {
        self.first.sub(&self.second)
    }
}

/// Negative log-likelihood of the history under the logistic preference
/// model: `−Σ [ω ln σ(θᵀΔ) + (1−ω) ln σ(−θᵀΔ)]` with `Δ = u₁ − u₂`.
pub fn pairwise_loss(theta: &Vector, history: &[PreferenceRecord]) -> f64 {
    let mut loss = 0.0;
    for rec in history {
        let z = theta.dot(&rec.diff());
        let p_first = sigmoid(z);
        let p = if rec.outcome { p_first } else { 1.0 - p_first };
        loss -= p.max(LOG_FLOOR).ln();
    }
    loss
}

/// Analytic gradient of [`pairwise_loss`]:
/// `−Σ [ω(1−σ(θᵀΔ)) − (1−ω)σ(θᵀΔ)]·Δ`.
pub fn pairwise_loss_gradient(theta: &Vector, history: &[PreferenceRecord]) -> Vector {
    let mut grad = Vector::zeros(theta.dim());
    for rec in history {
        let diff = rec.diff();
        let s = sigmoid(theta.dot(&diff));
        let omega = if rec.outcome { 1.0 } else { 0.0 };
        let coeff = -(omega * (1.0 - s) - (1.0 - omega) * s);
        grad.add_assign_scaled(&diff, coeff);
    }
    grad
}

/// A differentiable local objective the proximal solver can minimize.
/// Production code uses the pairwise logistic loss over the agent's
/// history; tests substitute analytic objectives.
pub trait LocalObjective {
    fn value(&self, theta: &Vector) -> f64;
    fn gradient(&self, theta: &Vector) -> Vector;
}

/// The pairwise logistic loss over a preference history.
pub struct PairwiseLogistic<'a>(pub &'a [PreferenceRecord]);

impl LocalObjective for PairwiseLogistic<'_> {
    fn value(&self, theta: &Vector) -> f64 {
        pairwise_loss(theta, self.0)
    }
    fn gradient(&self, theta: &Vector) -> Vector {
        pairwise_loss_gradient(theta, self.0)
    }
}

/// One preference-feedback agent: local model, drift gradient, duel
/// history, and the fresh pair-difference outer product for upload.
#[derive(Debug, Clone)]
pub struct PrefAgentState {
    agent_id: u32,
    dim: usize,
    lambda: f64,
    local_model: Vector,
    drift_grad: Vector,
    history: Vec<PreferenceRecord>,
    fresh_pair_gram: SymMatrix,
}

impl PrefAgentState {
    pub fn new(agent_id: u32, dim: usize, lambda: f64, initial_model: Vector) -> Self {
        assert!(lambda > 0.0, "regularization weight must be positive");
        assert_eq!(initial_model.dim(), dim);
        Self {
            agent_id,
            dim,
            lambda,
            local_model: initial_model,
            drift_grad: Vector::zeros(dim),
            history: Vec::new(),
            fresh_pair_gram: SymMatrix::zeros(dim),
        }
    }

    pub fn agent_id(&self) -> u32 {
        self.agent_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local_model(&self) -> &Vector {
        &self.local_model
    }

    pub fn drift_grad(&self) -> &Vector {
        &self.drift_grad
    }

    pub fn history(&self) -> &[PreferenceRecord] {
        &self.history
    }

    pub fn fresh_pair_gram(&self) -> &SymMatrix {
        &self.fresh_pair_gram
    }

    /// Appends the duel to the history and sets the fresh upload matrix
    /// to `(u₁−u₂)(u₁−u₂)ᵀ` for this round.
    pub fn accumulate_pair(
        &mut self,
        first: &Vector,
        second: &Vector,
        outcome: bool,
    ) -> Result<(), EngineError> {
        if first.dim() != self.dim || second.dim() != self.dim {
            return Err(EngineError::Dimension {
                expected: self.dim,
                got: if first.dim() != self.dim {
                    first.dim()
                } else {
                    second.dim()
                },
            });
        }
        let rec = PreferenceRecord {
            first: first.clone(),
            second: second.clone(),
            outcome,
        };
        let mut gram = SymMatrix::zeros(self.dim);
        gram.add_assign_rank_one(&rec.diff())?;
        self.fresh_pair_gram = gram;
        self.history.push(rec);
        Ok(())
    }

    /// Minimizes the dynamically regularized local objective over the
    /// agent's own history; see [`local_update_with`](Self::local_update_with).
    pub fn local_update(
        &mut self,
        global_prev: &Vector,
        lr: f64,
        iters: u32,
    ) -> Result<Vector, EngineError> {
        // the borrow checker will not let the objective borrow history
        // while &mut self runs the solver, so descend on a detached copy
        let history = std::mem::take(&mut self.history);
        let result = self.local_update_with(&PairwiseLogistic(&history), global_prev, lr, iters);
        self.history = history;
        result
    }

    /// Runs `iters` steps of full-batch gradient descent with step `lr`,
    /// initialized at `global_prev`, on
    /// `G(θ) = loss(θ) − ⟨drift_grad, θ⟩ + (λ/2)‖θ − global_prev‖²`,
    /// and stores the result as the local model.
    pub fn local_update_with<L: LocalObjective>(
        &mut self,
        objective: &L,
        global_prev: &Vector,
        lr: f64,
        iters: u32,
    ) -> Result<Vector, EngineError> {
        assert!(lr > 0.0 && iters >= 1, "solver needs lr > 0 and iters ≥ 1");
        if global_prev.dim() != self.dim {
            return Err(EngineError::Dimension {
                expected: self.dim,
                got: global_prev.dim(),
            });
        }
        let mut theta = global_prev.clone();
        for step in 0..iters {
            let mut g = objective.gradient(&theta);
            g.add_assign_scaled(&self.drift_grad, -1.0);
            let prox = theta.sub(global_prev);
            g.add_assign_scaled(&prox, self.lambda);
            theta.add_assign_scaled(&g, -lr);
            if !theta.is_finite() {
                return Err(EngineError::NonFiniteIterate { step });
            }
        }
        self.local_model = theta.clone();
        Ok(theta)
    }

    /// Drift correction after a local update:
    /// `drift_grad ← drift_grad − λ(θ_local − θ_global_prev)`.
    pub fn drift_update(&mut self, global_prev: &Vector) {
        let moved = self.local_model.sub(global_prev);
        self.drift_grad.add_assign_scaled(&moved, -self.lambda);
    }
}

/// Duel selection. The first arm maximizes `⟨θ̂, u⟩`; the second
/// maximizes `⟨θ̂, u − u₁⟩ + β_t·‖u − u₁‖` in the inverse of the
/// regularized exploration matrix. Selecting the first arm again is
/// legal (its bonus is zero). Ties break to the lowest arm id.
pub fn select_duel(
    theta_global: &Vector,
    exploration_gram: &SymMatrix,
    arms: &[(ArmId, &Vector)],
    beta_t: f64,
) -> Result<(ArmId, ArmId), EngineError> {
    if arms.is_empty() {
        return Err(EngineError::EmptyArmSpace);
    }
    for (_, u) in arms {
        if u.dim() != theta_global.dim() {
            return Err(EngineError::Dimension {
                expected: theta_global.dim(),
                got: u.dim(),
            });
        }
    }
    let first = argmax_lowest_id(arms.iter().map(|(id, u)| (*id, theta_global.dot(u))))
        .expect("non-empty by check above");
    let first_embedding = arms
        .iter()
        .find(|(id, _)| *id == first)
        .map(|(_, u)| (*u).clone())
        .expect("selected arm must be present");

    let factor = exploration_gram.cholesky()?;
    let mut scored = Vec::with_capacity(arms.len());
    for (id, u) in arms {
        let gap = u.sub(&first_embedding);
        let s = theta_global.dot(&gap) + beta_t * factor.inv_weighted_norm(&gap)?;
        scored.push((*id, s));
    }
    let second = argmax_lowest_id(scored.into_iter()).expect("non-empty by check above");
    Ok((first, second))
}

/// Server state: accumulated pair-difference outer products and the
/// roster of registered agents.
#[derive(Debug, Clone)]
pub struct PrefServerState {
    dim: usize,
    lambda: f64,
    pair_gram: SymMatrix,
    agent_ids: Vec<u32>,
}

/// One agent's per-round upload.
#[derive(Debug, Clone)]
pub struct PrefUpload {
    pub agent_id: u32,
    pub local_model: Vector,
    pub drift_grad: Vector,
    pub pair_gram: SymMatrix,
}

impl PrefServerState {
    pub fn new(dim: usize, lambda: f64, mut agent_ids: Vec<u32>) -> Self {
        assert!(lambda > 0.0);
        agent_ids.sort_unstable();
        Self {
            dim,
            lambda,
            pair_gram: SymMatrix::zeros(dim),
            agent_ids,
        }
    }

    pub fn pair_gram(&self) -> &SymMatrix {
        &self.pair_gram
    }

    pub fn agent_ids(&self) -> &[u32] {
        &self.agent_ids
    }

    /// Aggregates one round of uploads:
    /// `θ_global = mean(θ_a) − (1/(nλ)) Σ drift_a`, and the pair gram is
    /// incremented by the uploaded outer products. Requires exactly one
    /// upload per registered agent; sums run in agent-id order.
    pub fn server_round(
        &mut self,
        uploads: &[PrefUpload],
    ) -> Result<(Vector, SymMatrix), EngineError> {
        let mut seen: Vec<u32> = uploads.iter().map(|u| u.agent_id).collect();
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
        for w in seen.windows(2) {
            if w[0] == w[1] {
                return Err(EngineError::UnknownAgent { agent_id: w[0] });
            }
        }

        let n = self.agent_ids.len() as f64;
        let mut ordered: Vec<&PrefUpload> = uploads.iter().collect();
        ordered.sort_by_key(|u| u.agent_id);

        let mut model_sum = Vector::zeros(self.dim);
        let mut drift_sum = Vector::zeros(self.dim);
        for up in ordered {
            if up.local_model.dim() != self.dim
                || up.drift_grad.dim() != self.dim
                || up.pair_gram.dim() != self.dim
            {
                return Err(EngineError::Dimension {
                    expected: self.dim,
                    got: up.local_model.dim(),
                });
            }
            model_sum.add_assign_scaled(&up.local_model, 1.0);
            drift_sum.add_assign_scaled(&up.drift_grad, 1.0);
            self.pair_gram.add_assign(&up.pair_gram)?;
        }
        let mut global = model_sum.scaled(1.0 / n);
        global.add_assign_scaled(&drift_sum, -1.0 / (n * self.lambda));
        Ok((global, self.pair_gram.clone()))
    }
}
