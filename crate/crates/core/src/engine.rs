//! Plumbing shared by the score- and preference-feedback engines.

use thiserror::Error;

use crate::linalg::LinalgError;

/// Identifier of one arm (one candidate prompt) in an arm table.
pub type ArmId = u32;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("empty arm space")]
    EmptyArmSpace,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite feedback score {score}")]
    NonFiniteScore { score: f64 },
    #[error("non-finite iterate at descent step {step}; learning rate too large?")]
    NonFiniteIterate { step: u32 },
    #[error("missing upload from agent {agent_id}")]
    MissingUpload { agent_id: u32 },
    #[error("upload from unregistered agent {agent_id}")]
    UnknownAgent { agent_id: u32 },
    #[error("information matrix degenerate: {0}")]
    Degenerate(#[from] LinalgError),
}

/// Argmax over `(id, score)` pairs; ties break to the lowest id regardless
/// of iteration order. `None` on an empty iterator.
pub(crate) fn argmax_lowest_id(scores: impl Iterator<Item = (ArmId, f64)>) -> Option<ArmId> {
    let mut best: Option<(ArmId, f64)> = None;
    for (id, s) in scores {
        match best {
            None => best = Some((id, s)),
            Some((bid, bs)) => {
                if s > bs || (s == bs && id < bid) {
                    best = Some((id, s));
                }
            }
        }
    }
    best.map(|(id, _)| id)
}

/// Numerically stable logistic function with exact antisymmetry:
/// `sigmoid(x) + sigmoid(-x) == 1.0` bitwise for every finite `x`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - sigmoid(-x)
    }
}
