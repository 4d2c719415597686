//! Feedback environments: synthetic linear-reward worlds with Gaussian
//! score noise, deterministic replay of cached per-arm scores, logistic
//! (Bradley-Terry) preference sampling, and the shared/unique per-agent
//! arm-space partitioner.
//!
//! Arm tables travel as CSV with header `arm_id,text,score,e0,...,e{d-1}`;
//! this is the bridge format for exporting real prompt embeddings and
//! cached validation scores into the toolkit.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::engine::{sigmoid, ArmId};
use crate::linalg::Vector;
use crate::rng;

/// An arm's embedding vector `u(p)`.
pub type Embedding = Vector;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("arm table parse error at row {row}, column {col}: {msg}")]
    Parse {
        row: usize,
        col: String,
        msg: String,
    },
    #[error("embedding dimension mismatch at row {row}: expected {expected}, got {got}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("duplicate arm id {id}")]
    DuplicateArmId { id: ArmId },
    #[error("not enough arms: {arms} arms cannot give {agents} agents non-empty exclusive pools beyond {shared} shared")]
    InsufficientArms {
        arms: usize,
        agents: u32,
        shared: usize,
    },
    #[error("unknown arm id {id}")]
    UnknownArm { id: ArmId },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One candidate arm: id, optional source text, embedding, and the
/// ground-truth score used by the feedback oracles.
#[derive(Debug, Clone)]
pub struct Arm {
    pub id: ArmId,
    pub text: Option<String>,
    pub embedding: Embedding,
    pub true_score: f64,
}

/// Validated arm table: ids dense from 0, embeddings of one shared
/// dimension, all values finite. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ArmTable {
    dim: usize,
    arms: Vec<Arm>,
}

impl ArmTable {
    pub fn from_arms(dim: usize, mut arms: Vec<Arm>) -> Result<Self, EnvError> {
        if arms.is_empty() {
            return Err(EnvError::Parse {
                row: 0,
                col: "arm_id".into(),
                msg: "empty arm table".into(),
            });
        }
        arms.sort_by_key(|a| a.id);
        for (i, arm) in arms.iter().enumerate() {
            if arm.embedding.dim() != dim {
                return Err(EnvError::DimensionMismatch {
                    row: i + 1,
                    expected: dim,
                    got: arm.embedding.dim(),
                });
            }
            if !arm.embedding.is_finite() || !arm.true_score.is_finite() {
                return Err(EnvError::Parse {
                    row: i + 1,
                    col: "score/embedding".into(),
                    msg: "non-finite value".into(),
                });
            }
            let expected = i as ArmId;
            if arm.id != expected {
                if arms.iter().filter(|a| a.id == arm.id).count() > 1 {
                    return Err(EnvError::DuplicateArmId { id: arm.id });
                }
                return Err(EnvError::Parse {
                    row: i + 1,
                    col: "arm_id".into(),
                    msg: format!(
                        "arm ids must be dense from 0; expected {expected}, found {}",
                        arm.id
                    ),
                });
            }
        }
        Ok(Self { dim, arms })
    }

    /// Loads and validates the CSV bridge format. The required header is
    /// `arm_id,text,score,e0,...,e{d-1}` with `d` inferred from the
    /// header and enforced on every row.
    pub fn load_csv(path: &Path) -> Result<Self, EnvError> {
        let to_io = |source: std::io::Error| EnvError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => to_io(io),
                other => EnvError::Parse {
                    row: 0,
                    col: "header".into(),
                    msg: format!("{other:?}"),
                },
            })?;

        let headers = reader
            .headers()
            .map_err(|e| EnvError::Parse {
                row: 0,
                col: "header".into(),
                msg: e.to_string(),
            })?
            .clone();
        let fields: Vec<&str> = headers.iter().collect();
        if fields.len() < 4 || fields[0] != "arm_id" || fields[1] != "text" || fields[2] != "score"
        {
            return Err(EnvError::Parse {
                row: 0,
                col: "header".into(),
                msg: "expected header arm_id,text,score,e0,...".into(),
            });
        }
        let dim = fields.len() - 3;
        for (i, name) in fields[3..].iter().enumerate() {
            if *name != format!("e{i}") {
                return Err(EnvError::Parse {
                    row: 0,
                    col: format!("column {}", i + 3),
                    msg: format!("expected embedding column e{i}, found {name}"),
                });
            }
        }

        let mut arms = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| EnvError::Parse {
                row,
                col: "<record>".into(),
                msg: e.to_string(),
            })?;
            if record.len() != dim + 3 {
                return Err(EnvError::DimensionMismatch {
                    row,
                    expected: dim,
                    got: record.len().saturating_sub(3),
                });
            }
            let parse_f64 = |col: usize, name: &str| -> Result<f64, EnvError> {
                let raw = record.get(col).unwrap_or("");
                let value: f64 = raw.parse().map_err(|_| EnvError::Parse {
                    row,
                    col: name.to_string(),
                    msg: format!("not a number: {raw:?}"),
                })?;
                if !value.is_finite() {
                    return Err(EnvError::Parse {
                        row,
                        col: name.to_string(),
                        msg: format!("non-finite value {raw:?}"),
                    });
                }
                Ok(value)
            };
            let id: ArmId = record
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| EnvError::Parse {
                    row,
                    col: "arm_id".into(),
                    msg: format!("not an integer: {:?}", record.get(0).unwrap_or("")),
                })?;
            let text = match record.get(1).unwrap_or("") {
                "" => None,
                s => Some(s.to_string()),
            };
            let score = parse_f64(2, "score")?;
            let mut embedding = Vec::with_capacity(dim);
            for i in 0..dim {
                embedding.push(parse_f64(3 + i, &format!("e{i}"))?);
            }
            arms.push(Arm {
                id,
                text,
                embedding: Vector::from_vec(embedding),
                true_score: score,
            });
        }

        // duplicate ids first: nicer diagnosis than the dense-order error
        let mut ids: Vec<ArmId> = arms.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                return Err(EnvError::DuplicateArmId { id: w[0] });
            }
        }
        Self::from_arms(dim, arms)
    }

    /// Writes the table in the same CSV bridge format `load_csv` reads.
    pub fn write_csv(&self, path: &Path) -> Result<(), EnvError> {
        let to_io = |source: std::io::Error| EnvError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => to_io(io),
            other => EnvError::Parse {
                row: 0,
                col: "header".into(),
                msg: format!("{other:?}"),
            },
        })?;
        let mut header = vec![
            "arm_id".to_string(),
            "text".to_string(),
            "score".to_string(),
        ];
        header.extend((0..self.dim).map(|i| format!("e{i}")));
        w.write_record(&header).map_err(|e| EnvError::Parse {
            row: 0,
            col: "header".into(),
            msg: e.to_string(),
        })?;
        for arm in &self.arms {
            let mut rec = vec![
                arm.id.to_string(),
                arm.text.clone().unwrap_or_default(),
                crate::trace::fmt_float(arm.true_score),
            ];
            rec.extend(arm.embedding.iter().map(|x| crate::trace::fmt_float(*x)));
            w.write_record(&rec).map_err(|e| EnvError::Parse {
                row: arm.id as usize + 1,
                col: "<record>".into(),
                msg: e.to_string(),
            })?;
        }
        w.flush().map_err(to_io)
    }

    /// Synthesizes a linear-reward world: a hidden unit-norm parameter
    /// vector and `k` random embeddings whose true scores are the inner
    /// products. The hidden vector never leaves this function.
    pub fn synthetic(dim: usize, k: usize, seed: u64) -> Self {
        assert!(dim >= 1 && k >= 1);
        let mut gen = rng::stream(seed, rng::GLOBAL_SCOPE, "world");
        let mut theta: Vec<f64> = (0..dim)
            .map(|_| gen.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        theta.iter_mut().for_each(|x| *x /= norm);
        let theta = Vector::from_vec(theta);

        let scale = 1.0 / (dim as f64).sqrt();
        let arms = (0..k)
            .map(|i| {
                let embedding = Vector::from_vec(
                    (0..dim)
                        .map(|_| gen.sample::<f64, _>(StandardNormal) * scale)
                        .collect(),
                );
                let true_score = theta.dot(&embedding);
                Arm {
                    id: i as ArmId,
                    text: None,
                    embedding,
                    true_score,
                }
            })
            .collect();
        Self { dim, arms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn arm(&self, id: ArmId) -> Result<&Arm, EnvError> {
        self.arms
            .get(id as usize)
            .ok_or(EnvError::UnknownArm { id })
    }

    pub fn max_score(&self) -> f64 {
        self.arms
            .iter()
            .map(|a| a.true_score)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The subset of the arm table one agent can see (its own arm space).
#[derive(Debug, Clone)]
pub struct AgentArmView {
    pub agent_id: u32,
    /// Sorted ascending.
    pub arm_ids: Vec<ArmId>,
}

impl AgentArmView {
    /// Borrowed `(id, embedding)` pairs for the selection operators.
    pub fn arms<'t>(&self, table: &'t ArmTable) -> Vec<(ArmId, &'t Embedding)> {
        self.arm_ids
            .iter()
            .map(|id| (*id, &table.arms()[*id as usize].embedding))
            .collect()
    }
}

/// Splits the table into a shared pool visible to every agent
/// (`⌈shared_fraction·K⌉` arms) plus per-agent exclusive pools dealt
/// round-robin after a seeded shuffle. Deterministic given the seed.
pub fn partition_arms(
    table: &ArmTable,
    n_agents: u32,
    shared_fraction: f64,
    seed: u64,
) -> Result<Vec<AgentArmView>, EnvError> {
    assert!(n_agents >= 1, "need at least one agent");
    assert!(
        (0.0..=1.0).contains(&shared_fraction),
        "shared_fraction must be in [0, 1]"
    );
    let k = table.len();
    let shared = ((shared_fraction * k as f64).ceil() as usize).min(k);
    let rest = k - shared;
    if rest > 0 && rest < n_agents as usize {
        return Err(EnvError::InsufficientArms {
            arms: k,
            agents: n_agents,
            shared,
        });
    }

    let mut ids: Vec<ArmId> = (0..k as ArmId).collect();
    let mut gen: ChaCha12Rng = rng::stream(seed, rng::GLOBAL_SCOPE, "partition");
    // Fisher-Yates
    for i in (1..ids.len()).rev() {
        let j = gen.random_range(0..=i);
        ids.swap(i, j);
    }

    let shared_pool = &ids[..shared];
    let mut views: Vec<AgentArmView> = (0..n_agents)
        .map(|agent_id| AgentArmView {
            agent_id,
            arm_ids: shared_pool.to_vec(),
        })
        .collect();
    for (pos, id) in ids[shared..].iter().enumerate() {
        views[pos % n_agents as usize].arm_ids.push(*id);
    }
    for view in &mut views {
        view.arm_ids.sort_unstable();
    }
    Ok(views)
}

/// How scores are produced when an arm is queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Ground-truth score plus Gaussian noise on every query.
    Synthetic,
    /// Replays the stored score, deterministically.
    Cached,
}

/// An arm table plus the feedback policy over it.
#[derive(Debug, Clone)]
pub struct Environment {
    table: ArmTable,
    mode: FeedbackMode,
    noise_sigma: f64,
}

impl Environment {
    pub fn synthetic(table: ArmTable, noise_sigma: f64) -> Self {
        assert!(noise_sigma >= 0.0);
        Self {
            table,
            mode: FeedbackMode::Synthetic,
            noise_sigma,
        }
    }

    pub fn cached(table: ArmTable) -> Self {
        Self {
            table,
            mode: FeedbackMode::Cached,
            noise_sigma: 0.0,
        }
    }

    pub fn table(&self) -> &ArmTable {
        &self.table
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn true_score(&self, id: ArmId) -> Result<f64, EnvError> {
        Ok(self.table.arm(id)?.true_score)
    }

    /// Score feedback for one query. Synthetic mode draws fresh Gaussian
    /// noise; cached mode replays the stored score and leaves the rng
    /// untouched.
    pub fn score_feedback(&self, id: ArmId, gen: &mut ChaCha12Rng) -> Result<f64, EnvError> {
        let base = self.true_score(id)?;
        match self.mode {
            FeedbackMode::Cached => Ok(base),
            FeedbackMode::Synthetic => {
                let noise: f64 = gen.sample(StandardNormal);
                Ok(base + self.noise_sigma * noise)
            }
        }
    }

    /// `P(first ≻ second) = σ(s₁ − s₂)` over noiseless scores. Exactly
    /// antisymmetric: `p(a,b) + p(b,a) == 1` for all pairs.
    pub fn preference_probability(&self, first: ArmId, second: ArmId) -> Result<f64, EnvError> {
        let s1 = self.true_score(first)?;
        let s2 = self.true_score(second)?;
        Ok(sigmoid(s1 - s2))
    }

    /// One Bernoulli draw from the logistic preference model; `true`
    /// means the first arm won.
    pub fn preference_feedback(
        &self,
        first: ArmId,
        second: ArmId,
        gen: &mut ChaCha12Rng,
    ) -> Result<bool, EnvError> {
        let p = self.preference_probability(first, second)?;
        Ok(gen.random::<f64>() < p)
    }

    /// Gap between the best noiseless score in the acting agent's view
    /// and the chosen arm's noiseless score.
    pub fn instant_regret(&self, view: &AgentArmView, chosen: ArmId) -> Result<f64, EnvError> {
        let chosen_score = self.true_score(chosen)?;
        let mut best = f64::NEG_INFINITY;
        for id in &view.arm_ids {
            best = best.max(self.true_score(*id)?);
        }
        Ok(best - chosen_score)
    }
}
