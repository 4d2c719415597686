//! Trace and summary records plus their CSV serialization.
//!
//! Column order and names are fixed; downstream plotting and the
//! transport-equivalence checks depend on them. Floats are written with
//! 17 significant digits so every value round-trips bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::ArmId;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace has no data rows")]
    Empty,
}

pub const TRACE_HEADER: &str =
    "round,agent_id,arm_id,arm_id_2,outcome,feedback,best_score_so_far,instant_regret,cum_payload_bytes";

pub const SUMMARY_HEADER: &str =
    "agent_id,final_best_score,regret_sum,comm_rounds,bytes_sent,bytes_received";

/// One `(round, agent)` log row. `arm_id_2` and `outcome` are only
/// present for preference-feedback runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub round: u64,
    pub agent_id: u32,
    pub arm_id: ArmId,
    pub arm_id_2: Option<ArmId>,
    pub outcome: Option<bool>,
    pub feedback: f64,
    pub best_score_so_far: f64,
    pub instant_regret: f64,
    pub cum_payload_bytes: u64,
}

/// Per-agent end-of-run digest. The summary file carries one row per
/// agent plus a federation row (`agent_id = all`) whose best score is
/// the max over agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSummary {
    pub agent_id: u32,
    pub final_best_score: f64,
    pub regret_sum: f64,
    pub comm_rounds: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// 17-significant-digit decimal rendering; lossless for every f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(s: &str, line: usize) -> Result<f64, TraceError> {
    s.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("bad float {s:?}"),
    })
}

fn parse_int<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, TraceError> {
    s.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("bad {what} {s:?}"),
    })
}

pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let arm2 = r.arm_id_2.map(|a| a.to_string()).unwrap_or_default();
        let outcome = r
            .outcome
            .map(|o| if o { "1" } else { "0" }.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.agent_id,
            r.arm_id,
            arm2,
            outcome,
            fmt_float(r.feedback),
            fmt_float(r.best_score_so_far),
            fmt_float(r.instant_regret),
            r.cum_payload_bytes
        )
        .expect("string write cannot fail");
    }
    out
}

pub fn write_trace_csv(path: &Path, records: &[TraceRecord]) -> Result<(), TraceError> {
    std::fs::write(path, trace_to_csv(records)).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == TRACE_HEADER => {}
        Some((_, header)) => {
            return Err(TraceError::Parse {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            })
        }
        None => return Err(TraceError::Empty),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(TraceError::Parse {
                line: lineno,
                msg: format!("expected 9 columns, found {}", cols.len()),
            });
        }
        records.push(TraceRecord {
            round: parse_int(cols[0], lineno, "round")?,
            agent_id: parse_int(cols[1], lineno, "agent_id")?,
            arm_id: parse_int(cols[2], lineno, "arm_id")?,
            arm_id_2: if cols[3].is_empty() {
                None
            } else {
                Some(parse_int(cols[3], lineno, "arm_id_2")?)
            },
            outcome: match cols[4] {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => {
                    return Err(TraceError::Parse {
                        line: lineno,
                        msg: format!("bad outcome {other:?}"),
                    })
                }
            },
            feedback: parse_float(cols[5], lineno)?,
            best_score_so_far: parse_float(cols[6], lineno)?,
            instant_regret: parse_float(cols[7], lineno)?,
            cum_payload_bytes: parse_int(cols[8], lineno, "cum_payload_bytes")?,
        });
    }
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(records)
}

pub fn summary_to_csv(per_agent: &[AgentSummary]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for s in per_agent {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.agent_id,
            fmt_float(s.final_best_score),
            fmt_float(s.regret_sum),
            s.comm_rounds,
            s.bytes_sent,
            s.bytes_received
        )
        .expect("string write cannot fail");
    }
    if !per_agent.is_empty() {
        let best = per_agent
            .iter()
            .map(|s| s.final_best_score)
            .fold(f64::NEG_INFINITY, f64::max);
        let regret: f64 = per_agent.iter().map(|s| s.regret_sum).sum();
        let comm = per_agent.iter().map(|s| s.comm_rounds).max().unwrap_or(0);
        let sent: u64 = per_agent.iter().map(|s| s.bytes_sent).sum();
        let received: u64 = per_agent.iter().map(|s| s.bytes_received).sum();
        writeln!(
            out,
            "all,{},{},{},{},{}",
            fmt_float(best),
            fmt_float(regret),
            comm,
            sent,
            received
        )
        .expect("string write cannot fail");
    }
    out
}

pub fn write_summary_csv(path: &Path, per_agent: &[AgentSummary]) -> Result<(), TraceError> {
    std::fs::write(path, summary_to_csv(per_agent)).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}
