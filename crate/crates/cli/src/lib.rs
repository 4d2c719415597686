//! Experiment commands behind the `fedpob` binary: single runs, sweeps
//! over agent count or the communication threshold, trace summaries,
//! and the split server/agent entry points for running a federation
//! across processes.

#![forbid(unsafe_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};

use fedpob_core::trace::{fmt_float, summary_to_csv, trace_to_csv};
use fedpob_core::{
    connect_agent, prepare, run_prepared, serve, AgentSummary, ExperimentConfig, RunOptions,
    RunOutput, TraceRecord,
};

/// Where one `run` left its files.
#[derive(Debug)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub echo_path: PathBuf,
    pub summaries: Vec<AgentSummary>,
}

/// Output directory precedence: explicit flag, then the
/// `FEDPOB_OUTPUT_ROOT` environment variable as a parent for the
/// config's directory, then the config's directory alone.
pub fn resolve_output_dir(config: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    resolve_output_dir_with(
        config,
        flag,
        std::env::var("FEDPOB_OUTPUT_ROOT").ok().as_deref(),
    )
}

fn resolve_output_dir_with(
    config: &ExperimentConfig,
    flag: Option<&Path>,
    env_root: Option<&str>,
) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    match env_root {
        Some(root) if !root.is_empty() => Path::new(root).join(&config.output_dir),
        _ => config.output_dir.clone(),
    }
}

/// Per-agent digests of a finished run (trace rows plus ledger).
pub fn summarize_output(output: &RunOutput) -> Vec<AgentSummary> {
    let mut agent_ids: Vec<u32> = output.ledger.agents.keys().copied().collect();
    agent_ids.sort_unstable();
    agent_ids
        .iter()
        .map(|&agent_id| {
            let rows: Vec<&TraceRecord> = output
                .trace
                .iter()
                .filter(|r| r.agent_id == agent_id)
                .collect();
            let counters = output.ledger.agent(agent_id);
            AgentSummary {
                agent_id,
                final_best_score: rows
                    .last()
                    .map(|r| r.best_score_so_far)
                    .unwrap_or(f64::NEG_INFINITY),
                regret_sum: rows.iter().map(|r| r.instant_regret).sum(),
                comm_rounds: counters.comm_rounds,
                bytes_sent: counters.bytes_sent,
                bytes_received: counters.bytes_received,
            }
        })
        .collect()
}

/// Runs the experiment a config file describes and writes `trace.csv`,
/// `summary.csv`, and `config.echo.json` into the output directory.
pub fn cmd_run(config_path: &Path, out_flag: Option<&Path>) -> Result<RunArtifacts> {
    let config = ExperimentConfig::from_json_file(config_path)?;
    let out_dir = resolve_output_dir(&config, out_flag);
    let (env, views) = prepare(&config)?;
    let output = run_prepared(&config, env, &views, &RunOptions::default())?;
    write_run_artifacts(&config, &output, &out_dir)
}

pub fn write_run_artifacts(
    config: &ExperimentConfig,
    output: &RunOutput,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let trace_path = out_dir.join("trace.csv");
    let summary_path = out_dir.join("summary.csv");
    let echo_path = out_dir.join("config.echo.json");

    std::fs::write(&trace_path, trace_to_csv(&output.trace))?;
    let summaries = summarize_output(output);
    std::fs::write(&summary_path, summary_to_csv(&summaries))?;
    std::fs::write(&echo_path, config.echo_json())?;
    Ok(RunArtifacts {
        output_dir: out_dir.to_path_buf(),
        trace_path,
        summary_path,
        echo_path,
        summaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NAgents,
    CommThreshold,
}

impl std::str::FromStr for SweepParam {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_agents" => Ok(Self::NAgents),
            "D" => Ok(Self::CommThreshold),
            other => bail!("unsupported sweep parameter {other:?} (expected n_agents or D)"),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NAgents => write!(f, "n_agents"),
            Self::CommThreshold => write!(f, "D"),
        }
    }
}

impl clap::ValueEnum for SweepParam {
    fn value_variants<'a>() -> &'a [Self] {
        &[Self::NAgents, Self::CommThreshold]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(match self {
            Self::NAgents => clap::builder::PossibleValue::new("n_agents"),
            Self::CommThreshold => clap::builder::PossibleValue::new("D"),
        })
    }
}

/// Aggregated statistics for one sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub repeats: u32,
    pub seed_base: u64,
    /// Mean over repeats of the per-agent mean final best score.
    pub mean_final_best_mean: f64,
    pub stderr_final_best_mean: f64,
    /// Mean over repeats of the best final score across the federation.
    pub mean_final_best_max: f64,
    pub stderr_final_best_max: f64,
    pub mean_comm_rounds: f64,
}

pub const SWEEP_HEADER: &str = "param,value,repeats,seed_base,mean_final_best_mean,stderr_final_best_mean,mean_final_best_max,stderr_final_best_max,mean_comm_rounds";

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `repeats` seeded repeats per sweep value (repeat `r` uses
/// `master_seed + r`) and aggregates final best score and communication
/// rounds per value.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    repeats: u32,
) -> Result<Vec<SweepRow>> {
    if repeats < 1 {
        bail!("repeats must be ≥ 1");
    }
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let mut sorted_values = values.to_vec();
    sorted_values.sort_by(|a, b| a.partial_cmp(b).expect("finite sweep values"));

    let mut rows = Vec::with_capacity(sorted_values.len());
    for &value in &sorted_values {
        let mut config = base.clone();
        match param {
            SweepParam::NAgents => {
                if value < 1.0 || value.fract() != 0.0 {
                    bail!("n_agents sweep value {value} is not a positive integer");
                }
                config.n_agents = value as u32;
            }
            SweepParam::CommThreshold => {
                if !value.is_finite() || value < 0.0 {
                    bail!("D sweep value {value} must be finite and ≥ 0");
                }
                config.comm_threshold = value;
            }
        }
        config.validate()?;

        let mut best_mean = Vec::with_capacity(repeats as usize);
        let mut best_max = Vec::with_capacity(repeats as usize);
        let mut comm = Vec::with_capacity(repeats as usize);
        for r in 0..repeats {
            let mut repeat_config = config.clone();
            repeat_config.master_seed = base.master_seed.wrapping_add(r as u64);
            let (env, views) = prepare(&repeat_config)?;
            let output = run_prepared(&repeat_config, env, &views, &RunOptions::default())?;
            let summaries = summarize_output(&output);
            let finals: Vec<f64> = summaries.iter().map(|s| s.final_best_score).collect();
            best_mean.push(finals.iter().sum::<f64>() / finals.len() as f64);
            best_max.push(finals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            comm.push(output.ledger.server.comm_rounds as f64);
        }
        let (m_mean, se_mean) = mean_and_stderr(&best_mean);
        let (m_max, se_max) = mean_and_stderr(&best_max);
        let (m_comm, _) = mean_and_stderr(&comm);
        rows.push(SweepRow {
            param,
            value,
            repeats,
            seed_base: base.master_seed,
            mean_final_best_mean: m_mean,
            stderr_final_best_mean: se_mean,
            mean_final_best_max: m_max,
            stderr_final_best_max: se_max,
            mean_comm_rounds: m_comm,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.param,
            r.value,
            r.repeats,
            r.seed_base,
            fmt_float(r.mean_final_best_mean),
            fmt_float(r.stderr_final_best_mean),
            fmt_float(r.mean_final_best_max),
            fmt_float(r.stderr_final_best_max),
            fmt_float(r.mean_comm_rounds)
        )
        .expect("string write cannot fail");
    }
    out
}

/// Runs a sweep from a config file and writes `sweep.csv`.
pub fn cmd_sweep(
    config_path: &Path,
    param: SweepParam,
    values: &[f64],
    repeats: u32,
    out_flag: Option<&Path>,
) -> Result<PathBuf> {
    let config = ExperimentConfig::from_json_file(config_path)?;
    let rows = sweep(&config, param, values, repeats)?;
    let out_dir = resolve_output_dir(&config, out_flag);
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("sweep.csv");
    std::fs::write(&path, sweep_to_csv(&rows))?;
    Ok(path)
}

/// Recomputed per-agent statistics of an existing trace file, as a
/// printable table. Fails on malformed or empty traces.
pub fn cmd_summarize(trace_path: &Path) -> Result<String> {
    let records = fedpob_core::read_trace_csv(trace_path)?;
    let mut agent_ids: Vec<u32> = records.iter().map(|r| r.agent_id).collect();
    agent_ids.sort_unstable();
    agent_ids.dedup();

    let mut out = String::new();
    writeln!(
        out,
        "{:<8} {:>18} {:>18} {:>12} {:>14}",
        "agent", "final_best", "regret_sum", "comm_rounds", "payload_bytes"
    )?;
    let mut overall_best = f64::NEG_INFINITY;
    let mut overall_regret = 0.0;
    let mut overall_comm = 0u64;
    let mut overall_bytes = 0u64;
    for agent_id in &agent_ids {
        let rows: Vec<&TraceRecord> = records.iter().filter(|r| r.agent_id == *agent_id).collect();
        let final_best = rows.last().expect("non-empty by filter").best_score_so_far;
        let regret: f64 = rows.iter().map(|r| r.instant_regret).sum();
        // a round communicated iff the cumulative payload counter grew
        let mut comm = 0u64;
        let mut prev = 0u64;
        for r in &rows {
            if r.cum_payload_bytes > prev {
                comm += 1;
            }
            prev = r.cum_payload_bytes;
        }
        let bytes = rows.last().map(|r| r.cum_payload_bytes).unwrap_or(0);
        writeln!(
            out,
            "{:<8} {:>18.6} {:>18.6} {:>12} {:>14}",
            agent_id, final_best, regret, comm, bytes
        )?;
        overall_best = overall_best.max(final_best);
        overall_regret += regret;
        overall_comm = overall_comm.max(comm);
        overall_bytes += bytes;
    }
    writeln!(
        out,
        "{:<8} {:>18.6} {:>18.6} {:>12} {:>14}",
        "all", overall_best, overall_regret, overall_comm, overall_bytes
    )?;
    Ok(out)
}

/// Hosts the central server for a cross-process federation.
pub fn cmd_serve(config_path: &Path, bind: &str, timeout: Duration) -> Result<String> {
    let config = ExperimentConfig::from_json_file(config_path)?;
    let counters = serve(bind, &config, timeout)?;
    Ok(format!(
        "server done: {} comm rounds, {} bytes in, {} bytes out\n",
        counters.comm_rounds, counters.bytes_received, counters.bytes_sent
    ))
}

/// Runs one agent against a remote server and writes its own trace
/// slice as `trace.agent<id>.csv`.
pub fn cmd_agent(
    config_path: &Path,
    addr: &str,
    agent_id: u32,
    out_flag: Option<&Path>,
) -> Result<PathBuf> {
    let config = ExperimentConfig::from_json_file(config_path)?;
    let (env, views) = prepare(&config)?;
    let outcome = connect_agent(addr, agent_id, &config, env, &views, &RunOptions::default())?;
    let out_dir = resolve_output_dir(&config, out_flag);
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join(format!("trace.agent{agent_id}.csv"));
    std::fs::write(&path, trace_to_csv(&outcome.rows))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig::from_json_str(
            r#"{
                "algo": "fedpob",
                "n_agents": 1,
                "rounds": 5,
                "d": 3,
                "env": "synthetic",
                "k": 6,
                "theta_star_seed": 3,
                "master_seed": 10
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn output_dir_precedence() {
        let mut config = base_config();
        config.output_dir = PathBuf::from("cfg-dir");
        let flag = PathBuf::from("flag-dir");

        assert_eq!(
            resolve_output_dir_with(&config, Some(&flag), Some("/env-root")),
            flag
        );
        assert_eq!(
            resolve_output_dir_with(&config, None, Some("/env-root")),
            PathBuf::from("/env-root/cfg-dir")
        );
        assert_eq!(
            resolve_output_dir_with(&config, None, None),
            PathBuf::from("cfg-dir")
        );
    }

    #[test]
    fn sweep_rejects_bad_values() {
        let config = base_config();
        assert!(sweep(&config, SweepParam::NAgents, &[1.5], 1).is_err());
        assert!(sweep(&config, SweepParam::CommThreshold, &[-1.0], 1).is_err());
        assert!(sweep(&config, SweepParam::NAgents, &[], 1).is_err());
        assert!(sweep(&config, SweepParam::NAgents, &[1.0], 0).is_err());
    }

    #[test]
    fn single_repeat_has_zero_stderr() {
        let config = base_config();
        let rows = sweep(&config, SweepParam::CommThreshold, &[0.0, 10.0], 1).unwrap();
        for row in rows {
            assert_eq!(row.stderr_final_best_mean, 0.0);
            assert_eq!(row.stderr_final_best_max, 0.0);
        }
    }
}
