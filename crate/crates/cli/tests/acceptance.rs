//! Acceptance suite: one test per criterion, each asserting its stated
//! tolerance and printing one pass line. Run with
//! `cargo test -p fedpob-cli --test acceptance -- --nocapture`.

use std::path::Path;
use std::time::{Duration, Instant};

use fedpob_cli::{cmd_run, sweep, write_run_artifacts, SweepParam};
use fedpob_core::pref::{pairwise_loss, pairwise_loss_gradient, PreferenceRecord};
use fedpob_core::{
    prepare, run_prepared, Algo, ArmTable, EnvKind, Environment, ExperimentConfig, LocalObjective,
    PrefAgentState, PrefServerState, PrefUpload, RoundEvent, RunOptions, SymMatrix, Transport,
    Vector,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn assert_runtime(criterion: &str, elapsed: Duration, limit: Duration) {
    assert!(
        elapsed < limit,
        "{criterion}: runtime {elapsed:?} exceeds limit {limit:?}"
    );
}

fn pass(criterion: &str, detail: String, elapsed: Duration) {
    println!("[PASS] {criterion}: {detail} ({elapsed:.2?})");
}

fn base_config(algo: Algo) -> ExperimentConfig {
    ExperimentConfig {
        algo,
        n_agents: 1,
        rounds: 50,
        d: 8,
        lambda: 1.0,
        nu: 0.3,
        comm_threshold: 10.0,
        delta: 0.1,
        lr: 0.001,
        local_iters: 30,
        shared_fraction: 0.5,
        noise_sigma: 0.1,
        env: EnvKind::Synthetic,
        arm_table_path: None,
        k: Some(40),
        theta_star_seed: Some(20_240_501),
        master_seed: 424_242,
        transport: Transport::Inproc,
        output_dir: "out".into(),
    }
}

/// Gauss-Jordan solve, independent of the production Cholesky path.
fn gauss_solve(a: &SymMatrix, b: &Vector) -> Vector {
    let d = a.dim();
    let mut m: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row: Vec<f64> = (0..d).map(|j| a.get(i, j)).collect();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for j in col..=d {
            m[col][j] /= p;
        }
        for i in 0..d {
            if i != col {
                let f = m[i][col];
                for j in col..=d {
                    m[i][j] -= f * m[col][j];
                }
            }
        }
    }
    Vector::from_vec((0..d).map(|i| m[i][d]).collect())
}

/// Criterion 1 — with sync every round and deterministic scores, every
/// agent's post-sync model equals the brute-force pooled ridge solution
/// at every sync (N=4, d=8, T=50, |error| ≤ 1e-9). Runtime < 5 s.
#[test]
fn criterion_1_centralized_equivalence() {
    let start = Instant::now();
    let mut config = base_config(Algo::Fedpob);
    config.n_agents = 4;
    config.rounds = 50;
    config.d = 8;
    config.comm_threshold = 0.0;
    config.noise_sigma = 0.0;

    let (env, views) = prepare(&config).unwrap();
    let opts = RunOptions {
        capture_events: true,
        ..Default::default()
    };
    let output = run_prepared(&config, env.clone(), &views, &opts).unwrap();

    let mut pool_gram = SymMatrix::scaled_identity(config.d, config.lambda);
    let mut pool_moment = Vector::zeros(config.d);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for t in 1..=config.rounds {
        // refreshes of round t see the pool of rounds 1..t (post-sync)
        for event in &output.events {
            if let RoundEvent::ModelRefreshed { round, theta, .. } = event {
                if *round == t && t > 1 {
                    let oracle = gauss_solve(&pool_gram, &pool_moment);
                    let err = theta.sub(&oracle).norm();
                    worst = worst.max(err);
                    assert!(err <= 1e-9, "round {t}: post-sync deviation {err}");
                    checked += 1;
                }
            }
        }
        for event in &output.events {
            if let RoundEvent::Observed {
                round,
                arm_id,
                score,
                ..
            } = event
            {
                if *round == t {
                    let u = &env.table().arm(*arm_id).unwrap().embedding;
                    pool_gram.add_assign_rank_one(u).unwrap();
                    pool_moment.add_assign_scaled(u, *score);
                }
            }
        }
    }
    assert_eq!(
        checked,
        4 * 49,
        "expected one check per agent per post-sync round"
    );
    assert_eq!(output.ledger.server.comm_rounds, 50);

    let elapsed = start.elapsed();
    assert_runtime("criterion 1", elapsed, Duration::from_secs(5));
    pass(
        "criterion 1 (centralized equivalence)",
        format!("{checked} post-sync models within 1e-9 of pooled ridge (worst {worst:.2e})"),
        elapsed,
    );
}

/// Criterion 2 — collaboration benefit: mean final best score over 20
/// seeded repeats is ordered N=10 ≥ N=3 ≥ N=1, and the N=10 vs N=1 gap
/// exceeds one standard error. Runtime < 2 min.
#[test]
fn criterion_2_collaboration_benefit() {
    let start = Instant::now();
    let mut config = base_config(Algo::Fedpob);
    config.d = 16;
    config.k = Some(100);
    config.noise_sigma = 0.1;
    config.rounds = 300;

    let rows = sweep(&config, SweepParam::NAgents, &[1.0, 3.0, 10.0], 20).unwrap();
    let by_n: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (r.value, r.mean_final_best_max, r.stderr_final_best_max))
        .collect();
    let (m1, se1) = (by_n[0].1, by_n[0].2);
    let (m3, _) = (by_n[1].1, by_n[1].2);
    let (m10, se10) = (by_n[2].1, by_n[2].2);

    assert!(m10 >= m3, "N=10 mean {m10} < N=3 mean {m3}");
    assert!(m3 >= m1, "N=3 mean {m3} < N=1 mean {m1}");
    let gap = m10 - m1;
    let se_gap = (se1 * se1 + se10 * se10).sqrt();
    assert!(
        gap > se_gap,
        "N=10 vs N=1 gap {gap} does not exceed one standard error {se_gap}"
    );

    let elapsed = start.elapsed();
    assert_runtime("criterion 2", elapsed, Duration::from_secs(120));
    pass(
        "criterion 2 (collaboration benefit)",
        format!("means {m1:.4} ≤ {m3:.4} ≤ {m10:.4}, gap {gap:.4} > se {se_gap:.4}"),
        elapsed,
    );
}

/// Criterion 3 — communication trade-off over D ∈ {0,10,100,300,1000}:
/// communication rounds strictly decrease with D while the mean final
/// best score is non-increasing within one standard error. Runtime < 3 min.
#[test]
fn criterion_3_communication_tradeoff() {
    let start = Instant::now();
    let mut config = base_config(Algo::Fedpob);
    config.d = 16;
    config.k = Some(100);
    config.noise_sigma = 0.1;
    config.rounds = 300;
    config.n_agents = 3;

    let values = [0.0, 10.0, 100.0, 300.0, 1000.0];
    let rows = sweep(&config, SweepParam::CommThreshold, &values, 20).unwrap();

    for pair in rows.windows(2) {
        assert!(
            pair[0].mean_comm_rounds > pair[1].mean_comm_rounds,
            "comm rounds not strictly decreasing: D={} gives {}, D={} gives {}",
            pair[0].value,
            pair[0].mean_comm_rounds,
            pair[1].value,
            pair[1].mean_comm_rounds
        );
        let slack =
            (pair[0].stderr_final_best_max.powi(2) + pair[1].stderr_final_best_max.powi(2)).sqrt();
        assert!(
            pair[1].mean_final_best_max <= pair[0].mean_final_best_max + slack,
            "score rose beyond one standard error from D={} to D={}: {} -> {} (se {slack})",
            pair[0].value,
            pair[1].value,
            pair[0].mean_final_best_max,
            pair[1].mean_final_best_max
        );
    }

    let elapsed = start.elapsed();
    assert_runtime("criterion 3", elapsed, Duration::from_secs(180));
    let comm: Vec<f64> = rows.iter().map(|r| r.mean_comm_rounds).collect();
    pass(
        "criterion 3 (communication trade-off)",
        format!("comm rounds {comm:?} strictly decreasing; scores non-increasing within 1 se"),
        elapsed,
    );
}

/// Criterion 4 — analytic pairwise-loss gradient matches central finite
/// differences (step 1e-6) to relative error ≤ 1e-5 over 50 random
/// instances with d ≤ 16. Runtime < 1 s.
#[test]
fn criterion_4_gradient_correctness() {
    let start = Instant::now();
    let mut gen = ChaCha12Rng::seed_from_u64(1234);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let d = 1 + (trial % 16);
        let history: Vec<PreferenceRecord> = (0..12)
            .map(|_| PreferenceRecord {
                first: Vector::from_vec((0..d).map(|_| gen.random::<f64>() * 2.0 - 1.0).collect()),
                second: Vector::from_vec((0..d).map(|_| gen.random::<f64>() * 2.0 - 1.0).collect()),
                outcome: gen.random::<bool>(),
            })
            .collect();
        let theta = Vector::from_vec((0..d).map(|_| gen.random::<f64>() * 2.0 - 1.0).collect());
        let analytic = pairwise_loss_gradient(&theta, &history);

        let step = 1e-6;
        let mut numeric = Vec::with_capacity(d);
        for i in 0..d {
            let mut plus = theta.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[i] += step;
            minus[i] -= step;
            numeric.push(
                (pairwise_loss(&Vector::from_vec(plus), &history)
                    - pairwise_loss(&Vector::from_vec(minus), &history))
                    / (2.0 * step),
            );
        }
        let numeric = Vector::from_vec(numeric);
        let rel = analytic.sub(&numeric).norm() / numeric.norm().max(1e-12);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-5, "max relative error {worst}");

    let elapsed = start.elapsed();
    assert_runtime("criterion 4", elapsed, Duration::from_secs(1));
    pass(
        "criterion 4 (gradient correctness)",
        format!("50 instances, max relative error {worst:.2e} ≤ 1e-5"),
        elapsed,
    );
}

/// Criterion 5 — consensus-quadratic stationarity: the full local/drift/
/// server loop with f_i(θ) = ½‖θ − c_i‖² converges to mean(c_i) within
/// 1e-6 in ≤ 500 rounds, where the local gradients cancel on average
/// while staying individually bounded away from zero. Runtime < 1 s.
#[test]
fn criterion_5_consensus_stationarity() {
    struct Quadratic {
        center: Vector,
    }
    impl LocalObjective for Quadratic {
        fn value(&self, theta: &Vector) -> f64 {
            let diff = theta.sub(&self.center);
            0.5 * diff.dot(&diff)
        }
        fn gradient(&self, theta: &Vector) -> Vector {
            theta.sub(&self.center)
        }
    }

    let start = Instant::now();
    for m in [2usize, 5] {
        let d = 2;
        let lambda = 1.0;
        let centers: Vec<Vector> = (0..m)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                Vector::from_vec(vec![2.0 * angle.cos(), 2.0 * angle.sin() - 1.0])
            })
            .collect();
        let mut mean_center = Vector::zeros(d);
        for c in &centers {
            mean_center.add_assign_scaled(c, 1.0 / m as f64);
        }

        let mut agents: Vec<PrefAgentState> = (0..m)
            .map(|i| PrefAgentState::new(i as u32, d, lambda, Vector::zeros(d)))
            .collect();
        let mut server = PrefServerState::new(d, lambda, (0..m as u32).collect());
        let mut global = Vector::zeros(d);

        let mut converged_at = None;
        for round in 1..=500u32 {
            let uploads: Vec<PrefUpload> = agents
                .iter_mut()
                .enumerate()
                .map(|(i, a)| {
                    let objective = Quadratic {
                        center: centers[i].clone(),
                    };
                    a.local_update_with(&objective, &global, 0.25, 80).unwrap();
                    a.drift_update(&global);
                    PrefUpload {
                        agent_id: a.agent_id(),
                        local_model: a.local_model().clone(),
                        drift_grad: a.drift_grad().clone(),
                        pair_gram: SymMatrix::zeros(d),
                    }
                })
                .collect();
            let (g, _) = server.server_round(&uploads).unwrap();
            global = g;

            let mut grad_sum = Vector::zeros(d);
            for c in &centers {
                grad_sum.add_assign_scaled(&global.sub(c), 1.0);
            }
            if global.sub(&mean_center).norm() <= 1e-6 && grad_sum.norm() <= 1e-6 {
                converged_at = Some(round);
                break;
            }
        }
        let round = converged_at.unwrap_or_else(|| panic!("m={m}: no convergence in 500 rounds"));

        let local_grad_norms: Vec<f64> = centers.iter().map(|c| global.sub(c).norm()).collect();
        let max_grad = local_grad_norms.iter().copied().fold(0.0f64, f64::max);
        assert!(
            max_grad >= 0.1,
            "m={m}: local gradients collapsed ({local_grad_norms:?})"
        );
        println!(
            "  criterion 5 detail: m={m} converged at round {round}, max local gradient {max_grad:.3}"
        );
    }

    let elapsed = start.elapsed();
    assert_runtime("criterion 5", elapsed, Duration::from_secs(1));
    pass(
        "criterion 5 (consensus stationarity)",
        "m ∈ {2,5} reach mean(cᵢ) with cancelling local gradients".into(),
        elapsed,
    );
}

/// Criterion 6 — the logistic preference sampler is calibrated: for
/// score gaps {−2,−1,0,1,2}, empirical win frequencies over 10⁴ draws
/// lie within 3σ binomial bands of σ(Δs); Δs=1 lands in 0.7311 ± 0.015.
/// Runtime < 1 s.
#[test]
fn criterion_6_btl_calibration() {
    let start = Instant::now();
    let draws = 10_000;
    let mut details = Vec::new();
    for (i, gap) in [-2.0f64, -1.0, 0.0, 1.0, 2.0].into_iter().enumerate() {
        let arms = vec![
            fedpob_core::Arm {
                id: 0,
                text: None,
                embedding: Vector::from_vec(vec![1.0, 0.0]),
                true_score: gap,
            },
            fedpob_core::Arm {
                id: 1,
                text: None,
                embedding: Vector::from_vec(vec![0.0, 1.0]),
                true_score: 0.0,
            },
        ];
        let env = Environment::cached(ArmTable::from_arms(2, arms).unwrap());
        let mut gen = fedpob_core::rng::stream(999 + i as u64, 0, "btl");
        let wins = (0..draws)
            .filter(|_| env.preference_feedback(0, 1, &mut gen).unwrap())
            .count();
        let freq = wins as f64 / draws as f64;
        let p = fedpob_core::engine::sigmoid(gap);
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * sigma.max(1e-4),
            "gap {gap}: frequency {freq} outside 3σ of {p}"
        );
        if gap == 1.0 {
            assert!(
                (freq - 0.7311).abs() <= 0.015,
                "gap 1: frequency {freq} outside 0.7311 ± 0.015"
            );
        }
        details.push(format!("σ({gap})≈{freq:.4}"));
    }

    let elapsed = start.elapsed();
    assert_runtime("criterion 6", elapsed, Duration::from_secs(1));
    pass("criterion 6 (BTL calibration)", details.join(", "), elapsed);
}

/// Criterion 7 — preference-feedback collaboration trend on a cached
/// table (K=100, T=50, 20 repeats): mean final exploitation-arm score
/// non-decreasing in N ∈ {1,3,10}, with exactly 50 communication rounds
/// per agent. Runtime < 3 min.
#[test]
fn criterion_7_pref_collaboration_trend() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let table_path = dir.path().join("arms.csv");
    ArmTable::synthetic(16, 100, 77_001)
        .write_csv(&table_path)
        .unwrap();

    let mut config = base_config(Algo::FedpobPref);
    config.env = EnvKind::Cached;
    config.k = None;
    config.theta_star_seed = None;
    config.arm_table_path = Some(table_path);
    config.d = 16;
    config.rounds = 50;
    config.lr = 0.05;
    config.local_iters = 30;
    config.shared_fraction = 1.0;

    let rows = sweep(&config, SweepParam::NAgents, &[1.0, 3.0, 10.0], 20).unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_final_best_max).collect();
    assert!(
        means[1] >= means[0] && means[2] >= means[1],
        "final exploitation-arm score not non-decreasing in N: {means:?}"
    );
    for row in &rows {
        assert_eq!(
            row.mean_comm_rounds, 50.0,
            "N={}: expected exactly 50 communication rounds",
            row.value
        );
    }

    // ledger detail on one direct run: 50 comm rounds for every agent
    let mut direct = config.clone();
    direct.n_agents = 3;
    let (env, views) = prepare(&direct).unwrap();
    let output = run_prepared(&direct, env, &views, &RunOptions::default()).unwrap();
    for id in 0..3 {
        assert_eq!(output.ledger.agent(id).comm_rounds, 50);
    }

    let elapsed = start.elapsed();
    assert_runtime("criterion 7", elapsed, Duration::from_secs(180));
    pass(
        "criterion 7 (preference collaboration trend)",
        format!("means {means:?} non-decreasing, comm rounds = 50 per agent"),
        elapsed,
    );
}

/// Criterion 8 — transport equivalence: N=3 runs of both algorithms over
/// loopback sockets write trace files byte-identical to the in-process
/// transport under the same seeds. Runtime < 30 s.
#[test]
fn criterion_8_transport_equivalence() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    for algo in [Algo::Fedpob, Algo::FedpobPref] {
        let mut config = base_config(algo);
        config.n_agents = 3;
        config.rounds = 25;
        config.d = 6;
        config.k = Some(30);
        config.comm_threshold = 1.0;

        let tag = match algo {
            Algo::Fedpob => "score",
            Algo::FedpobPref => "pref",
        };
        let (env, views) = prepare(&config).unwrap();
        let inproc_out =
            run_prepared(&config, env.clone(), &views, &RunOptions::default()).unwrap();
        let inproc = write_run_artifacts(
            &config,
            &inproc_out,
            &dir.path().join(format!("{tag}-inproc")),
        )
        .unwrap();

        config.transport = Transport::Socket;
        let socket_out = run_prepared(&config, env, &views, &RunOptions::default()).unwrap();
        let socket = write_run_artifacts(
            &config,
            &socket_out,
            &dir.path().join(format!("{tag}-socket")),
        )
        .unwrap();

        assert_eq!(
            std::fs::read(&inproc.trace_path).unwrap(),
            std::fs::read(&socket.trace_path).unwrap(),
            "{algo:?}: socket trace differs from in-process trace"
        );
        assert_eq!(
            std::fs::read(&inproc.summary_path).unwrap(),
            std::fs::read(&socket.summary_path).unwrap(),
            "{algo:?}: socket summary differs from in-process summary"
        );
    }

    let elapsed = start.elapsed();
    assert_runtime("criterion 8", elapsed, Duration::from_secs(30));
    pass(
        "criterion 8 (transport equivalence)",
        "score + pref traces byte-identical across transports".into(),
        elapsed,
    );
}

/// Criterion 9 — determinism: the same config run twice yields
/// byte-identical trace.csv and summary.csv.
#[test]
fn criterion_9_run_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{
            "algo": "fedpob",
            "n_agents": 3,
            "rounds": 40,
            "d": 6,
            "env": "synthetic",
            "k": 30,
            "theta_star_seed": 11,
            "master_seed": 2001
        }"#,
    )
    .unwrap();
    let a = cmd_run(&config_path, Some(&dir.path().join("a"))).unwrap();
    let b = cmd_run(&config_path, Some(&dir.path().join("b"))).unwrap();
    assert_eq!(
        std::fs::read(&a.trace_path).unwrap(),
        std::fs::read(&b.trace_path).unwrap(),
        "trace.csv differs between repeat runs"
    );
    assert_eq!(
        std::fs::read(&a.summary_path).unwrap(),
        std::fs::read(&b.summary_path).unwrap(),
        "summary.csv differs between repeat runs"
    );

    // and a preference run through the same entry point
    let pref_path = dir.path().join("pref.json");
    std::fs::write(
        &pref_path,
        r#"{
            "algo": "fedpob-pref",
            "n_agents": 2,
            "rounds": 20,
            "d": 5,
            "env": "synthetic",
            "k": 15,
            "theta_star_seed": 12,
            "master_seed": 2002
        }"#,
    )
    .unwrap();
    let c = cmd_run(&pref_path, Some(&dir.path().join("c"))).unwrap();
    let d = cmd_run(&pref_path, Some(&dir.path().join("d"))).unwrap();
    assert_eq!(
        std::fs::read(&c.trace_path).unwrap(),
        std::fs::read(&d.trace_path).unwrap()
    );
    assert_eq!(
        std::fs::read(&c.summary_path).unwrap(),
        std::fs::read(&d.summary_path).unwrap()
    );

    let elapsed = start.elapsed();
    pass(
        "criterion 9 (determinism)",
        "repeat runs byte-identical for both algorithms".into(),
        elapsed,
    );
    let _ = Path::new("");
}
