//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criteria 5 and 6 train 15 agents each and take most of the runtime. Set
//! `ACCEPTANCE_SKIP_TRAINING=1` to report them as skipped during development.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use dccp_marl::envs::{EnvSpec, SyncGridConfig, TrafficConfig};
use dccp_marl::experiment::{aggregate, compare_entries, metrics_csv, train_seed, Aggregate, RankedEntry, RunConfig};
use dccp_marl::nn::Parameterized;
use dccp_marl::trainer::{
    bellman_target, opn_loss_backward, prn_loss_backward, sync_target, update_on_batch, vfn_loss_backward, AgentNets,
    Carry, HyperParams, JointTransition, NetSizes, Optimizers, ReplayBuffer,
};
use dccp_marl::verify::{
    dccp_oracle_check, gradient_suite, mean_action_oracle_check, remainder_check, zero_compensation_check, Check,
};
use dccp_marl::vfn::AgentVariant;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    passed: Option<bool>,
    detail: String,
    secs: f64,
}

fn timed(f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = f();
    Outcome {
        passed: Some(passed),
        detail,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn summarize(checks: &[Check]) -> (bool, String) {
    let passed = checks.iter().all(|c| c.passed);
    let verbose = !passed || checks.len() <= 4;
    if !verbose {
        return (passed, format!("{} checks", checks.len()));
    }
    let detail = checks
        .iter()
        .filter(|c| passed || !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    (passed, detail)
}

fn criterion_1() -> (bool, String) {
    let r = gradient_suite(2024).expect("gradient suite runs");
    summarize(&r.checks)
}

fn criterion_2() -> (bool, String) {
    let c = dccp_oracle_check(200, 2024).expect("oracle runs");
    (c.passed, c.detail)
}

fn criterion_3() -> (bool, String) {
    summarize(&[
        mean_action_oracle_check(1000, 2024).expect("runs"),
        zero_compensation_check(100, 2024).expect("runs"),
        remainder_check(10_000, 2024).expect("runs"),
    ])
}

fn collect_batch(nets: &AgentNets, steps: usize) -> dccp_marl::trainer::Batch {
    let mut env = EnvSpec::TrafficGridLite(TrafficConfig::default()).build().unwrap();
    let hp = HyperParams {
        obs_scale: 0.1,
        ..HyperParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut buffer = ReplayBuffer::new(steps).unwrap();
    let mut obs = env.reset(5) * hp.obs_scale;
    let mut carry = Carry::zeros(nets.num_agents(), nets.obs_size(), nets.num_actions());
    for t in 0..steps {
        let out = dccp_marl::trainer::rollout_step(env.as_mut(), nets, obs.view(), &carry, t, 0.5, &hp, &mut rng).unwrap();
        buffer.push(out.transition);
        obs = out.next_obs;
        carry = out.carry;
    }
    buffer.batch(&(0..steps).collect::<Vec<_>>()).unwrap()
}

fn snapshot<P: Parameterized + ?Sized>(p: &P) -> Vec<Vec<f64>> {
    p.blocks().iter().map(|b| b.values().to_vec()).collect()
}

fn criterion_4() -> (bool, String) {
    let mut failures = Vec::new();
    let sizes = NetSizes {
        dqn_hidden: vec![16],
        encoder_hidden: 8,
        kernels: 2,
        kernel_size: 3,
    };
    let env = EnvSpec::TrafficGridLite(TrafficConfig::default()).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut nets =
        AgentNets::new(AgentVariant::Full, env.topology().clone(), env.obs_size(), env.num_actions(), &sizes, &mut rng)
            .unwrap();
    let batch = collect_batch(&nets, 16);

    // Gradient isolation.
    let zero = |n: &mut AgentNets| {
        n.vfn.zero_grad();
        n.prn.zero_grad();
        n.opn.zero_grad();
    };
    zero(&mut nets);
    vfn_loss_backward(&mut nets, &batch, 0.99).unwrap();
    let vfn_ok = !nets.vfn.grads_are_zero() && nets.prn.grads_are_zero() && nets.opn.grads_are_zero();
    zero(&mut nets);
    prn_loss_backward(&mut nets, &batch, 1.0).unwrap();
    let prn_ok = !nets.prn.grads_are_zero() && nets.vfn.grads_are_zero() && nets.opn.grads_are_zero();
    zero(&mut nets);
    opn_loss_backward(&mut nets, &batch, 1.0).unwrap();
    let opn_ok = !nets.opn.grads_are_zero() && nets.vfn.grads_are_zero() && nets.prn.grads_are_zero();
    if !(vfn_ok && prn_ok && opn_ok) {
        failures.push(format!("gradient isolation vfn={vfn_ok} prn={prn_ok} opn={opn_ok}"));
    }

    // Replay FIFO, every insert count up to 3x capacity.
    let cap = 8;
    let record = |t: usize| JointTransition {
        t,
        prev_obs: Array2::zeros((1, 1)),
        prev_q: Array2::zeros((1, 2)),
        obs: Array2::zeros((1, 1)),
        actions: vec![0],
        rewards: vec![0.0],
        q: Array2::zeros((1, 2)),
        next_obs: Array2::zeros((1, 1)),
        prev_mean_actions: Array2::zeros((1, 2)),
        mean_actions: Array2::zeros((1, 2)),
        terminal: false,
    };
    for total in 0..=3 * cap {
        let mut buf = ReplayBuffer::new(cap).unwrap();
        for t in 0..total {
            buf.push(record(t));
        }
        let held: Vec<usize> = buf.iter().map(|r| r.t).collect();
        let expected: Vec<usize> = (total.saturating_sub(cap)..total).collect();
        if held != expected {
            failures.push(format!("FIFO after {total} inserts held {held:?}"));
        }
    }

    // Target sync is a bitwise copy.
    for b in nets.vfn.blocks_mut() {
        for v in b.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let stale = snapshot(&nets.target);
    sync_target(&mut nets, 3, 4).unwrap();
    if snapshot(&nets.target) != stale {
        failures.push("target moved off-period".into());
    }
    sync_target(&mut nets, 8, 4).unwrap();
    if snapshot(&nets.target) != snapshot(&nets.vfn) {
        failures.push("target sync is not a bitwise copy".into());
    }

    // Zero coefficients leave the predictors bitwise unchanged.
    let hp = HyperParams {
        lambda_prn: 0.0,
        lambda_opn: 0.0,
        ..HyperParams::default()
    };
    let mut opts = Optimizers::new(&hp);
    let (prn0, opn0, vfn0) = (snapshot(&nets.prn), snapshot(&nets.opn), snapshot(&nets.vfn));
    for _ in 0..3 {
        update_on_batch(&mut nets, &mut opts, &hp, &batch).unwrap();
    }
    if snapshot(&nets.prn) != prn0 || snapshot(&nets.opn) != opn0 || snapshot(&nets.vfn) == vfn0 {
        failures.push("zero coefficients did not freeze exactly the predictors".into());
    }

    // Bellman target cases.
    let cases = [
        (bellman_target(1.0, &[5.0, 3.0], true, 0.9), 1.0),
        (bellman_target(1.0, &[2.0, -1.0], false, 0.9), 2.8),
        (bellman_target(-0.5, &[7.0], false, 0.0), -0.5),
    ];
    for (got, want) in cases {
        if (got - want).abs() > 1e-12 {
            failures.push(format!("bellman target {got} != {want}"));
        }
    }

    (failures.is_empty(), if failures.is_empty() { "all mechanics checks".into() } else { failures.join("; ") })
}

/// Trains every seed of `config`, running up to the machine's parallelism
/// at once, and returns the final metrics per seed in seed order.
fn train_all(config: &RunConfig) -> Vec<BTreeMap<String, f64>> {
    let width = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut out = Vec::new();
    for chunk in config.seeds.chunks(width) {
        let results: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| s.spawn(move || train_seed(config, seed).expect("training run").summary.final_metrics))
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread")).collect()
        });
        out.extend(results);
    }
    out
}

fn metric_across_seeds(config: &RunConfig, metric: &str) -> Aggregate {
    let finals = train_all(config);
    aggregate(&finals.iter().map(|m| m[metric]).collect::<Vec<_>>())
}

pub fn sync_grid_config(variant: AgentVariant) -> RunConfig {
    let mut c = RunConfig::new(
        format!("accept-sync-{variant}"),
        EnvSpec::SyncGrid(SyncGridConfig::default()),
        variant,
        SEEDS.to_vec(),
        30_000,
    );
    // Rewards do not depend on actions at other steps, so a short horizon of
    // credit assignment keeps the bootstrapped targets stable.
    c.hyper.gamma = 0.5;
    c.eval.every = 10_000;
    c.eval.episodes = 20;
    c.checkpoint = false;
    c
}

fn criterion_5() -> (bool, String) {
    let mut parts = Vec::new();
    let mut ok = true;
    for (variant, want_high) in [(AgentVariant::DccpOnly, true), (AgentVariant::Full, true), (AgentVariant::Iql, false)] {
        let agg = metric_across_seeds(&sync_grid_config(variant), "late_reward");
        let pass = if want_high { agg.mean >= 0.85 } else { agg.mean <= 0.60 };
        ok &= pass;
        parts.push(format!(
            "{variant} {:.3}±{:.3} ({} {})",
            agg.mean,
            agg.stderr,
            if want_high { ">= 0.85" } else { "<= 0.60" },
            if pass { "ok" } else { "MISSED" }
        ));
    }
    (ok, parts.join(", "))
}

pub fn traffic_config(variant: AgentVariant) -> RunConfig {
    let mut c = RunConfig::new(
        format!("accept-traffic-{variant}"),
        EnvSpec::TrafficGridLite(TrafficConfig::default()),
        variant,
        SEEDS.to_vec(),
        50_000,
    );
    c.hyper = HyperParams {
        gamma: 0.9,
        reward_scale: 0.05,
        obs_scale: 0.1,
        ..HyperParams::default()
    };
    c.eval.every = 10_000;
    c.eval.episodes = 10;
    c.checkpoint = false;
    c
}

fn criterion_6() -> (bool, String) {
    let labels = [
        ("full", AgentVariant::Full),
        ("dccp_only", AgentVariant::DccpOnly),
        ("iql", AgentVariant::Iql),
    ];
    let entries: Vec<RankedEntry> = labels
        .iter()
        .map(|&(label, v)| {
            let agg = metric_across_seeds(&traffic_config(v), "avg_queue_len");
            RankedEntry {
                label: label.into(),
                mean: agg.mean,
                stderr: agg.stderr,
            }
        })
        .collect();
    let report = compare_entries("avg_queue_len", entries.clone()).unwrap();
    let (full, dccp, iql) = (&entries[0], &entries[1], &entries[2]);
    let ordered = full.mean <= dccp.mean && dccp.mean <= iql.mean;
    let separated = report.separated_below("full", "iql");
    let detail = format!(
        "full {:.3}±{:.3}, dccp_only {:.3}±{:.3}, iql {:.3}±{:.3}; ordered={ordered}, full<iql separated={separated}",
        full.mean, full.stderr, dccp.mean, dccp.stderr, iql.mean, iql.stderr
    );
    (ordered && separated, detail)
}

fn criterion_7() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(
        "accept-determinism",
        EnvSpec::TrafficGridLite(TrafficConfig::default()),
        AgentVariant::Full,
        vec![7],
        600,
    );
    cfg.hyper.obs_scale = 0.1;
    cfg.eval.every = 200;
    cfg.eval.episodes = 2;
    cfg.output_dir = dir.path().to_path_buf();
    let a = train_seed(&cfg, 7).unwrap();
    let b = train_seed(&cfg, 7).unwrap();
    let id = cfg.run_id().unwrap();
    let same_csv = metrics_csv(&id, 7, &a.rows) == metrics_csv(&id, 7, &b.rows);

    let stem = dir.path().join("ckpt");
    a.nets.save(&stem, BTreeMap::new()).unwrap();
    let reloaded = dccp_marl::experiment::evaluate_checkpoint(&cfg, &stem).unwrap();
    let same_eval = a
        .summary
        .final_metrics
        .iter()
        .filter(|(k, _)| !k.starts_with("loss_"))
        .all(|(k, v)| reloaded.get(k) == Some(v));
    (
        same_csv && same_eval,
        format!("identical CSV={same_csv}, checkpoint reproduces metrics={same_eval}"),
    )
}

fn main() -> ExitCode {
    // Ignore libtest arguments such as `--nocapture` or filters.
    let skip_training = std::env::var("ACCEPTANCE_SKIP_TRAINING").is_ok_and(|v| v == "1");
    let criteria: [(&str, fn() -> (bool, String), bool); 7] = [
        ("1 gradient suite", criterion_1, false),
        ("2 convolution oracle", criterion_2, false),
        ("3 mean-field oracles", criterion_3, false),
        ("4 training mechanics", criterion_4, false),
        ("5 sync-grid communication benefit", criterion_5, true),
        ("6 traffic ablation ordering", criterion_6, true),
        ("7 determinism", criterion_7, false),
    ];
    let mut failed = 0;
    for (name, f, long) in criteria {
        let outcome = if long && skip_training {
            Outcome {
                passed: None,
                detail: "skipped (ACCEPTANCE_SKIP_TRAINING=1)".into(),
                secs: 0.0,
            }
        } else {
            timed(f)
        };
        let tag = match outcome.passed {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("acceptance {tag} criterion {name} [{:.1}s]: {}", outcome.secs, outcome.detail);
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
