use std::fs;

use dccp_marl::envs::{EnvSpec, SyncGridConfig, TrafficConfig};
use dccp_marl::experiment::{
    checkpoint_stem, checkpoint_trajectory, compare, evaluate_checkpoint, run, RunConfig, RunSummary, CSV_HEADER,
};
use dccp_marl::trainer::{HyperParams, NetSizes};
use dccp_marl::vfn::AgentVariant;

fn small(name: &str, env: EnvSpec, variant: AgentVariant, seeds: Vec<u64>, steps: u64, dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::new(name, env, variant, seeds, steps);
    c.nets = NetSizes {
        dqn_hidden: vec![16],
        encoder_hidden: 8,
        kernels: 2,
        kernel_size: 3,
    };
    c.hyper = HyperParams {
        batch_size: 8,
        capacity: 256,
        target_period: 50,
        obs_scale: 0.1,
        ..HyperParams::default()
    };
    c.eval.every = 100;
    c.eval.episodes = 2;
    c.output_dir = dir.to_path_buf();
    c
}

#[test]
fn zero_steps_gives_step_zero_rows_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(
        "zero",
        EnvSpec::SyncGrid(SyncGridConfig::default()),
        AgentVariant::Full,
        vec![1, 2],
        0,
        dir.path(),
    );
    let summary = run(&cfg).unwrap();
    assert_eq!(summary.seeds, vec![1, 2]);
    for seed in [1, 2] {
        let csv = fs::read_to_string(cfg.seed_dir(seed).unwrap().join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let rows: Vec<&str> = lines.collect();
        assert!(!rows.is_empty());
        for r in rows {
            let f: Vec<&str> = r.split(',').collect();
            assert_eq!(f[0], summary.run_id);
            assert_eq!(f[1], seed.to_string());
            assert_eq!(f[2], "0");
        }
    }
    let late = summary.metric("late_reward").unwrap();
    assert_eq!(late.per_seed.len(), 2);
    assert_eq!(summary.curves["late_reward"].keys().copied().collect::<Vec<_>>(), vec![0]);
}

#[test]
fn identical_reruns_write_identical_csv() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let env = EnvSpec::TrafficGridLite(TrafficConfig::default());
    let a = small("det", env.clone(), AgentVariant::Full, vec![3], 300, d1.path());
    let b = small("det", env, AgentVariant::Full, vec![3], 300, d2.path());
    let sa = run(&a).unwrap();
    let sb = run(&b).unwrap();
    // The output directory is not part of the identity of a run.
    assert_eq!(sa.run_id, sb.run_id);
    let ca = fs::read(a.seed_dir(3).unwrap().join("metrics.csv")).unwrap();
    let cb = fs::read(b.seed_dir(3).unwrap().join("metrics.csv")).unwrap();
    assert_eq!(ca, cb);
    assert!(String::from_utf8(ca).unwrap().contains(",300,loss_vfn,"));
}

#[test]
fn checkpoint_reload_reproduces_final_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(
        "ckpt",
        EnvSpec::TrafficGridLite(TrafficConfig::default()),
        AgentVariant::Full,
        vec![4],
        250,
        dir.path(),
    );
    let summary = run(&cfg).unwrap();
    let stem = checkpoint_stem(&cfg.seed_dir(4).unwrap());
    let metrics = evaluate_checkpoint(&cfg, &stem).unwrap();
    for (k, agg) in &summary.metrics {
        if k.starts_with("loss_") {
            continue;
        }
        assert_eq!(metrics[k], agg.per_seed[0], "{k}");
    }
    let traj = checkpoint_trajectory(&cfg, &stem).unwrap();
    assert_eq!(traj.len(), 144 * 9);
    assert!(traj.iter().all(|r| r.queue_total.is_some()));
}

#[test]
fn checkpoint_of_another_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvSpec::SyncGrid(SyncGridConfig::default());
    let cfg = small("v", env.clone(), AgentVariant::Iql, vec![1], 0, dir.path());
    run(&cfg).unwrap();
    let other = small("v", env, AgentVariant::DccpOnly, vec![1], 0, dir.path());
    assert!(evaluate_checkpoint(&other, &checkpoint_stem(&cfg.seed_dir(1).unwrap())).is_err());
}

#[test]
fn outputs_carry_config_hash_and_distinct_paths() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvSpec::SyncGrid(SyncGridConfig::default());
    let a = small("h", env.clone(), AgentVariant::Iql, vec![1], 0, dir.path());
    let mut b = a.clone();
    b.hyper.gamma = 0.5;
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    assert_ne!(a.run_dir().unwrap(), b.run_dir().unwrap());
    let sa = run(&a).unwrap();
    let seed_summary = fs::read_to_string(a.seed_dir(1).unwrap().join("summary.json")).unwrap();
    assert!(seed_summary.contains(&sa.config_hash));
    let saved = RunConfig::load(&a.run_dir().unwrap().join("config.json")).unwrap();
    assert_eq!(saved, a);
    let loaded = RunSummary::load(&a.run_dir().unwrap().join("summary.json")).unwrap();
    assert_eq!(loaded, sa);
}

#[test]
fn compare_ranks_saved_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvSpec::SyncGrid(SyncGridConfig::default());
    let a = run(&small("a", env.clone(), AgentVariant::Iql, vec![1, 2], 0, dir.path())).unwrap();
    let b = run(&small("b", env, AgentVariant::Mfq, vec![1, 2], 0, dir.path())).unwrap();
    let report = compare(&[a, b], "late_reward").unwrap();
    assert_eq!(report.ranking.len(), 2);
    assert!(report.ranking[0].mean <= report.ranking[1].mean);
    assert!(compare(&report_inputs(), "nope").is_err());
}

fn report_inputs() -> Vec<RunSummary> {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvSpec::SyncGrid(SyncGridConfig::default());
    vec![
        run(&small("x", env.clone(), AgentVariant::Iql, vec![1], 0, dir.path())).unwrap(),
        run(&small("y", env, AgentVariant::Iql, vec![2], 0, dir.path())).unwrap(),
    ]
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.env.build().unwrap();
        n += 1;
    }
    assert!(n >= 2);
}
