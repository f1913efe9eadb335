use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::{evaluate, evaluation_seed, greedy_trajectory, AgentNets, TrajectoryRow, Trainer};

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

pub const CSV_HEADER: &str = "run_id,seed,step,metric,value";

pub fn metrics_csv(run_id: &str, seed: u64, rows: &[MetricRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{run_id},{seed},{},{},{}", r.step, r.metric, r.value).expect("string write");
    }
    s
}

pub const TRAJECTORY_HEADER: &str = "step,agent,action,reward,queue_total";

/// `queue_total` is left empty for environments without queues.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for r in rows {
        let q = r.queue_total.map(|q| q.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{},{q}", r.step, r.agent, r.action, r.reward).expect("string write");
    }
    s
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
    pub per_seed: Vec<f64>,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Aggregate {
        mean,
        stderr,
        per_seed: values.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: u64,
    pub final_metrics: BTreeMap<String, f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub name: String,
    pub config_hash: String,
    pub variant: String,
    pub env: String,
    pub seeds: Vec<u64>,
    pub train_steps: u64,
    /// Final evaluation metrics aggregated across seeds.
    pub metrics: BTreeMap<String, Aggregate>,
    /// Every evaluation step aggregated across seeds, keyed by metric then step.
    pub curves: BTreeMap<String, BTreeMap<u64, Aggregate>>,
    pub wall_time_secs: f64,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn metric(&self, name: &str) -> Result<&Aggregate> {
        self.metrics
            .get(name)
            .ok_or_else(|| Error::MissingMetric(format!("`{name}` not in summary `{}`", self.run_id)))
    }
}

/// Result of training one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub rows: Vec<MetricRow>,
    pub summary: SeedSummary,
    pub nets: AgentNets,
}

fn evaluation_rows(config: &RunConfig, nets: &AgentNets, step: u64, trainer: Option<&Trainer>) -> Result<Vec<MetricRow>> {
    let mut env = config.env.build()?;
    let metrics = evaluate(nets, env.as_mut(), config.eval.episodes, config.hyper.obs_scale)?;
    let mut rows: Vec<MetricRow> = metrics
        .into_iter()
        .map(|(metric, value)| MetricRow { step, metric, value })
        .collect();
    if let Some(loss) = trainer.and_then(Trainer::last_loss) {
        for (name, value) in [
            ("loss_vfn", loss.vfn),
            ("loss_prn", loss.prn),
            ("loss_opn", loss.opn),
            ("loss_total", loss.total),
        ] {
            rows.push(MetricRow {
                step,
                metric: name.to_string(),
                value,
            });
        }
    }
    Ok(rows)
}

/// Trains one seed in memory, evaluating at step 0, every `eval.every`
/// steps and at the end.
pub fn train_seed(config: &RunConfig, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let mut trainer = Trainer::new(
        config.variant,
        config.env.build()?,
        &config.nets,
        config.hyper.clone(),
        seed,
        config.train_steps,
    )?;
    let mut rows = evaluation_rows(config, trainer.nets(), 0, None)?;
    while trainer.steps() < config.train_steps {
        let next = (trainer.steps() / config.eval.every + 1) * config.eval.every;
        trainer.run_steps(next.min(config.train_steps) - trainer.steps())?;
        rows.extend(evaluation_rows(config, trainer.nets(), trainer.steps(), Some(&trainer))?);
        info!(
            "{} seed {seed}: step {}/{} eps {:.3}",
            config.name,
            trainer.steps(),
            config.train_steps,
            trainer.epsilon()
        );
    }
    let last = trainer.steps();
    let final_metrics = rows
        .iter()
        .filter(|r| r.step == last)
        .map(|r| (r.metric.clone(), r.value))
        .collect();
    Ok(SeedRun {
        summary: SeedSummary {
            run_id: config.run_id()?,
            config_hash: config.hash()?,
            seed,
            steps: last,
            final_metrics,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
        rows,
        nets: trainer.nets().clone(),
    })
}

pub fn checkpoint_stem(seed_dir: &Path) -> PathBuf {
    seed_dir.join("checkpoint")
}

fn write_seed(config: &RunConfig, run: &SeedRun) -> Result<()> {
    let dir = config.seed_dir(run.summary.seed)?;
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("metrics.csv"),
        metrics_csv(&run.summary.run_id, run.summary.seed, &run.rows),
    )?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run.summary)?)?;
    if config.checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("config_hash".to_string(), run.summary.config_hash.clone());
        meta.insert("run_id".to_string(), run.summary.run_id.clone());
        meta.insert("seed".to_string(), run.summary.seed.to_string());
        meta.insert("step".to_string(), run.summary.steps.to_string());
        run.nets.save(&checkpoint_stem(&dir), meta)?;
    }
    Ok(())
}

fn summarize(config: &RunConfig, runs: &[SeedRun], wall: f64) -> Result<RunSummary> {
    let mut finals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (k, &v) in &r.summary.final_metrics {
            finals.entry(k.clone()).or_default().push(v);
        }
    }
    let mut per_step: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in runs {
        for row in &r.rows {
            per_step
                .entry(row.metric.clone())
                .or_default()
                .entry(row.step)
                .or_default()
                .push(row.value);
        }
    }
    Ok(RunSummary {
        run_id: config.run_id()?,
        name: config.name.clone(),
        config_hash: config.hash()?,
        variant: config.variant.to_string(),
        env: config.env.label().to_string(),
        seeds: config.seeds.clone(),
        train_steps: config.train_steps,
        metrics: finals.iter().map(|(k, v)| (k.clone(), aggregate(v))).collect(),
        curves: per_step
            .iter()
            .map(|(k, steps)| (k.clone(), steps.iter().map(|(s, v)| (*s, aggregate(v))).collect()))
            .collect(),
        wall_time_secs: wall,
    })
}

/// Trains every seed, writing per-seed CSV, JSON and checkpoints plus the
/// run's config and aggregated summary. A failed seed leaves a `FAILED`
/// marker next to whatever it already wrote.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let start = Instant::now();
    let run_dir = config.run_dir()?;
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), config.to_json()?)?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        match train_seed(config, seed).and_then(|r| write_seed(config, &r).map(|_| r)) {
            Ok(r) => runs.push(r),
            Err(e) => {
                let dir = config.seed_dir(seed)?;
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("FAILED"), e.to_string())?;
                fs::write(run_dir.join("FAILED"), format!("seed {seed}: {e}"))?;
                return Err(e);
            }
        }
    }
    let summary = summarize(config, &runs, start.elapsed().as_secs_f64())?;
    fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn load_checkpoint(config: &RunConfig, stem: &Path) -> Result<AgentNets> {
    let env = config.env.build()?;
    // Initial values are overwritten by the checkpoint.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut nets = AgentNets::new(
        config.variant,
        env.topology().clone(),
        env.obs_size(),
        env.num_actions(),
        &config.nets,
        &mut rng,
    )?;
    nets.load(stem)?;
    Ok(nets)
}

/// Greedy evaluation of a saved checkpoint under `config`'s environment.
pub fn evaluate_checkpoint(config: &RunConfig, stem: &Path) -> Result<BTreeMap<String, f64>> {
    let nets = load_checkpoint(config, stem)?;
    let mut env = config.env.build()?;
    evaluate(&nets, env.as_mut(), config.eval.episodes, config.hyper.obs_scale)
}

/// The first evaluation episode of a saved checkpoint, step by step.
pub fn checkpoint_trajectory(config: &RunConfig, stem: &Path) -> Result<Vec<TrajectoryRow>> {
    let nets = load_checkpoint(config, stem)?;
    let mut env = config.env.build()?;
    greedy_trajectory(&nets, env.as_mut(), evaluation_seed(0), config.hyper.obs_scale)
}
