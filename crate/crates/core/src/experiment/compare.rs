use std::fmt;

use serde::{Deserialize, Serialize};

use super::run::RunSummary;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
}

impl RankedEntry {
    /// One-standard-error interval.
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.stderr, self.mean + self.stderr)
    }
}

/// Relation between two neighbors in the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub lower: String,
    pub higher: String,
    pub difference: f64,
    pub tie: bool,
    /// The one-standard-error intervals do not overlap.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metric: String,
    /// Ascending by mean; ties keep input order.
    pub ranking: Vec<RankedEntry>,
    pub pairs: Vec<PairVerdict>,
}

pub fn separated(a: &RankedEntry, b: &RankedEntry) -> bool {
    (a.mean - b.mean).abs() > a.stderr + b.stderr
}

/// Ranks `(label, mean, stderr)` entries by mean.
pub fn compare_entries(metric: &str, entries: Vec<RankedEntry>) -> Result<ComparisonReport> {
    if entries.len() < 2 {
        return Err(config_err("comparison needs at least two summaries"));
    }
    let mut ranking = entries;
    ranking.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let pairs = ranking
        .windows(2)
        .map(|w| PairVerdict {
            lower: w[0].label.clone(),
            higher: w[1].label.clone(),
            difference: w[1].mean - w[0].mean,
            tie: w[1].mean == w[0].mean,
            separated: separated(&w[0], &w[1]),
        })
        .collect();
    Ok(ComparisonReport {
        metric: metric.to_string(),
        ranking,
        pairs,
    })
}

/// Ranks run summaries on the final value of `metric`, labelled by run name.
pub fn compare(summaries: &[RunSummary], metric: &str) -> Result<ComparisonReport> {
    let entries = summaries
        .iter()
        .map(|s| {
            let agg = s.metric(metric)?;
            Ok(RankedEntry {
                label: s.name.clone(),
                mean: agg.mean,
                stderr: agg.stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    compare_entries(metric, entries)
}

impl ComparisonReport {
    pub fn entry(&self, label: &str) -> Option<&RankedEntry> {
        self.ranking.iter().find(|e| e.label == label)
    }

    /// `a` ranks strictly below `b` and their intervals do not overlap.
    pub fn separated_below(&self, a: &str, b: &str) -> bool {
        match (self.entry(a), self.entry(b)) {
            (Some(x), Some(y)) => x.mean < y.mean && separated(x, y),
            _ => false,
        }
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric: {}", self.metric)?;
        for (i, e) in self.ranking.iter().enumerate() {
            let (lo, hi) = e.interval();
            writeln!(f, "{:>2}. {:<24} {:>12.6} ± {:<10.6} [{lo:.6}, {hi:.6}]", i + 1, e.label, e.mean, e.stderr)?;
        }
        for p in &self.pairs {
            let verdict = if p.tie {
                "tie"
            } else if p.separated {
                "separated"
            } else {
                "not separated"
            };
            writeln!(f, "{} < {}: Δ = {:.6} ({verdict})", p.lower, p.higher, p.difference)?;
        }
        Ok(())
    }
}
