//! Independent replays run in parallel and merged by seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{MarketData, VariantSpec};
use crate::risk::RiskConfig;

use super::{replay, ReplayConfig, ReplayReport};

/// One replay of a batch. `label` distinguishes runs sharing a seed.
#[derive(Clone, Debug)]
pub struct BatchRun {
    pub label: String,
    pub spec: VariantSpec,
    pub data: MarketData,
    pub risk: RiskConfig,
    pub config: ReplayConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub label: String,
    pub seed: u64,
    pub report: Option<ReplayReport>,
    /// Validation failure that prevented the run.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub entries: Vec<BatchEntry>,
    pub runs: usize,
    pub complete: usize,
    pub failed: usize,
    pub liquidation_count: usize,
    pub bad_debt_count: usize,
    pub bad_debt_total: f64,
}

/// Runs every replay and returns the entries ordered by `(seed, label)`, so
/// the aggregate does not depend on scheduling or input order.
pub fn batch_replay(runs: &[BatchRun]) -> BatchReport {
    let mut entries: Vec<BatchEntry> = runs
        .par_iter()
        .map(|r| {
            let (report, error) = match replay(&r.spec, &r.data, &r.risk, &r.config) {
                Ok(rep) => (Some(rep), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BatchEntry {
                label: r.label.clone(),
                seed: r.config.seed,
                report,
                error,
            }
        })
        .collect();
    entries.sort_by(|a, b| a.seed.cmp(&b.seed).then_with(|| a.label.cmp(&b.label)));
    let mut out = BatchReport {
        runs: entries.len(),
        ..BatchReport::default()
    };
    for e in &entries {
        match &e.report {
            Some(r) if r.meta.complete => out.complete += 1,
            _ => out.failed += 1,
        }
        if let Some(r) = &e.report {
            out.liquidation_count += r.stats.liquidation_count;
            out.bad_debt_count += r.stats.bad_debt_count;
            out.bad_debt_total += r.bad_debt_total;
        }
    }
    out.entries = entries;
    out
}
