//! Deterministic event-driven replay of one contract over aligned leg data.
//!
//! Events are merged in the total order of [`crate::model::event_order`] and
//! processed one timestamp at a time. Every stochastic choice (synthetic
//! basis, scripted populations) draws from a ChaCha stream seeded by the run
//! seed, so identical inputs give byte-identical reports.

mod batch;
mod engine;
mod harness;
mod synth;

pub use batch::{batch_replay, BatchEntry, BatchReport, BatchRun};
pub use engine::VariantEngine;
pub use harness::{build_index, replay, replay_validated};
pub use synth::{bridge_leg, generate_bridge_path, generate_negrisk_group, BRIDGE_EPSILON};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructors::{ConstructError, Discontinuity, PointStatus};
use crate::model::{
    AlignError, LegId, SpecError, StateError, TimeMs, TraderOrder, VariantKind, DEFAULT_GRID_MS,
};
use crate::risk::RiskError;
use crate::schedule::{HaltConfig, HaltWindow, ScheduleError};
use crate::settlement::{SettlementError, SettlementRecord};

/// Reserved account name of the counterparty to every trader fill.
pub const HOUSE: &str = "house";

pub const REFLEXIVITY_CAVEAT: &str = "REFLEXIVITY-CAVEAT";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("spec validation failed: {}", join(.0))]
    Spec(Vec<SpecError>),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error(transparent)]
    Settlement(#[from] SettlementError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid replay configuration: {0}")]
    Config(String),
}

fn join(errs: &[SpecError]) -> String {
    errs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Mean-reverting synthetic basis added to the index to form the mark.
/// `sigma = 0` gives mark = index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisOverlay {
    /// Mean-reversion speed per day.
    #[serde(default)]
    pub theta_per_day: f64,
    /// Stationary standard deviation of the basis.
    #[serde(default)]
    pub sigma: f64,
}

/// Seeded scripted population: each trader places `orders_per_trader`
/// orders at uniformly drawn grid times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub traders: usize,
    #[serde(default = "Population::default_orders")]
    pub orders_per_trader: usize,
    #[serde(default = "Population::default_notional")]
    pub notional: (f64, f64),
    #[serde(default = "Population::default_leverage")]
    pub leverage: (f64, f64),
    #[serde(default = "Population::default_long_fraction")]
    pub long_fraction: f64,
    /// Order times are drawn inside `[from_ms, to_ms]`; defaults to the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_ms: Option<TimeMs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_ms: Option<TimeMs>,
}

impl Population {
    fn default_orders() -> usize {
        1
    }
    fn default_notional() -> (f64, f64) {
        (10.0, 100.0)
    }
    fn default_leverage() -> (f64, f64) {
        (1.0, 3.0)
    }
    fn default_long_fraction() -> f64 {
        0.5
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    Tick,
    /// Drops the per-tick and per-funding series.
    Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    #[serde(default = "ReplayConfig::default_grid")]
    pub grid_ms: TimeMs,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub halt: HaltConfig,
    #[serde(default)]
    pub basis: BasisOverlay,
    #[serde(default)]
    pub report_granularity: Granularity,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<TraderOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<Population>,
}

impl ReplayConfig {
    fn default_grid() -> TimeMs {
        DEFAULT_GRID_MS
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let bad = |m: &str| Err(ReplayError::Config(m.to_string()));
        if self.grid_ms <= 0 {
            return bad("grid_ms must be positive");
        }
        if self.halt.delta_r_ms < 0 || self.halt.settle_lag_ms < 0 {
            return bad("halt windows must be non-negative");
        }
        if !(self.basis.sigma >= 0.0 && self.basis.theta_per_day >= 0.0) {
            return bad("basis overlay parameters must be non-negative");
        }
        if self.orders.iter().any(|o| o.trader_id == HOUSE) {
            return bad("trader id `house` is reserved");
        }
        if let Some(p) = &self.population {
            if !(0.0..=1.0).contains(&p.long_fraction) {
                return bad("population.long_fraction must lie in [0, 1]");
            }
            if !(p.notional.0 > 0.0 && p.notional.0 <= p.notional.1) {
                return bad("population.notional must be a positive range");
            }
            if !(p.leverage.0 > 0.0 && p.leverage.0 <= p.leverage.1) {
                return bad("population.leverage must be a positive range");
            }
        }
        Ok(())
    }
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            grid_ms: DEFAULT_GRID_MS,
            seed: 0,
            halt: HaltConfig::default(),
            basis: BasisOverlay::default(),
            report_granularity: Granularity::Tick,
            orders: Vec::new(),
            population: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub variant: VariantKind,
    pub seed: u64,
    pub grid_ms: TimeMs,
    pub start_ms: TimeMs,
    pub end_ms: TimeMs,
    pub complete: bool,
    pub caveats: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: TimeMs,
    pub index: f64,
    pub mark: f64,
    pub status: PointStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FundingRecord {
    pub time: TimeMs,
    pub rate: f64,
    pub mark: f64,
    pub index: f64,
    /// Number of trader/house transfer pairs settled at this tick.
    pub transfers: usize,
    /// Sum received by traders.
    pub trader_total: f64,
    /// Sum over every settled transfer, traders and house.
    pub net: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiquidationRecord {
    pub time: TimeMs,
    pub trader_id: String,
    pub side: crate::model::Side,
    pub notional: f64,
    pub fill_price: f64,
    pub equity_after_fill: f64,
    pub shortfall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollEvent {
    pub time: TimeMs,
    pub from_leg: LegId,
    pub to_leg: LegId,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub index_before: f64,
    pub index_after: f64,
    pub basis_rule: String,
    /// Sum over positions of the basis PnL of this step.
    pub basis_pnl: f64,
    /// Cash paid to traders at this step.
    pub cash: f64,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRejection {
    pub time: TimeMs,
    pub trader_id: String,
    pub reason: String,
}

/// Equity change of one account over the replay.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub account: String,
    pub realized: f64,
    pub funding: f64,
    pub roll_cash: f64,
    /// Loss written off by liquidation or settlement below zero equity.
    pub bad_debt_relief: f64,
    pub unrealized: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayStats {
    pub orders_submitted: usize,
    pub orders_executed: usize,
    pub rejected_halt: usize,
    pub rejected_leverage: usize,
    pub rejected_margin: usize,
    pub rejected_phase: usize,
    /// Executions inside the scheduled halt windows, whether or not halts
    /// were enforced.
    pub in_window_executions: usize,
    pub liquidation_count: usize,
    pub bad_debt_count: usize,
    /// `sum(account totals) - bad_debt_total`.
    pub conservation_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub meta: ReportMeta,
    pub ticks: Vec<TickRecord>,
    pub funding: Vec<FundingRecord>,
    pub liquidations: Vec<LiquidationRecord>,
    pub bad_debt_total: f64,
    pub halt_windows: Vec<HaltWindow>,
    pub roll_events: Vec<RollEvent>,
    pub discontinuities: Vec<Discontinuity>,
    /// Roll conversions in order, then the final record.
    pub settlements: Vec<SettlementRecord>,
    pub rejections: Vec<OrderRejection>,
    pub accounts: Vec<AccountRecord>,
    pub stats: ReplayStats,
}

impl ReplayReport {
    /// The record that ended the contract, or the end-of-data record.
    pub fn final_settlement(&self) -> Option<&SettlementRecord> {
        self.settlements.last()
    }

    /// Per-tick index values.
    pub fn index_values(&self) -> Vec<f64> {
        self.ticks.iter().map(|t| t.index).collect()
    }
}
