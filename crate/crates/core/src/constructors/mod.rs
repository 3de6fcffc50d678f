//! Transforms from aligned per-leg series to each variant's contract-level
//! underlying.
//!
//! Every constructor comes in two shapes: a scalar step that the replay
//! engine calls once per grid tick, and a batch function over aligned
//! columns that returns an [`IndexSeries`].

mod basket;
mod conditional;
mod entropy;
mod funding_target;
mod liquidity;
mod spread;
mod variance;

pub use basket::{basket_index, basket_value, rebalance_weights, Discontinuity, RebalanceOutcome};
pub use conditional::{conditional_index, conditional_step, negrisk_conditional, ConditionalStep};
pub use entropy::{binary_entropy, entropy_index};
pub use funding_target::{funding_target, funding_target_value};
pub use liquidity::{amihud_ratio, liquidity_index, median, LiquidityConfig, AMIHUD_PRICE_FLOOR};
pub use spread::{spread_index, spread_value, SpreadFrozen};
pub use variance::{variance_index, RollingVariance, VarianceConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LegId, TimeMs, VariantKind};

/// Declared value range of an underlying. `hi = +inf` marks open support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub const UNIT: Support = Support { lo: 0.0, hi: 1.0 };
    pub const SIGNED_UNIT: Support = Support { lo: -1.0, hi: 1.0 };
    pub const LEVEL_VARIANCE: Support = Support { lo: 0.0, hi: 0.25 };
    pub const NON_NEGATIVE: Support = Support {
        lo: 0.0,
        hi: f64::INFINITY,
    };
    pub const REAL_LINE: Support = Support {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    #[default]
    Valid,
    /// Denominator under the floor; the value is the carried-forward fallback.
    Clipped,
    /// Denominator under the floor with the halt action; trading is halted and
    /// the value is only a carried-forward placeholder.
    Halted,
}

/// A constructed underlying on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub timestamps: Vec<TimeMs>,
    pub values: Vec<f64>,
    pub flags: Vec<PointStatus>,
    pub support: Support,
    pub provenance: VariantKind,
}

impl IndexSeries {
    pub fn new(provenance: VariantKind, support: Support) -> Self {
        Self {
            timestamps: Vec::new(),
            values: Vec::new(),
            flags: Vec::new(),
            support,
            provenance,
        }
    }

    pub fn push(&mut self, time: TimeMs, value: f64, flag: PointStatus) {
        self.timestamps.push(time);
        self.values.push(value);
        self.flags.push(flag);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last value at or before `t` (LOCF), if any.
    pub fn value_at(&self, t: TimeMs) -> Option<f64> {
        match self.timestamps.partition_point(|&x| x <= t) {
            0 => None,
            k => Some(self.values[k - 1]),
        }
    }

    pub fn all_in_support(&self) -> bool {
        self.values.iter().all(|&v| self.support.contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstructError {
    #[error("conditional legs must differ, got {0} twice")]
    SameLeg(LegId),
    #[error("{weights} weights for {legs} legs")]
    WeightMismatch { weights: usize, legs: usize },
    #[error("no surviving legs remain after resolution of leg {0}")]
    AllLegsResolved(usize),
    #[error("leg index {index} out of range for {legs} legs")]
    LegOutOfRange { index: usize, legs: usize },
    #[error("series covers {covered_ms} ms, shorter than window {window_ms} ms")]
    WindowTooShort { covered_ms: TimeMs, window_ms: TimeMs },
    #[error("tick {tick_ms} ms is not a positive multiple of grid {grid_ms} ms")]
    MisalignedTick { tick_ms: TimeMs, grid_ms: TimeMs },
    #[error("leg {leg} lacks the `{series}` series")]
    MissingMicrostructureSeries { leg: LegId, series: &'static str },
    #[error("funding target `disagreement` is unsupported")]
    UnsupportedTarget,
    #[error("column lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

fn check_len(a: usize, b: usize) -> Result<(), ConstructError> {
    if a == b {
        Ok(())
    } else {
        Err(ConstructError::LengthMismatch(a, b))
    }
}
