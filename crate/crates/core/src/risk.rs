//! Margin, leverage caps, funding and liquidation accounting.
//!
//! PnL convention: one contract unit pays `(mark - entry)` per unit of
//! notional, in collateral units.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Position, SettlementCadence, Side, TimeMs, VariantKind, DAY_MS, HOUR_MS};

/// Corrections below this are treated as this value, so a degenerate index
/// never produces a non-finite rate.
pub const MIN_CORRECTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("funding correction `{correction}` is incompatible with variant `{variant}`")]
    IncompatibleCorrection {
        correction: &'static str,
        variant: VariantKind,
    },
    #[error("invalid risk parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> RiskError {
    RiskError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Max,
    #[default]
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginSchedule {
    #[serde(default = "MarginSchedule::default_m0")]
    pub m0: f64,
    #[serde(default = "MarginSchedule::default_m_j")]
    pub m_j: f64,
    #[serde(default = "MarginSchedule::default_horizon")]
    pub proximity_horizon_ms: TimeMs,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl MarginSchedule {
    fn default_m0() -> f64 {
        0.05
    }
    fn default_m_j() -> f64 {
        1.0
    }
    fn default_horizon() -> TimeMs {
        DAY_MS
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if !(0.0..=1.0).contains(&self.m0) {
            return Err(invalid("m0", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.m_j) {
            return Err(invalid("m_j", "must lie in [0, 1]"));
        }
        if self.proximity_horizon_ms < 0 {
            return Err(invalid("proximity_horizon_ms", "must be non-negative"));
        }
        Ok(())
    }
}

impl Default for MarginSchedule {
    fn default() -> Self {
        Self {
            m0: Self::default_m0(),
            m_j: Self::default_m_j(),
            proximity_horizon_ms: Self::default_horizon(),
            aggregation: Aggregation::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Correction {
    PerLegMin,
    VarianceFloor { epsilon: f64 },
    None,
}

impl Correction {
    pub fn tag(&self) -> &'static str {
        match self {
            Correction::PerLegMin => "per-leg-min",
            Correction::VarianceFloor { .. } => "variance-floor",
            Correction::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundingParams {
    #[serde(default = "FundingParams::default_kappa")]
    pub kappa: f64,
    /// `None` picks the variant's natural correction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
    #[serde(default = "FundingParams::default_clip")]
    pub clip: (f64, f64),
    #[serde(default = "FundingParams::default_interval")]
    pub interval_ms: TimeMs,
    #[serde(default)]
    pub cadence: SettlementCadence,
}

impl FundingParams {
    fn default_kappa() -> f64 {
        1.0
    }
    fn default_clip() -> (f64, f64) {
        (-0.05, 0.05)
    }
    fn default_interval() -> TimeMs {
        HOUR_MS
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let (lo, hi) = self.clip;
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(invalid("clip", "requires lo <= 0 <= hi"));
        }
        if self.interval_ms <= 0 {
            return Err(invalid("interval_ms", "must be positive"));
        }
        if !self.kappa.is_finite() {
            return Err(invalid("kappa", "must be finite"));
        }
        if let Some(Correction::VarianceFloor { epsilon }) = self.correction {
            if !(epsilon > 0.0) {
                return Err(invalid("correction.epsilon", "must be positive"));
            }
        }
        if let SettlementCadence::Periodic { interval_ms } = self.cadence {
            if interval_ms <= 0 {
                return Err(invalid("cadence.interval_ms", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Floor used when a variance contract does not configure its own.
pub const DEFAULT_VARIANCE_EPSILON: f64 = 1e-4;

impl FundingParams {
    /// Configured correction, or per-leg-min for probability-supported
    /// underlyings, variance-floor for variance, none otherwise.
    pub fn correction_for(&self, variant: VariantKind) -> Correction {
        self.correction.unwrap_or(match variant {
            VariantKind::Conditional | VariantKind::Spread | VariantKind::Basket | VariantKind::Rolling => {
                Correction::PerLegMin
            }
            VariantKind::Variance => Correction::VarianceFloor {
                epsilon: DEFAULT_VARIANCE_EPSILON,
            },
            _ => Correction::None,
        })
    }
}

impl Default for FundingParams {
    fn default() -> Self {
        Self {
            kappa: Self::default_kappa(),
            correction: None,
            clip: Self::default_clip(),
            interval_ms: Self::default_interval(),
            cadence: SettlementCadence::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeverageSchedule {
    #[serde(default = "LeverageSchedule::default_base")]
    pub l_base: f64,
    #[serde(default = "LeverageSchedule::default_floor")]
    pub l_floor: f64,
    #[serde(default = "LeverageSchedule::default_ramp")]
    pub ramp_ms: TimeMs,
}

impl LeverageSchedule {
    fn default_base() -> f64 {
        10.0
    }
    fn default_floor() -> f64 {
        2.0
    }
    fn default_ramp() -> TimeMs {
        7 * DAY_MS
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.l_floor >= 1.0 && self.l_base >= self.l_floor) {
            return Err(invalid("leverage", "requires 1 <= l_floor <= l_base"));
        }
        if self.ramp_ms < 0 {
            return Err(invalid("ramp_ms", "must be non-negative"));
        }
        Ok(())
    }
}

impl Default for LeverageSchedule {
    fn default() -> Self {
        Self {
            l_base: Self::default_base(),
            l_floor: Self::default_floor(),
            ramp_ms: Self::default_ramp(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    #[serde(default)]
    pub margin: MarginSchedule,
    #[serde(default)]
    pub funding: FundingParams,
    #[serde(default)]
    pub leverage: LeverageSchedule,
    /// Liquidations fill at `index - slippage` for longs, `index + slippage`
    /// for shorts.
    #[serde(default)]
    pub liquidation_slippage: f64,
    /// Overrides the spread simultaneous-resolution margin regime; by default
    /// it is on when the two legs resolve within one grid step.
    #[serde(default)]
    pub spread_simultaneous: Option<bool>,
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        self.margin.validate()?;
        self.funding.validate()?;
        self.leverage.validate()?;
        if !(self.liquidation_slippage >= 0.0) {
            return Err(invalid("liquidation_slippage", "must be non-negative"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Margin and leverage
// ---------------------------------------------------------------------------

/// Variant state relevant to the worst-case terminal move of one contract
/// unit. Resolved legs are `None` (spread) or inactive (basket).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JumpState<'a> {
    /// No terminal collapse (variance, entropy, liquidity, funding-only).
    Continuous,
    /// Single collapsing index in [0, 1] (conditional, rolling constituent).
    Single { index: f64 },
    Spread {
        a: Option<f64>,
        b: Option<f64>,
        simultaneous: bool,
    },
    Basket {
        weights: &'a [f64],
        values: &'a [f64],
        active: &'a [bool],
    },
}

fn adverse(p: f64, side: Side) -> f64 {
    match side {
        Side::Long => p,
        Side::Short => 1.0 - p,
    }
}

/// Largest adverse move of one contract unit if the pending resolutions
/// happen now.
pub fn jump_magnitude(state: JumpState<'_>, side: Side, aggregation: Aggregation) -> f64 {
    match state {
        JumpState::Continuous => 0.0,
        JumpState::Single { index } => adverse(index, side).clamp(0.0, 1.0),
        JumpState::Spread { a, b, simultaneous } => {
            // long the spread loses when A falls or B rises
            let da = a.map(|p| adverse(p, side).clamp(0.0, 1.0));
            let db = b.map(|p| adverse(p, side.opposite()).clamp(0.0, 1.0));
            match (da, db) {
                (Some(x), Some(y)) if simultaneous => (x + y).min(2.0),
                (Some(x), Some(y)) => x.max(y),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => 0.0,
            }
        }
        JumpState::Basket {
            weights,
            values,
            active,
        } => {
            let terms = weights
                .iter()
                .zip(values)
                .zip(active)
                .filter(|(_, &on)| on)
                .map(|((w, &v), _)| w * adverse(v, side).clamp(0.0, 1.0));
            match aggregation {
                Aggregation::Max => terms.fold(0.0, f64::max),
                Aggregation::Sum => terms.sum(),
            }
        }
    }
}

/// Activation of the jump term: 1 inside the proximity horizon, decaying as
/// `horizon / ttc` outside it, 0 when no resolution is scheduled.
pub fn proximity_factor(time_to_tau: Option<TimeMs>, horizon_ms: TimeMs) -> f64 {
    match time_to_tau {
        None => 0.0,
        Some(ttc) if ttc <= horizon_ms => 1.0,
        Some(ttc) => horizon_ms as f64 / ttc as f64,
    }
}

/// `notional * (m0 + m_J * jump * phi)`, capped at notional. `force_full`
/// pins `phi` to 1 (roll overlapping the resolution zone).
pub fn maintenance_margin(
    notional: f64,
    jump: f64,
    time_to_tau: Option<TimeMs>,
    schedule: &MarginSchedule,
    force_full: bool,
) -> f64 {
    let phi = if force_full {
        1.0
    } else {
        proximity_factor(time_to_tau, schedule.proximity_horizon_ms)
    };
    let frac = (schedule.m0 + schedule.m_j * jump * phi).min(1.0);
    notional * frac
}

/// Leverage cap, ramping linearly from `l_base` at `tau - ramp` down to
/// `l_floor` at `tau`.
pub fn max_leverage(time_to_tau: Option<TimeMs>, schedule: &LeverageSchedule) -> f64 {
    match time_to_tau {
        None => schedule.l_base,
        Some(ttc) if ttc >= schedule.ramp_ms => schedule.l_base,
        Some(ttc) if ttc <= 0 => schedule.l_floor,
        Some(ttc) => {
            let frac = ttc as f64 / schedule.ramp_ms as f64;
            schedule.l_floor + (schedule.l_base - schedule.l_floor) * frac
        }
    }
}

// ---------------------------------------------------------------------------
// Funding
// ---------------------------------------------------------------------------

/// Index information the boundary correction needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FundingBase<'a> {
    /// Single probability-supported index.
    Probability {
        index: f64,
    },
    /// Spread: current values of the still-unresolved legs.
    Spread {
        unresolved: &'a [f64],
    },
    Variance {
        index: f64,
    },
    /// Open-support underlyings; only the `none` correction applies.
    Unbounded,
}

fn per_leg(p: f64) -> f64 {
    p.min(1.0 - p).max(MIN_CORRECTION)
}

/// `clip(kappa * (mark - index) / C)` with the variant's correction `C`.
pub fn funding_rate(
    mark: f64,
    index: f64,
    params: &FundingParams,
    base: FundingBase<'_>,
    variant: VariantKind,
) -> Result<f64, RiskError> {
    let basis = mark - index;
    let correction = params.correction_for(variant);
    let incompatible = || RiskError::IncompatibleCorrection {
        correction: correction.tag(),
        variant,
    };
    let scaled = match (correction, base) {
        (Correction::None, _) => basis,
        (Correction::PerLegMin, FundingBase::Probability { index }) => basis / per_leg(index),
        (Correction::PerLegMin, FundingBase::Spread { unresolved }) => {
            if unresolved.is_empty() {
                basis
            } else {
                let share = basis / unresolved.len() as f64;
                unresolved.iter().map(|&p| share / per_leg(p)).sum()
            }
        }
        (Correction::VarianceFloor { epsilon }, FundingBase::Variance { index }) => {
            basis / (index.max(0.0) + epsilon).max(MIN_CORRECTION)
        }
        _ => return Err(incompatible()),
    };
    if basis == 0.0 {
        return Ok(0.0);
    }
    Ok(clip(params.kappa * scaled, params.clip))
}

pub fn clip(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(lo, hi)
    }
}

/// One cash movement between a trader and the house. Positive amounts are
/// received by the trader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FundingTransfer {
    pub time: TimeMs,
    pub trader_id: String,
    pub amount: f64,
}

/// Amount a position receives for one interval at `rate`: longs pay
/// `rate * notional` when the rate is positive.
pub fn position_funding(position: &Position, rate: f64) -> f64 {
    -position.side.sign() * rate * position.notional
}

/// Accrues funding per the settlement cadence. Buffered amounts stay in
/// `pending` until they are flushed.
#[derive(Clone, Debug, PartialEq)]
pub struct FundingLedger {
    cadence: SettlementCadence,
    pending: BTreeMap<String, f64>,
    next_flush: Option<TimeMs>,
}

impl FundingLedger {
    pub fn new(cadence: SettlementCadence) -> Self {
        Self {
            cadence,
            pending: BTreeMap::new(),
            next_flush: None,
        }
    }

    pub fn cadence(&self) -> SettlementCadence {
        self.cadence
    }

    /// Buffered, unsettled funding of one trader.
    pub fn pending(&self, trader: &str) -> f64 {
        self.pending.get(trader).copied().unwrap_or(0.0)
    }

    /// Applies one funding interval and returns the transfers that settle now.
    pub fn accrue(
        &mut self,
        time: TimeMs,
        positions: &BTreeMap<String, Position>,
        rate: f64,
    ) -> Vec<FundingTransfer> {
        if rate == 0.0 && self.pending.is_empty() {
            return Vec::new();
        }
        for (id, pos) in positions {
            let amt = position_funding(pos, rate);
            if amt != 0.0 {
                *self.pending.entry(id.clone()).or_insert(0.0) += amt;
            }
        }
        match self.cadence {
            SettlementCadence::Continuous => self.flush_all(time),
            SettlementCadence::Periodic { interval_ms } => {
                let due = *self.next_flush.get_or_insert(time + interval_ms);
                if time >= due {
                    self.next_flush = Some(due + interval_ms * ((time - due) / interval_ms + 1));
                    self.flush_all(time)
                } else {
                    Vec::new()
                }
            }
            SettlementCadence::OnClose => Vec::new(),
        }
    }

    /// Settles a trader's buffered funding, on position close.
    pub fn close(&mut self, time: TimeMs, trader: &str) -> Option<FundingTransfer> {
        self.pending.remove(trader).map(|amount| FundingTransfer {
            time,
            trader_id: trader.to_string(),
            amount,
        })
    }

    pub fn flush_all(&mut self, time: TimeMs) -> Vec<FundingTransfer> {
        std::mem::take(&mut self.pending)
            .into_iter()
            .map(|(trader_id, amount)| FundingTransfer {
                time,
                trader_id,
                amount,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Liquidation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LiquidationCheck {
    Healthy {
        equity: f64,
    },
    Liquidate {
        equity: f64,
        fill_price: f64,
        /// Position equity after closing at the fill price.
        equity_after_fill: f64,
        bad_debt: f64,
    },
}

/// Equity is posted margin plus unrealized PnL at mark plus `extra`
/// (buffered funding). The position is liquidated at `index` adjusted by
/// slippage when equity falls below `maintenance`.
pub fn check_liquidation(
    position: &Position,
    mark: f64,
    index: f64,
    maintenance: f64,
    slippage: f64,
    extra: f64,
) -> LiquidationCheck {
    let equity = position.margin_posted + position.unrealized_pnl(mark) + extra;
    if equity >= maintenance {
        return LiquidationCheck::Healthy { equity };
    }
    let fill_price = index - position.side.sign() * slippage;
    let equity_after_fill = position.margin_posted + position.unrealized_pnl(fill_price) + extra;
    LiquidationCheck::Liquidate {
        equity,
        fill_price,
        equity_after_fill,
        bad_debt: (-equity_after_fill).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn long(notional: f64, entry: f64, margin: f64) -> Position {
        Position {
            trader_id: "t".into(),
            side: Side::Long,
            notional,
            entry_price: entry,
            margin_posted: margin,
            open_time: 0,
        }
    }

    #[test]
    fn jump_examples() {
        let j = jump_magnitude(JumpState::Single { index: 0.7 }, Side::Long, Aggregation::Sum);
        assert_eq!(j, 0.7);
        let b = JumpState::Basket {
            weights: &[0.5, 0.5],
            values: &[0.5, 0.5],
            active: &[true, true],
        };
        assert_eq!(jump_magnitude(b, Side::Long, Aggregation::Sum), 0.5);
        assert_eq!(jump_magnitude(b, Side::Long, Aggregation::Max), 0.25);
        assert_eq!(
            jump_magnitude(JumpState::Continuous, Side::Short, Aggregation::Sum),
            0.0
        );
    }

    #[test]
    fn spread_regimes() {
        let s = |simultaneous| JumpState::Spread {
            a: Some(0.9),
            b: Some(0.2),
            simultaneous,
        };
        // long: A can fall 0.9, B can rise 0.8
        assert_eq!(jump_magnitude(s(false), Side::Long, Aggregation::Max), 0.9);
        assert!((jump_magnitude(s(true), Side::Long, Aggregation::Max) - 1.7).abs() < 1e-15);
        let residual = JumpState::Spread {
            a: None,
            b: Some(0.2),
            simultaneous: true,
        };
        assert!(jump_magnitude(residual, Side::Short, Aggregation::Max) <= 1.0);
    }

    #[test]
    fn margin_examples() {
        let s = MarginSchedule {
            m0: 0.05,
            m_j: 1.0,
            proximity_horizon_ms: DAY_MS,
            aggregation: Aggregation::Sum,
        };
        assert_eq!(maintenance_margin(100.0, 0.7, Some(HOUR_MS), &s, false), 75.0);
        assert_eq!(maintenance_margin(100.0, 0.7, None, &s, false), 5.0);
        let far = maintenance_margin(100.0, 0.7, Some(1_000_000 * DAY_MS), &s, false);
        assert!((far - 5.0).abs() < 1e-4);
        let heavy = MarginSchedule { m0: 0.5, ..s };
        assert_eq!(maintenance_margin(100.0, 0.9, Some(0), &heavy, false), 100.0);
        assert_eq!(maintenance_margin(100.0, 0.7, None, &s, true), 75.0);
    }

    #[test]
    fn leverage_examples() {
        let l = LeverageSchedule {
            l_base: 10.0,
            l_floor: 2.0,
            ramp_ms: 1000,
        };
        assert_eq!(max_leverage(Some(2000), &l), 10.0);
        assert_eq!(max_leverage(Some(500), &l), 6.0);
        assert_eq!(max_leverage(Some(0), &l), 2.0);
        assert_eq!(max_leverage(None, &l), 10.0);
    }

    #[test]
    fn funding_examples() {
        let p = FundingParams {
            kappa: 1.0,
            correction: Some(Correction::PerLegMin),
            clip: (-1.0, 1.0),
            interval_ms: HOUR_MS,
            cadence: SettlementCadence::Continuous,
        };
        let r = funding_rate(
            0.91,
            0.9,
            &p,
            FundingBase::Probability { index: 0.9 },
            VariantKind::Conditional,
        )
        .unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        let tight = FundingParams {
            clip: (-0.05, 0.05),
            ..p
        };
        let r = funding_rate(
            0.91,
            0.9,
            &tight,
            FundingBase::Probability { index: 0.9 },
            VariantKind::Conditional,
        )
        .unwrap();
        assert_eq!(r, 0.05);
        let r = funding_rate(
            0.3,
            0.3,
            &p,
            FundingBase::Probability { index: 0.3 },
            VariantKind::Conditional,
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn incompatible_corrections() {
        let p = FundingParams {
            correction: Some(Correction::VarianceFloor { epsilon: 1e-4 }),
            ..FundingParams::default()
        };
        assert!(matches!(
            funding_rate(
                0.5,
                0.4,
                &p,
                FundingBase::Probability { index: 0.4 },
                VariantKind::Basket
            ),
            Err(RiskError::IncompatibleCorrection { .. })
        ));
        let p = FundingParams {
            correction: Some(Correction::PerLegMin),
            ..FundingParams::default()
        };
        assert!(matches!(
            funding_rate(
                0.02,
                0.01,
                &p,
                FundingBase::Variance { index: 0.01 },
                VariantKind::Variance
            ),
            Err(RiskError::IncompatibleCorrection { .. })
        ));
    }

    #[test]
    fn spread_funding_sums_leg_terms() {
        let p = FundingParams {
            clip: (-10.0, 10.0),
            ..FundingParams::default()
        };
        let r = funding_rate(
            0.11,
            0.1,
            &p,
            FundingBase::Spread {
                unresolved: &[0.5, 0.2],
            },
            VariantKind::Spread,
        )
        .unwrap();
        let expect = 0.005 / 0.5 + 0.005 / 0.2;
        assert!((r - expect).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_division() {
        let p = FundingParams {
            correction: Some(Correction::VarianceFloor { epsilon: 0.01 }),
            clip: (-10.0, 10.0),
            ..FundingParams::default()
        };
        let r = funding_rate(
            0.05,
            0.04,
            &p,
            FundingBase::Variance { index: 0.04 },
            VariantKind::Variance,
        )
        .unwrap();
        assert!((r - 0.01 / 0.05).abs() < 1e-12);
    }

    #[test]
    fn liquidation_examples() {
        let pos = long(100.0, 0.5, 10.0);
        assert!(matches!(
            check_liquidation(&pos, 0.5, 0.5, 7.5, 0.0, 0.0),
            LiquidationCheck::Healthy { equity } if equity == 10.0
        ));
        // equity 10 - 6 = 4 < 7.5, but still positive after the fill
        match check_liquidation(&pos, 0.44, 0.44, 7.5, 0.0, 0.0) {
            LiquidationCheck::Liquidate { bad_debt, .. } => assert_eq!(bad_debt, 0.0),
            other => panic!("{other:?}"),
        }
        // equity 10 - 12 = -2
        match check_liquidation(&pos, 0.38, 0.38, 7.5, 0.0, 0.0) {
            LiquidationCheck::Liquidate { bad_debt, .. } => assert!((bad_debt - 2.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        // collapse to zero in one step
        match check_liquidation(&pos, 0.0, 0.0, 7.5, 0.0, 0.0) {
            LiquidationCheck::Liquidate { bad_debt, .. } => assert_eq!(bad_debt, 40.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn funding_cadences() {
        let mut book = BTreeMap::new();
        book.insert("t".to_string(), long(100.0, 0.5, 10.0));
        let mut c = FundingLedger::new(SettlementCadence::Continuous);
        let out = c.accrue(0, &book, 0.01);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].amount, -1.0);
        assert!(c.accrue(1, &book, 0.0).is_empty());

        let mut oc = FundingLedger::new(SettlementCadence::OnClose);
        for t in 0..3 {
            assert!(oc.accrue(t, &book, 0.01).is_empty());
        }
        let tr = oc.close(3, "t").unwrap();
        assert!((tr.amount + 3.0).abs() < 1e-15);

        let mut p = FundingLedger::new(SettlementCadence::Periodic { interval_ms: 10 });
        assert!(p.accrue(0, &book, 0.01).is_empty());
        assert!(p.accrue(5, &book, 0.01).is_empty());
        let out = p.accrue(10, &book, 0.01);
        assert!((out[0].amount + 3.0).abs() < 1e-15);
    }

    #[test]
    fn config_defaults_validate() {
        RiskConfig::default().validate().unwrap();
        let bad = RiskConfig {
            leverage: LeverageSchedule {
                l_base: 2.0,
                l_floor: 3.0,
                ramp_ms: 0,
            },
            ..RiskConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
