//! Resolution-zone halt windows and rolling-contract transitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BasketHaltPolicy, LegId, OrderingRule, Position, ReplayEvent, RollBasisRule, RollMechanism, TimeMs,
    VariantSpec, DAY_MS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("volume-weighted roll needs a volume series for {0}")]
    MissingVolumeSeries(LegId),
    #[error("re-anchor roll with a zero index")]
    ZeroIndex,
    #[error("constituents are not ordered by resolution time at position {0}")]
    Unordered(usize),
    #[error("roll out of {leg} ends at {end}, after its resolution at {tau}")]
    CompletesAfterResolution { leg: LegId, end: TimeMs, tau: TimeMs },
    #[error("roll {0} starts before the previous roll has completed")]
    OverlappingRolls(usize),
    #[error("invalid roll mechanism: {0}")]
    InvalidMechanism(String),
    #[error("constituent {0} has no resolution time")]
    MissingResolution(LegId),
}

// ---------------------------------------------------------------------------
// Halt windows
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaltConfig {
    #[serde(default = "HaltConfig::default_enabled")]
    pub enabled: bool,
    /// Resolution-zone width before each scheduled resolution.
    #[serde(default = "HaltConfig::default_delta_r")]
    pub delta_r_ms: TimeMs,
    /// Optional post-resolution halt while settlement is processed.
    #[serde(default)]
    pub settle_lag_ms: TimeMs,
}

impl HaltConfig {
    fn default_enabled() -> bool {
        true
    }
    fn default_delta_r() -> TimeMs {
        DAY_MS
    }
}

impl Default for HaltConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            delta_r_ms: DAY_MS,
            settle_lag_ms: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltStage {
    PreResolution,
    PostResolutionSettle,
}

/// Half-open trading halt `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaltWindow {
    pub start: TimeMs,
    pub end: TimeMs,
    pub triggering_leg: LegId,
    pub stage: HaltStage,
}

impl HaltWindow {
    pub fn contains(&self, t: TimeMs) -> bool {
        self.start <= t && t < self.end
    }
}

fn zone(leg: &LegId, tau: TimeMs, cfg: &HaltConfig, out: &mut Vec<HaltWindow>) {
    if cfg.delta_r_ms > 0 {
        out.push(HaltWindow {
            start: tau - cfg.delta_r_ms,
            end: tau,
            triggering_leg: leg.clone(),
            stage: HaltStage::PreResolution,
        });
    }
    if cfg.settle_lag_ms > 0 {
        out.push(HaltWindow {
            start: tau,
            end: tau + cfg.settle_lag_ms,
            triggering_leg: leg.clone(),
            stage: HaltStage::PostResolutionSettle,
        });
    }
}

/// Sorts and unions overlapping or touching windows. A merged window is
/// attributed to the member that ends last.
pub fn merge_windows(mut windows: Vec<HaltWindow>) -> Vec<HaltWindow> {
    windows.sort_by_key(|w| (w.start, w.end));
    let mut out: Vec<HaltWindow> = Vec::with_capacity(windows.len());
    for w in windows {
        match out.last_mut() {
            Some(cur) if w.start <= cur.end => {
                if w.end > cur.end {
                    cur.end = w.end;
                    cur.triggering_leg = w.triggering_leg;
                    cur.stage = w.stage;
                }
            }
            _ => out.push(w),
        }
    }
    out
}

/// Halt windows of a contract. `taus` holds the known resolution times of
/// its legs; rolling contracts also need their roll schedule, because a
/// constituent that has been rolled out of before its zone never halts.
pub fn halt_windows(
    spec: &VariantSpec,
    taus: &BTreeMap<LegId, TimeMs>,
    cfg: &HaltConfig,
    rolls: Option<&RollSchedule>,
) -> Vec<HaltWindow> {
    if !cfg.enabled {
        return Vec::new();
    }
    fn tau<'a>(taus: &BTreeMap<LegId, TimeMs>, l: &'a LegId) -> Option<(&'a LegId, TimeMs)> {
        taus.get(l).copied().map(|t| (l, t))
    }
    let mut out = Vec::new();
    match spec {
        VariantSpec::Conditional {
            leg_a,
            leg_b,
            ordering_rule,
            ..
        } => match (tau(taus, leg_a), tau(taus, leg_b)) {
            (Some(a), Some(b)) => {
                let (first, second) = if a.1 <= b.1 { (a, b) } else { (b, a) };
                zone(first.0, first.1, cfg, &mut out);
                let ends_at_a = *ordering_rule == OrderingRule::SettleAtA && a.1 < b.1;
                if second.1 > first.1 && !ends_at_a {
                    zone(second.0, second.1, cfg, &mut out);
                }
            }
            (Some(x), None) | (None, Some(x)) => zone(x.0, x.1, cfg, &mut out),
            (None, None) => {}
        },
        VariantSpec::Spread { leg_a, leg_b, .. } => {
            for (l, t) in [tau(taus, leg_a), tau(taus, leg_b)].into_iter().flatten() {
                zone(l, t, cfg, &mut out);
            }
        }
        VariantSpec::Basket {
            legs, halt_policy, ..
        } => {
            let known = legs.iter().filter_map(|l| tau(taus, l));
            let pick = match halt_policy {
                BasketHaltPolicy::ClosestLeg => known.min_by_key(|x| (x.1, x.0.clone())),
                BasketHaltPolicy::SingleMaturity => known.max_by_key(|x| (x.1, x.0.clone())),
            };
            if let Some((l, t)) = pick {
                zone(l, t, cfg, &mut out);
            }
        }
        VariantSpec::Rolling { constituents, .. } => {
            let last = constituents.len().saturating_sub(1);
            for (i, c) in constituents.iter().enumerate() {
                let Some((l, t)) = tau(taus, c) else { continue };
                let active_in_zone =
                    i == last || rolls.is_none_or(|r| r.overlaps.iter().any(|o| o.constituent == i));
                if active_in_zone {
                    zone(l, t, cfg, &mut out);
                }
            }
        }
        VariantSpec::Variance { .. }
        | VariantSpec::Entropy { .. }
        | VariantSpec::Liquidity { .. }
        | VariantSpec::FundingOnly { .. } => {}
    }
    merge_windows(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum HaltDecision {
    Accept,
    Reject { window: usize },
}

/// Orders inside a window are rejected; prices, resolutions, funding and
/// roll checkpoints always pass.
pub fn enforce_halt(windows: &[HaltWindow], event: &ReplayEvent) -> HaltDecision {
    match event {
        ReplayEvent::TraderOrder(o) => match windows.iter().position(|w| w.contains(o.time)) {
            Some(window) => HaltDecision::Reject { window },
            None => HaltDecision::Accept,
        },
        _ => HaltDecision::Accept,
    }
}

pub fn in_any_window(windows: &[HaltWindow], t: TimeMs) -> bool {
    windows.iter().any(|w| w.contains(t))
}

// ---------------------------------------------------------------------------
// Rolls
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollPlan {
    pub from_constituent: usize,
    pub to_constituent: usize,
    pub from_leg: LegId,
    pub to_leg: LegId,
    /// First instant at which the weight may move off zero.
    pub start: TimeMs,
    /// Instant by which the weight is 1.
    pub end: TimeMs,
    pub mechanism: RollMechanism,
    pub basis_rule: RollBasisRule,
    pub executed: bool,
    /// Sum of `I_after - I_before` over the roll's checkpoints.
    pub realized_basis: f64,
}

/// A roll that cannot complete before the outgoing constituent's resolution
/// zone. Jump margin runs at full activation during the overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollOverlap {
    pub constituent: usize,
    pub leg: LegId,
    pub zone_start: TimeMs,
    pub roll_end: TimeMs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RollSchedule {
    pub plans: Vec<RollPlan>,
    pub overlaps: Vec<RollOverlap>,
}

impl RollSchedule {
    /// Whether constituent `i` is still active inside its resolution zone.
    pub fn overlaps_zone(&self, i: usize) -> bool {
        self.overlaps.iter().any(|o| o.constituent == i)
    }
}

/// Plans every roll between consecutive constituents.
pub fn schedule_roll(
    constituents: &[(LegId, TimeMs)],
    delta_r_ms: TimeMs,
    mechanism: RollMechanism,
    basis_rule: RollBasisRule,
) -> Result<RollSchedule, ScheduleError> {
    for (i, w) in constituents.windows(2).enumerate() {
        if w[0].1 >= w[1].1 {
            return Err(ScheduleError::Unordered(i + 1));
        }
    }
    let mut schedule = RollSchedule::default();
    for (i, w) in constituents.windows(2).enumerate() {
        let (from, tau) = (&w[0].0, w[0].1);
        let deadline = tau - delta_r_ms;
        let (start, end) = match mechanism {
            RollMechanism::Cliff { lead_ms } => (tau - lead_ms, tau - lead_ms),
            RollMechanism::Linear {
                start_lead_ms,
                end_lead_ms,
            } => {
                if end_lead_ms > start_lead_ms {
                    return Err(ScheduleError::InvalidMechanism(format!(
                        "linear end lead {end_lead_ms} exceeds start lead {start_lead_ms}"
                    )));
                }
                (tau - start_lead_ms, tau - end_lead_ms)
            }
            RollMechanism::VolumeWeighted {
                start_lead_ms,
                v_target,
            } => {
                if !(v_target > 0.0) {
                    return Err(ScheduleError::InvalidMechanism(
                        "v_target must be positive".into(),
                    ));
                }
                let start = tau - start_lead_ms;
                (start, deadline.max(start))
            }
        };
        if end > tau {
            return Err(ScheduleError::CompletesAfterResolution {
                leg: from.clone(),
                end,
                tau,
            });
        }
        if let Some(prev) = schedule.plans.last() {
            if start < prev.end {
                return Err(ScheduleError::OverlappingRolls(i));
            }
        }
        if end > deadline {
            schedule.overlaps.push(RollOverlap {
                constituent: i,
                leg: from.clone(),
                zone_start: deadline,
                roll_end: end,
            });
        }
        schedule.plans.push(RollPlan {
            from_constituent: i,
            to_constituent: i + 1,
            from_leg: from.clone(),
            to_leg: w[1].0.clone(),
            start,
            end,
            mechanism,
            basis_rule,
            executed: false,
            realized_basis: 0.0,
        });
    }
    Ok(schedule)
}

pub fn linear_weight(t: TimeMs, start: TimeMs, end: TimeMs) -> f64 {
    if t >= end {
        1.0
    } else if t <= start {
        0.0
    } else {
        ((t - start) as f64 / (end - start) as f64).clamp(0.0, 1.0)
    }
}

pub fn volume_weight(cum_volume: f64, v_target: f64) -> f64 {
    (cum_volume / v_target).clamp(0.0, 1.0)
}

/// Successor weight `lambda` at `t`. `successor_volume` is the successor's
/// volume traded since the roll started; only the volume-weighted
/// mechanism reads it.
pub fn roll_weight(plan: &RollPlan, t: TimeMs, successor_volume: Option<f64>) -> Result<f64, ScheduleError> {
    Ok(match plan.mechanism {
        RollMechanism::Cliff { .. } => {
            if t >= plan.end {
                1.0
            } else {
                0.0
            }
        }
        RollMechanism::Linear { .. } => linear_weight(t, plan.start, plan.end),
        RollMechanism::VolumeWeighted { v_target, .. } => {
            let v =
                successor_volume.ok_or_else(|| ScheduleError::MissingVolumeSeries(plan.to_leg.clone()))?;
            if t < plan.start {
                0.0
            } else if t >= plan.end {
                1.0
            } else {
                volume_weight(v, v_target)
            }
        }
    })
}

/// `(1 - lambda) * a + lambda * b`.
pub fn rolled_index(a: f64, b: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * a + lambda * b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollAdjustment {
    pub trader_id: String,
    /// PnL the move from `i0` to `i1` carries for this position.
    pub basis_pnl: f64,
    /// Cash paid to the trader now (cash-settle only).
    pub cash: f64,
}

/// Applies the basis rule as the contract underlying moves from `i0` to
/// `i1` at a roll step.
///
/// Re-anchor rescales entry by `i1/i0` and notional by `i0/i1`, which keeps
/// each position's unrealized PnL fixed. Maintain-notional leaves positions
/// alone, so the basis shows up in unrealized PnL. Cash-settle pays the basis
/// out and shifts entry by `i1 - i0`, so unrealized PnL is unchanged.
pub fn apply_roll_basis(
    positions: &mut BTreeMap<String, Position>,
    i0: f64,
    i1: f64,
    rule: RollBasisRule,
) -> Result<Vec<RollAdjustment>, ScheduleError> {
    if rule == RollBasisRule::ReAnchor && i0 != i1 && (i0 == 0.0 || i1 == 0.0) {
        return Err(ScheduleError::ZeroIndex);
    }
    let mut out = Vec::with_capacity(positions.len());
    for (id, p) in positions.iter_mut() {
        let basis_pnl = p.side.sign() * p.notional * (i1 - i0);
        let mut cash = 0.0;
        if i0 != i1 {
            match rule {
                RollBasisRule::ReAnchor => {
                    p.entry_price *= i1 / i0;
                    p.notional *= i0 / i1;
                }
                RollBasisRule::MaintainNotional => {}
                RollBasisRule::CashSettle => {
                    cash = basis_pnl;
                    p.entry_price += i1 - i0;
                }
            }
        }
        out.push(RollAdjustment {
            trader_id: id.clone(),
            basis_pnl,
            cash,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RebalanceRule, RollDeadlinePolicy, Side, TraderOrder, WeightRule, HOUR_MS};

    fn cfg() -> HaltConfig {
        HaltConfig::default()
    }

    fn taus(xs: &[(&str, TimeMs)]) -> BTreeMap<LegId, TimeMs> {
        xs.iter().map(|&(l, t)| (LegId::from(l), t)).collect()
    }

    fn spread() -> VariantSpec {
        VariantSpec::Spread {
            leg_a: "a".into(),
            leg_b: "b".into(),
            simultaneous_regime: None,
        }
    }

    #[test]
    fn spread_windows_disjoint_and_merged() {
        let w = halt_windows(
            &spread(),
            &taus(&[("a", 1000 * HOUR_MS), ("b", 2000 * HOUR_MS)]),
            &cfg(),
            None,
        );
        assert_eq!(w.len(), 2);
        assert!(w[0].end <= w[1].start);
        let w = halt_windows(
            &spread(),
            &taus(&[("a", 1000 * HOUR_MS), ("b", 1010 * HOUR_MS)]),
            &cfg(),
            None,
        );
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start, w[0].end), (976 * HOUR_MS, 1010 * HOUR_MS));
        assert_eq!(w[0].triggering_leg, LegId::from("b"));
    }

    #[test]
    fn variance_has_no_windows() {
        let spec = VariantSpec::Variance {
            leg: "a".into(),
            estimator: Default::default(),
            window_ms: HOUR_MS,
            tick_ms: 60_000,
            normalization: Default::default(),
        };
        assert!(halt_windows(&spec, &taus(&[("a", 5 * DAY_MS)]), &cfg(), None).is_empty());
    }

    #[test]
    fn basket_policies() {
        let mut spec = VariantSpec::Basket {
            legs: vec!["a".into(), "b".into()],
            weight_rule: WeightRule::Equal,
            rebalance_rule: RebalanceRule::None,
            halt_policy: BasketHaltPolicy::ClosestLeg,
        };
        let t = taus(&[("a", 10 * DAY_MS), ("b", 20 * DAY_MS)]);
        let w = halt_windows(&spec, &t, &cfg(), None);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].end, 10 * DAY_MS);
        if let VariantSpec::Basket { halt_policy, .. } = &mut spec {
            *halt_policy = BasketHaltPolicy::SingleMaturity;
        }
        let w = halt_windows(&spec, &t, &cfg(), None);
        assert_eq!(w[0].end, 20 * DAY_MS);
    }

    #[test]
    fn conditional_settle_at_a_single_window() {
        let mk = |ordering_rule| VariantSpec::Conditional {
            leg_a: "a".into(),
            leg_b: "b".into(),
            joint_leg: None,
            denom_floor: 0.01,
            floor_action: Default::default(),
            termination_rule: Default::default(),
            ordering_rule,
        };
        let t = taus(&[("a", 10 * DAY_MS), ("b", 20 * DAY_MS)]);
        assert_eq!(
            halt_windows(&mk(OrderingRule::SettleAtA), &t, &cfg(), None).len(),
            1
        );
        assert_eq!(
            halt_windows(&mk(OrderingRule::JointAtB), &t, &cfg(), None).len(),
            2
        );
    }

    #[test]
    fn settle_lag_window() {
        let c = HaltConfig {
            settle_lag_ms: HOUR_MS,
            ..cfg()
        };
        let w = halt_windows(&spread(), &taus(&[("a", 10 * DAY_MS)]), &c, None);
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start, w[0].end), (9 * DAY_MS, 10 * DAY_MS + HOUR_MS));
    }

    #[test]
    fn halt_boundaries() {
        let w = vec![HaltWindow {
            start: 100,
            end: 200,
            triggering_leg: "a".into(),
            stage: HaltStage::PreResolution,
        }];
        let order = |time| {
            ReplayEvent::TraderOrder(TraderOrder {
                time,
                trader_id: "t".into(),
                side: Side::Long,
                notional: 1.0,
                leverage: 1.0,
            })
        };
        assert_eq!(enforce_halt(&w, &order(150)), HaltDecision::Reject { window: 0 });
        assert_eq!(enforce_halt(&w, &order(99)), HaltDecision::Accept);
        assert_eq!(enforce_halt(&w, &order(200)), HaltDecision::Accept);
        let res = ReplayEvent::FundingTick { time: 150 };
        assert_eq!(enforce_halt(&w, &res), HaltDecision::Accept);
    }

    fn cons() -> Vec<(LegId, TimeMs)> {
        vec![("c0".into(), 10 * DAY_MS), ("c1".into(), 20 * DAY_MS)]
    }

    #[test]
    fn schedule_cliff_cases() {
        let s = schedule_roll(
            &cons(),
            DAY_MS,
            RollMechanism::Cliff { lead_ms: 2 * DAY_MS },
            RollBasisRule::ReAnchor,
        )
        .unwrap();
        assert!(s.overlaps.is_empty());
        assert_eq!(s.plans[0].end, 8 * DAY_MS);
        let s = schedule_roll(
            &cons(),
            DAY_MS,
            RollMechanism::Cliff { lead_ms: DAY_MS / 2 },
            RollBasisRule::ReAnchor,
        )
        .unwrap();
        assert_eq!(s.overlaps.len(), 1);
        let lin = RollMechanism::Linear {
            start_lead_ms: 3 * DAY_MS,
            end_lead_ms: DAY_MS,
        };
        let s = schedule_roll(&cons(), DAY_MS, lin, RollBasisRule::ReAnchor).unwrap();
        assert!(s.overlaps.is_empty());
        let bad = vec![cons()[1].clone(), cons()[0].clone()];
        assert!(matches!(
            schedule_roll(&bad, DAY_MS, lin, RollBasisRule::ReAnchor),
            Err(ScheduleError::Unordered(1))
        ));
        assert!(matches!(
            schedule_roll(
                &cons(),
                DAY_MS,
                RollMechanism::Cliff { lead_ms: -1 },
                RollBasisRule::ReAnchor
            ),
            Err(ScheduleError::CompletesAfterResolution { .. })
        ));
        let _ = RollDeadlinePolicy::CompleteBeforeHalt;
    }

    #[test]
    fn weights() {
        let lin = RollMechanism::Linear {
            start_lead_ms: 3 * DAY_MS,
            end_lead_ms: DAY_MS,
        };
        let s = schedule_roll(&cons(), DAY_MS, lin, RollBasisRule::ReAnchor).unwrap();
        let p = &s.plans[0];
        assert_eq!(roll_weight(p, 8 * DAY_MS, None).unwrap(), 0.5);
        let s = schedule_roll(
            &cons(),
            DAY_MS,
            RollMechanism::Cliff { lead_ms: 2 * DAY_MS },
            RollBasisRule::ReAnchor,
        )
        .unwrap();
        let p = &s.plans[0];
        assert_eq!(roll_weight(p, p.end - 1, None).unwrap(), 0.0);
        assert_eq!(roll_weight(p, p.end, None).unwrap(), 1.0);
        let vw = RollMechanism::VolumeWeighted {
            start_lead_ms: 3 * DAY_MS,
            v_target: 1000.0,
        };
        let s = schedule_roll(&cons(), DAY_MS, vw, RollBasisRule::ReAnchor).unwrap();
        let p = &s.plans[0];
        assert_eq!(roll_weight(p, 8 * DAY_MS, Some(300.0)).unwrap(), 0.3);
        assert!(matches!(
            roll_weight(p, 8 * DAY_MS, None),
            Err(ScheduleError::MissingVolumeSeries(_))
        ));
        assert_eq!(roll_weight(p, 9 * DAY_MS, Some(0.0)).unwrap(), 1.0);
    }

    #[test]
    fn rolled_index_endpoints() {
        assert_eq!(rolled_index(0.6, 0.4, 0.0), 0.6);
        assert_eq!(rolled_index(0.6, 0.4, 1.0), 0.4);
        assert!((rolled_index(0.6, 0.4, 0.25) - 0.55).abs() < 1e-15);
    }

    fn book() -> BTreeMap<String, Position> {
        let mut m = BTreeMap::new();
        m.insert(
            "t".to_string(),
            Position {
                trader_id: "t".into(),
                side: Side::Long,
                notional: 100.0,
                entry_price: 0.6,
                margin_posted: 10.0,
                open_time: 0,
            },
        );
        m
    }

    #[test]
    fn basis_rules() {
        for rule in [
            RollBasisRule::ReAnchor,
            RollBasisRule::MaintainNotional,
            RollBasisRule::CashSettle,
        ] {
            let mut b = book();
            let adj = apply_roll_basis(&mut b, 0.6, 0.6, rule).unwrap();
            assert_eq!(b, book());
            assert_eq!(adj[0].cash, 0.0);
        }
        let mut b = book();
        let adj = apply_roll_basis(&mut b, 0.6, 0.5, RollBasisRule::MaintainNotional).unwrap();
        assert!((adj[0].basis_pnl + 10.0).abs() < 1e-12);
        assert_eq!(b, book());
        let mut b = book();
        let adj = apply_roll_basis(&mut b, 0.6, 0.5, RollBasisRule::CashSettle).unwrap();
        assert!((adj[0].cash + 10.0).abs() < 1e-12);
        assert!((b["t"].entry_price - 0.5).abs() < 1e-15);
        let mut b = book();
        b.get_mut("t").unwrap().entry_price = 0.4;
        let before = b["t"].unrealized_pnl(0.6);
        apply_roll_basis(&mut b, 0.6, 0.5, RollBasisRule::ReAnchor).unwrap();
        assert!((b["t"].unrealized_pnl(0.5) - before).abs() < 1e-12);
        assert_eq!(
            apply_roll_basis(&mut book(), 0.0, 0.5, RollBasisRule::ReAnchor),
            Err(ScheduleError::ZeroIndex)
        );
    }
}
