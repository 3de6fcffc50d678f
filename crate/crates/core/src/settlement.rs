//! Terminal logic per variant: leg-resolution ordering, early termination,
//! residual tracking, entropy collapse and basket terminal valuation.
//!
//! The harness freezes every resolution sharing a timestamp before it calls
//! any `settle_*` function, so settlement at a timestamp sees all outcomes
//! known at that instant and is independent of the order of the calls.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constructors::{
    basket_value, rebalance_weights, ConstructError, Discontinuity, IndexSeries, Support,
};
use crate::model::{
    ContractState, LegId, OrderingRule, Outcome, Phase, RebalanceRule, ResolutionRecord, StateError,
    TerminationRule, TimeMs, VariantSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettlementKind {
    Terminal,
    EarlyTermination,
    RollConversion,
    NonePerpetual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub time: TimeMs,
    pub kind: SettlementKind,
    pub value: f64,
    pub triggering_leg: Option<LegId>,
    pub rule_applied: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SettlementError {
    #[error("leg {0} is not part of this contract's settlement")]
    UnexpectedLeg(LegId),
    #[error("TWAP window ending at {end} has no observations")]
    EmptyWindow { end: TimeMs },
    #[error("constituent {0} resolved while still active")]
    RollIncomplete(LegId),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Construct(#[from] ConstructError),
}

fn ensure_frozen(
    state: &mut ContractState,
    leg: &LegId,
    record: ResolutionRecord,
) -> Result<(), SettlementError> {
    if state.frozen(leg).is_none() {
        state.freeze(leg, record)?;
    }
    Ok(())
}

fn finish(
    state: &mut ContractState,
    kind: SettlementKind,
    time: TimeMs,
    value: f64,
    leg: &LegId,
    rule: impl Into<String>,
) -> Result<SettlementRecord, SettlementError> {
    let phase = match kind {
        SettlementKind::EarlyTermination => Phase::TerminatedEarly,
        _ => Phase::Resolved,
    };
    state.transition(phase)?;
    Ok(SettlementRecord {
        time,
        kind,
        value,
        triggering_leg: Some(leg.clone()),
        rule_applied: rule.into(),
    })
}

/// Time-weighted mean of a piecewise-constant series over
/// `[window_end - window_len, window_end]`. The part of the window before
/// the first observation is dropped.
pub fn twap(index: &IndexSeries, window_end: TimeMs, window_len: TimeMs) -> Result<f64, SettlementError> {
    let empty = SettlementError::EmptyWindow { end: window_end };
    let first = *index.timestamps.first().ok_or(empty.clone())?;
    let start = (window_end - window_len).max(first);
    if start >= window_end {
        return Err(empty);
    }
    let ts = &index.timestamps;
    let mut acc = 0.0;
    for k in 0..ts.len() {
        if ts[k] >= window_end {
            break;
        }
        let seg_lo = ts[k].max(start);
        let seg_hi = ts.get(k + 1).copied().unwrap_or(window_end).min(window_end);
        if seg_hi > seg_lo {
            acc += index.values[k] * (seg_hi - seg_lo) as f64;
        }
    }
    Ok(acc / (window_end - start) as f64)
}

// ---------------------------------------------------------------------------
// Conditional
// ---------------------------------------------------------------------------

/// Whether the conditioning event is leg B resolving YES (listed joint
/// market) or leg B resolving NO (negRisk complement).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    Direct,
    Complement,
}

impl Conditioning {
    pub fn outcome(self, b: Outcome) -> Outcome {
        match self {
            Conditioning::Direct => b,
            Conditioning::Complement => b.complement(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalRules {
    pub leg_a: LegId,
    pub leg_b: LegId,
    pub conditioning: Conditioning,
    pub termination: TerminationRule,
    pub ordering: OrderingRule,
}

impl ConditionalRules {
    pub fn from_spec(spec: &VariantSpec) -> Option<Self> {
        match spec {
            VariantSpec::Conditional {
                leg_a,
                leg_b,
                joint_leg,
                termination_rule,
                ordering_rule,
                ..
            } => Some(Self {
                leg_a: leg_a.clone(),
                leg_b: leg_b.clone(),
                conditioning: if joint_leg.is_some() {
                    Conditioning::Direct
                } else {
                    Conditioning::Complement
                },
                termination: *termination_rule,
                ordering: *ordering_rule,
            }),
            _ => None,
        }
    }
}

/// What the conditional underlying tracks after a resolution that did not end
/// the contract.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConditionalTracking {
    /// `joint / denom` with the floor machinery.
    Ratio,
    /// Conditioning event happened; the contract follows leg A.
    LegA,
    /// Leg A resolved first under joint-at-B; the value is frozen at R(A)
    /// until B settles the contract.
    FrozenA(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transition {
    NoOp,
    Continue,
    Settled(SettlementRecord),
}

fn early_value(rule: TerminationRule, history: &IndexSeries, tau: TimeMs) -> Result<f64, SettlementError> {
    match rule {
        TerminationRule::Fixed { value } => Ok(value),
        TerminationRule::Twap { window_ms } => twap(history, tau, window_ms),
        TerminationRule::LastTick => {
            let k = history.timestamps.partition_point(|&t| t < tau);
            if k == 0 {
                Err(SettlementError::EmptyWindow { end: tau })
            } else {
                Ok(history.values[k - 1])
            }
        }
    }
}

/// Resolution of leg A or B of a conditional contract. `history` is the index
/// emitted so far and feeds the last-tick and TWAP termination rules.
pub fn settle_conditional(
    state: &mut ContractState,
    leg: &LegId,
    record: ResolutionRecord,
    rules: &ConditionalRules,
    history: &IndexSeries,
) -> Result<(Transition, Option<ConditionalTracking>), SettlementError> {
    if leg != &rules.leg_a && leg != &rules.leg_b {
        return Err(SettlementError::UnexpectedLeg(leg.clone()));
    }
    ensure_frozen(state, leg, record)?;
    if state.phase().is_terminal() {
        return Ok((Transition::NoOp, None));
    }
    let a = state.frozen(&rules.leg_a);
    let b = state.frozen(&rules.leg_b);
    match (a, b) {
        (a, Some(b)) => {
            let cond = rules.conditioning.outcome(b.outcome);
            if let Some(a) = a.filter(|a| a.tau < b.tau && rules.ordering == OrderingRule::JointAtB) {
                let value = a.outcome.value() * cond.value();
                let rec = finish(
                    state,
                    SettlementKind::Terminal,
                    b.tau,
                    value,
                    &rules.leg_b,
                    "joint-at-b",
                )?;
                return Ok((Transition::Settled(rec), None));
            }
            if cond == Outcome::No {
                let value = early_value(rules.termination, history, b.tau)?;
                let rec = finish(
                    state,
                    SettlementKind::EarlyTermination,
                    b.tau,
                    value,
                    &rules.leg_b,
                    rules.termination.tag(),
                )?;
                return Ok((Transition::Settled(rec), None));
            }
            match a {
                Some(a) => {
                    let rec = finish(
                        state,
                        SettlementKind::Terminal,
                        a.tau.max(b.tau),
                        a.outcome.value(),
                        &rules.leg_a,
                        "condition-met",
                    )?;
                    Ok((Transition::Settled(rec), None))
                }
                None => Ok((Transition::Continue, Some(ConditionalTracking::LegA))),
            }
        }
        (Some(a), None) => match rules.ordering {
            OrderingRule::SettleAtA => {
                let rec = finish(
                    state,
                    SettlementKind::Terminal,
                    a.tau,
                    a.outcome.value(),
                    &rules.leg_a,
                    "settle-at-a",
                )?;
                Ok((Transition::Settled(rec), None))
            }
            OrderingRule::JointAtB => Ok((
                Transition::Continue,
                Some(ConditionalTracking::FrozenA(a.outcome.value())),
            )),
        },
        (None, None) => unreachable!("leg was frozen above"),
    }
}

// ---------------------------------------------------------------------------
// Spread
// ---------------------------------------------------------------------------

/// First resolution switches the spread to residual tracking; the second
/// settles at `R(A) - R(B)`.
pub fn settle_spread(
    state: &mut ContractState,
    leg: &LegId,
    record: ResolutionRecord,
    leg_a: &LegId,
    leg_b: &LegId,
) -> Result<Transition, SettlementError> {
    if leg != leg_a && leg != leg_b {
        return Err(SettlementError::UnexpectedLeg(leg.clone()));
    }
    ensure_frozen(state, leg, record)?;
    if state.phase().is_terminal() {
        return Ok(Transition::NoOp);
    }
    match (state.frozen(leg_a), state.frozen(leg_b)) {
        (Some(a), Some(b)) => {
            let value = a.outcome.value() - b.outcome.value();
            let rec = finish(
                state,
                SettlementKind::Terminal,
                a.tau.max(b.tau),
                value,
                leg,
                "spread-terminal",
            )?;
            Ok(Transition::Settled(rec))
        }
        _ => Ok(Transition::Continue),
    }
}

// ---------------------------------------------------------------------------
// Basket
// ---------------------------------------------------------------------------

/// Mutable weight bookkeeping for one basket contract.
#[derive(Clone, Debug, PartialEq)]
pub struct BasketBook {
    pub legs: Vec<LegId>,
    pub original: Vec<f64>,
    pub weights: Vec<f64>,
    pub rule: RebalanceRule,
    dropped: BTreeSet<usize>,
}

impl BasketBook {
    pub fn new(legs: Vec<LegId>, weights: Vec<f64>, rule: RebalanceRule) -> Self {
        Self {
            legs,
            original: weights.clone(),
            weights,
            rule,
            dropped: BTreeSet::new(),
        }
    }

    pub fn index_of(&self, leg: &LegId) -> Option<usize> {
        self.legs.iter().position(|l| l == leg)
    }
}

/// Values with frozen legs replaced by their outcomes.
fn effective_values(state: &ContractState, legs: &[LegId], live: &[f64]) -> Vec<f64> {
    legs.iter()
        .zip(live)
        .map(|(l, &v)| state.frozen(l).map_or(v, |r| r.outcome.value()))
        .collect()
}

/// Resolution of one basket member. Returns the settlement when every member
/// has resolved and the weight discontinuity when a drop-rule rebalance
/// fired. `live` holds the members' last observed values.
pub fn settle_basket(
    state: &mut ContractState,
    leg: &LegId,
    record: ResolutionRecord,
    book: &mut BasketBook,
    live: &[f64],
) -> Result<(Transition, Option<Discontinuity>), SettlementError> {
    let i = book
        .index_of(leg)
        .ok_or_else(|| SettlementError::UnexpectedLeg(leg.clone()))?;
    ensure_frozen(state, leg, record)?;
    if state.phase().is_terminal() {
        return Ok((Transition::NoOp, None));
    }
    let values = effective_values(state, &book.legs, live);
    let all_frozen = book.legs.iter().all(|l| state.frozen(l).is_some());
    if all_frozen {
        // normalized weights can sum to 1 + ulp
        let value = Support::UNIT.clamp(basket_value(&book.weights, &values));
        let rule = match book.rule {
            RebalanceRule::None => "basket-terminal:no-rebalance",
            RebalanceRule::DropOnResolution => "basket-terminal:drop-on-resolution",
        };
        let tau = book
            .legs
            .iter()
            .filter_map(|l| state.frozen(l))
            .map(|r| r.tau)
            .max()
            .unwrap_or(record.tau);
        let rec = finish(state, SettlementKind::Terminal, tau, value, leg, rule)?;
        return Ok((Transition::Settled(rec), None));
    }
    if book.rule == RebalanceRule::DropOnResolution && book.dropped.insert(i) {
        let out = rebalance_weights(&book.weights, &values, i, book.rule, record.tau)?;
        book.weights = out.weights;
        return Ok((Transition::Continue, out.discontinuity));
    }
    Ok((Transition::Continue, None))
}

// ---------------------------------------------------------------------------
// Entropy and rolling
// ---------------------------------------------------------------------------

/// Entropy collapses to exactly zero whatever the outcome.
pub fn settle_entropy(
    state: &mut ContractState,
    leg: &LegId,
    record: ResolutionRecord,
) -> Result<Transition, SettlementError> {
    ensure_frozen(state, leg, record)?;
    if state.phase().is_terminal() {
        return Ok(Transition::NoOp);
    }
    let rec = finish(
        state,
        SettlementKind::Terminal,
        record.tau,
        0.0,
        leg,
        "entropy-collapse",
    )?;
    Ok(Transition::Settled(rec))
}

/// Resolution of a rolling-contract constituent. Only the final constituent
/// settles the contract; earlier ones must have been rolled out of already.
pub fn settle_rolling(
    state: &mut ContractState,
    leg: &LegId,
    record: ResolutionRecord,
    constituents: &[LegId],
) -> Result<Transition, SettlementError> {
    let idx = constituents
        .iter()
        .position(|c| c == leg)
        .ok_or_else(|| SettlementError::UnexpectedLeg(leg.clone()))?;
    ensure_frozen(state, leg, record)?;
    if state.phase().is_terminal() || idx < state.active_constituent {
        return Ok(Transition::NoOp);
    }
    if idx > state.active_constituent {
        return Ok(Transition::Continue);
    }
    if idx + 1 < constituents.len() {
        return Err(SettlementError::RollIncomplete(leg.clone()));
    }
    let rec = finish(
        state,
        SettlementKind::Terminal,
        record.tau,
        record.outcome.value(),
        leg,
        "constituent-terminal",
    )?;
    Ok(Transition::Settled(rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructors::{PointStatus, Support};
    use crate::model::VariantKind;

    fn rec(tau: TimeMs, yes: bool) -> ResolutionRecord {
        ResolutionRecord {
            tau,
            outcome: if yes { Outcome::Yes } else { Outcome::No },
        }
    }

    fn series(points: &[(TimeMs, f64)]) -> IndexSeries {
        let mut s = IndexSeries::new(VariantKind::Conditional, Support::UNIT);
        for &(t, v) in points {
            s.push(t, v, PointStatus::Valid);
        }
        s
    }

    fn rules(termination: TerminationRule, ordering: OrderingRule) -> ConditionalRules {
        ConditionalRules {
            leg_a: "a".into(),
            leg_b: "b".into(),
            conditioning: Conditioning::Direct,
            termination,
            ordering,
        }
    }

    #[test]
    fn twap_cases() {
        assert_eq!(twap(&series(&[(0, 0.4)]), 100, 50).unwrap(), 0.4);
        let s = series(&[(0, 0.2), (50, 0.6)]);
        assert!((twap(&s, 100, 100).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(
            twap(&series(&[(200, 0.4)]), 100, 50),
            Err(SettlementError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn condition_fails_fixed_rule() {
        let mut st = ContractState::new();
        let (t, _) = settle_conditional(
            &mut st,
            &"b".into(),
            rec(10, false),
            &rules(TerminationRule::Fixed { value: 0.5 }, OrderingRule::JointAtB),
            &series(&[(0, 0.3)]),
        )
        .unwrap();
        let Transition::Settled(r) = t else { panic!() };
        assert_eq!((r.kind, r.value), (SettlementKind::EarlyTermination, 0.5));
        assert_eq!(st.phase(), Phase::TerminatedEarly);
    }

    #[test]
    fn condition_fails_twap_of_constant() {
        let mut st = ContractState::new();
        let hist = series(&[(0, 0.3), (1000, 0.3), (2000, 0.3)]);
        let (t, _) = settle_conditional(
            &mut st,
            &"b".into(),
            rec(86_400_000, false),
            &rules(
                TerminationRule::Twap {
                    window_ms: 86_400_000,
                },
                OrderingRule::JointAtB,
            ),
            &hist,
        )
        .unwrap();
        let Transition::Settled(r) = t else { panic!() };
        assert_eq!(r.value, 0.3);
    }

    #[test]
    fn condition_met_tracks_leg_a() {
        let mut st = ContractState::new();
        let r = rules(TerminationRule::LastTick, OrderingRule::JointAtB);
        let (t, track) =
            settle_conditional(&mut st, &"b".into(), rec(10, true), &r, &series(&[(0, 0.3)])).unwrap();
        assert_eq!(t, Transition::Continue);
        assert_eq!(track, Some(ConditionalTracking::LegA));
        let (t, _) =
            settle_conditional(&mut st, &"a".into(), rec(20, false), &r, &series(&[(0, 0.3)])).unwrap();
        let Transition::Settled(rec) = t else { panic!() };
        assert_eq!((rec.kind, rec.value), (SettlementKind::Terminal, 0.0));
    }

    #[test]
    fn joint_at_b_both_yes() {
        let mut st = ContractState::new();
        let r = rules(TerminationRule::LastTick, OrderingRule::JointAtB);
        let h = series(&[(0, 0.3)]);
        let (_, track) = settle_conditional(&mut st, &"a".into(), rec(5, true), &r, &h).unwrap();
        assert_eq!(track, Some(ConditionalTracking::FrozenA(1.0)));
        let (t, _) = settle_conditional(&mut st, &"b".into(), rec(10, true), &r, &h).unwrap();
        let Transition::Settled(rec) = t else { panic!() };
        assert_eq!(
            (rec.kind, rec.value, rec.time),
            (SettlementKind::Terminal, 1.0, 10)
        );
    }

    #[test]
    fn settle_at_a_ends_early() {
        let mut st = ContractState::new();
        let r = rules(TerminationRule::LastTick, OrderingRule::SettleAtA);
        let (t, _) =
            settle_conditional(&mut st, &"a".into(), rec(5, true), &r, &series(&[(0, 0.3)])).unwrap();
        let Transition::Settled(out) = t else { panic!() };
        assert_eq!((out.value, out.time), (1.0, 5));
        let (t, _) =
            settle_conditional(&mut st, &"b".into(), rec(9, false), &r, &series(&[(0, 0.3)])).unwrap();
        assert_eq!(t, Transition::NoOp);
    }

    #[test]
    fn simultaneous_conditional_is_order_independent() {
        for first_a in [true, false] {
            for (ya, yb) in [(true, true), (true, false), (false, true), (false, false)] {
                let mut st = ContractState::new();
                st.freeze(&"a".into(), rec(10, ya)).unwrap();
                st.freeze(&"b".into(), rec(10, yb)).unwrap();
                let r = rules(TerminationRule::Fixed { value: 0.25 }, OrderingRule::JointAtB);
                let h = series(&[(0, 0.3)]);
                let order: [&str; 2] = if first_a { ["a", "b"] } else { ["b", "a"] };
                let mut settled = None;
                for l in order {
                    let (t, _) = settle_conditional(
                        &mut st,
                        &l.into(),
                        rec(10, l == "a" && ya || l == "b" && yb),
                        &r,
                        &h,
                    )
                    .unwrap();
                    if let Transition::Settled(rec) = t {
                        assert!(settled.is_none());
                        settled = Some(rec.value);
                    }
                }
                let expect = if yb {
                    if ya {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.25
                };
                assert_eq!(settled, Some(expect));
            }
        }
    }

    #[test]
    fn unexpected_leg() {
        let mut st = ContractState::new();
        let r = rules(TerminationRule::LastTick, OrderingRule::JointAtB);
        assert!(matches!(
            settle_conditional(&mut st, &"z".into(), rec(1, true), &r, &series(&[])),
            Err(SettlementError::UnexpectedLeg(_))
        ));
        assert!(matches!(
            settle_spread(&mut st, &"z".into(), rec(1, true), &"a".into(), &"b".into()),
            Err(SettlementError::UnexpectedLeg(_))
        ));
    }

    #[test]
    fn spread_terminals() {
        for (ya, yb, expect) in [(true, true, 0.0), (false, true, -1.0), (true, false, 1.0)] {
            let mut st = ContractState::new();
            let (a, b): (LegId, LegId) = ("a".into(), "b".into());
            assert_eq!(
                settle_spread(&mut st, &a, rec(1, ya), &a, &b).unwrap(),
                Transition::Continue
            );
            let Transition::Settled(r) = settle_spread(&mut st, &b, rec(2, yb), &a, &b).unwrap() else {
                panic!()
            };
            assert_eq!(r.value, expect);
        }
    }

    #[test]
    fn basket_no_rebalance_terminal() {
        let legs: Vec<LegId> = vec!["a".into(), "b".into(), "c".into()];
        let mut book = BasketBook::new(legs.clone(), vec![0.5, 0.3, 0.2], RebalanceRule::None);
        let mut st = ContractState::new();
        let outs = [true, false, true];
        let mut last = None;
        for (i, l) in legs.iter().enumerate() {
            let (t, d) = settle_basket(&mut st, l, rec(i as TimeMs, outs[i]), &mut book, &[0.5; 3]).unwrap();
            assert!(d.is_none());
            last = Some(t);
        }
        let Some(Transition::Settled(r)) = last else {
            panic!()
        };
        assert_eq!(r.value, 0.5 * 1.0 + 0.3 * 0.0 + 0.2 * 1.0);
    }

    #[test]
    fn basket_drop_single_survivor() {
        let legs: Vec<LegId> = vec!["a".into(), "b".into()];
        let mut book = BasketBook::new(legs.clone(), vec![0.5, 0.5], RebalanceRule::DropOnResolution);
        let mut st = ContractState::new();
        let (_, d) = settle_basket(&mut st, &legs[0], rec(1, true), &mut book, &[0.9, 0.4]).unwrap();
        let d = d.unwrap();
        assert_eq!((d.pre, d.post), (0.7, 0.4));
        assert_eq!(book.weights, vec![0.0, 1.0]);
        let (t, _) = settle_basket(&mut st, &legs[1], rec(2, false), &mut book, &[0.9, 0.4]).unwrap();
        let Transition::Settled(r) = t else { panic!() };
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn entropy_is_outcome_independent() {
        for yes in [true, false] {
            let mut st = ContractState::new();
            let Transition::Settled(r) = settle_entropy(&mut st, &"a".into(), rec(3, yes)).unwrap() else {
                panic!()
            };
            assert_eq!((r.value, r.kind), (0.0, SettlementKind::Terminal));
        }
    }

    #[test]
    fn settled_contract_ignores_later_events() {
        let mut st = ContractState::new();
        settle_entropy(&mut st, &"a".into(), rec(3, true)).unwrap();
        assert_eq!(
            settle_entropy(&mut st, &"a".into(), rec(3, true)).unwrap(),
            Transition::NoOp
        );
        assert_eq!(st.phase(), Phase::Resolved);
    }
}
