//! Streaming, settlement-aware computation of a variant's underlying.
//!
//! The engine only sees leg values pushed to it through price and resolution
//! events, so every index value depends on data at or before its time.

use std::collections::BTreeMap;

use crate::constructors::{
    basket_value, binary_entropy, conditional_step, funding_target_value, liquidity_index, spread_value,
    Discontinuity, IndexSeries, LiquidityConfig, PointStatus, RollingVariance, SpreadFrozen, Support,
    VarianceConfig,
};
use crate::model::{
    AlignedGrid, ContractState, FloorAction, FundingTarget, LegId, ResolutionRecord, TimeMs, VariantKind,
    VariantSpec, WeightRule,
};
use crate::risk::{jump_magnitude, Aggregation, FundingBase, JumpState};
use crate::schedule::{roll_weight, rolled_index, schedule_roll, HaltConfig, RollSchedule};
use crate::settlement::{
    settle_basket, settle_conditional, settle_entropy, settle_rolling, settle_spread, BasketBook,
    ConditionalRules, ConditionalTracking, Conditioning, Transition,
};

use super::ReplayError;

enum Detail {
    Conditional {
        rules: ConditionalRules,
        joint: Option<usize>,
        floor: f64,
        action: FloorAction,
        tracking: ConditionalTracking,
        last_valid: Option<f64>,
        history: IndexSeries,
    },
    Spread {
        simultaneous: bool,
    },
    Basket {
        book: BasketBook,
        available_from: TimeMs,
    },
    Variance {
        est: Box<RollingVariance>,
    },
    Entropy,
    Liquidity {
        series: IndexSeries,
    },
    Rolling {
        schedule: RollSchedule,
        lambda: f64,
        /// Per-constituent prefix sums of bucket volume on the grid.
        volume_prefix: Vec<Option<Vec<f64>>>,
        times: Vec<TimeMs>,
    },
    FundingOnly {
        target: FundingTarget,
    },
}

/// Worst-case terminal move inputs, owned so the caller can hold them across
/// state mutation.
#[derive(Clone, Debug, PartialEq)]
pub enum JumpSnapshot {
    Continuous,
    Single(f64),
    Spread {
        a: Option<f64>,
        b: Option<f64>,
        simultaneous: bool,
    },
    Basket {
        weights: Vec<f64>,
        values: Vec<f64>,
        active: Vec<bool>,
    },
}

impl JumpSnapshot {
    pub fn magnitude(&self, side: crate::model::Side, aggregation: Aggregation) -> f64 {
        let state = match self {
            JumpSnapshot::Continuous => JumpState::Continuous,
            JumpSnapshot::Single(index) => JumpState::Single { index: *index },
            JumpSnapshot::Spread { a, b, simultaneous } => JumpState::Spread {
                a: *a,
                b: *b,
                simultaneous: *simultaneous,
            },
            JumpSnapshot::Basket {
                weights,
                values,
                active,
            } => JumpState::Basket {
                weights,
                values,
                active,
            },
        };
        jump_magnitude(state, side, aggregation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FundingInput {
    Probability(f64),
    Spread(Vec<f64>),
    Variance(f64),
    Unbounded,
    /// Funding-only contracts: the index is the funding target itself.
    Target(f64),
}

impl FundingInput {
    pub fn base(&self) -> FundingBase<'_> {
        match self {
            FundingInput::Probability(index) => FundingBase::Probability { index: *index },
            FundingInput::Spread(v) => FundingBase::Spread { unresolved: v },
            FundingInput::Variance(index) => FundingBase::Variance { index: *index },
            FundingInput::Unbounded | FundingInput::Target(_) => FundingBase::Unbounded,
        }
    }
}

/// One roll checkpoint's effect on the underlying.
#[derive(Clone, Debug, PartialEq)]
pub struct RollStep {
    pub plan: usize,
    pub from_leg: LegId,
    pub to_leg: LegId,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub completed: bool,
}

pub struct VariantEngine {
    kind: VariantKind,
    legs: Vec<LegId>,
    values: Vec<Option<f64>>,
    taus: BTreeMap<LegId, TimeMs>,
    support: Support,
    delta_r_ms: TimeMs,
    detail: Detail,
    last: Option<(f64, PointStatus)>,
}

impl VariantEngine {
    /// Builds the engine for a validated spec. The grid is read only for
    /// resolution times and, where a variant needs them, microstructure
    /// columns that are themselves causal on the grid.
    pub fn new(
        spec: &VariantSpec,
        grid: &AlignedGrid,
        halt: &HaltConfig,
        spread_simultaneous: Option<bool>,
    ) -> Result<Self, ReplayError> {
        let legs = spec.referenced_legs();
        let mut taus = BTreeMap::new();
        for l in &legs {
            let a = grid
                .leg(l)
                .ok_or_else(|| ReplayError::Config(format!("leg {l} missing from aligned data")))?;
            if let Some(r) = a.resolution {
                taus.insert(l.clone(), r.tau);
            }
        }
        let pos = |l: &LegId| legs.iter().position(|x| x == l).expect("referenced leg");
        let (support, detail) = match spec {
            VariantSpec::Conditional {
                joint_leg,
                denom_floor,
                floor_action,
                ..
            } => {
                let rules = ConditionalRules::from_spec(spec).expect("conditional spec");
                (
                    Support::UNIT,
                    Detail::Conditional {
                        joint: joint_leg.as_ref().map(pos),
                        floor: *denom_floor,
                        action: *floor_action,
                        tracking: ConditionalTracking::Ratio,
                        last_valid: None,
                        history: IndexSeries::new(VariantKind::Conditional, Support::UNIT),
                        rules,
                    },
                )
            }
            VariantSpec::Spread {
                leg_a,
                leg_b,
                simultaneous_regime,
            } => {
                let near = match (taus.get(leg_a), taus.get(leg_b)) {
                    (Some(a), Some(b)) => (a - b).abs() <= grid.grid_ms,
                    _ => false,
                };
                let simultaneous = spread_simultaneous.or(*simultaneous_regime).unwrap_or(near);
                (Support::SIGNED_UNIT, Detail::Spread { simultaneous })
            }
            VariantSpec::Basket {
                legs: members,
                weight_rule,
                rebalance_rule,
                ..
            } => {
                let n = members.len();
                let (weights, available_from) = match weight_rule {
                    WeightRule::Static { weights } => (weights.clone(), TimeMs::MIN),
                    WeightRule::Equal => (vec![1.0 / n as f64; n], TimeMs::MIN),
                    WeightRule::VolumeSnapshot { time_ms } => {
                        (snapshot_weights(grid, members, *time_ms)?, *time_ms)
                    }
                };
                (
                    Support::UNIT,
                    Detail::Basket {
                        book: BasketBook::new(members.clone(), weights, *rebalance_rule),
                        available_from,
                    },
                )
            }
            VariantSpec::Variance {
                estimator,
                window_ms,
                tick_ms,
                normalization,
                ..
            } => {
                let cfg = VarianceConfig {
                    estimator: *estimator,
                    window_ms: *window_ms,
                    tick_ms: *tick_ms,
                    normalization: *normalization,
                };
                let est = RollingVariance::new(cfg, grid.grid_ms)?;
                (cfg.support(), Detail::Variance { est: Box::new(est) })
            }
            VariantSpec::Entropy { .. } => (Support::UNIT, Detail::Entropy),
            VariantSpec::Liquidity {
                measure,
                member_legs,
                depth_aggregation,
                amihud_window_ms,
            } => {
                let cfg = LiquidityConfig {
                    measure: *measure,
                    depth_aggregation: *depth_aggregation,
                    amihud_window_ms: *amihud_window_ms,
                };
                let series = liquidity_index(grid, member_legs, cfg)?;
                (Support::NON_NEGATIVE, Detail::Liquidity { series })
            }
            VariantSpec::Rolling {
                constituents,
                roll_mechanism,
                roll_basis_rule,
                ..
            } => {
                let mut with_tau = Vec::new();
                for c in constituents.iter().take(constituents.len().saturating_sub(1)) {
                    let tau = *taus
                        .get(c)
                        .ok_or_else(|| crate::schedule::ScheduleError::MissingResolution(c.clone()))?;
                    with_tau.push((c.clone(), tau));
                }
                if let Some(last) = constituents.last() {
                    // the final constituent is never rolled out of
                    let tau = taus.get(last).copied().unwrap_or(TimeMs::MAX);
                    with_tau.push((last.clone(), tau));
                }
                let schedule = schedule_roll(&with_tau, halt.delta_r_ms, *roll_mechanism, *roll_basis_rule)?;
                let volume_prefix = constituents
                    .iter()
                    .map(|c| {
                        grid.leg(c).and_then(|l| l.volume.as_ref()).map(|v| {
                            let mut acc = Vec::with_capacity(v.len() + 1);
                            acc.push(0.0);
                            for x in v {
                                acc.push(acc.last().copied().unwrap_or(0.0) + x);
                            }
                            acc
                        })
                    })
                    .collect();
                (
                    Support::UNIT,
                    Detail::Rolling {
                        schedule,
                        lambda: 0.0,
                        volume_prefix,
                        times: grid.times.clone(),
                    },
                )
            }
            VariantSpec::FundingOnly { target, .. } => {
                let support = match target {
                    FundingTarget::Basis { .. } => Support::SIGNED_UNIT,
                    _ => Support::UNIT,
                };
                (
                    support,
                    Detail::FundingOnly {
                        target: target.clone(),
                    },
                )
            }
        };
        Ok(Self {
            kind: spec.kind(),
            values: vec![None; legs.len()],
            legs,
            taus,
            support,
            delta_r_ms: halt.delta_r_ms,
            detail,
            last: None,
        })
    }

    pub fn kind(&self) -> VariantKind {
        self.kind
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn legs(&self) -> &[LegId] {
        &self.legs
    }

    pub fn taus(&self) -> &BTreeMap<LegId, TimeMs> {
        &self.taus
    }

    pub fn roll_schedule(&self) -> Option<&RollSchedule> {
        match &self.detail {
            Detail::Rolling { schedule, .. } => Some(schedule),
            _ => None,
        }
    }

    pub fn current(&self) -> Option<(f64, PointStatus)> {
        self.last
    }

    fn idx(&self, leg: &LegId) -> Option<usize> {
        self.legs.iter().position(|l| l == leg)
    }

    /// Records the latest observed value of a leg. Unreferenced legs are
    /// ignored.
    pub fn update_leg(&mut self, leg: &LegId, value: f64) {
        if let Some(i) = self.idx(leg) {
            self.values[i] = Some(value);
        }
    }

    fn value(&self, leg: &LegId) -> Option<f64> {
        lookup(&self.legs, &self.values, leg)
    }

    /// Recomputes the underlying at `t`. `tick` marks the once-per-grid-time
    /// call that advances windowed estimators; other calls (after a
    /// resolution or a roll step) reuse the windowed state. `basis` is the
    /// synthetic mark basis, read only by the funding-only basis target.
    pub fn recompute(&mut self, t: TimeMs, tick: bool, basis: f64) -> Option<(f64, PointStatus)> {
        let valid = |v: f64| Some((v, PointStatus::Valid));
        let out = match &mut self.detail {
            Detail::Conditional {
                rules,
                joint,
                floor,
                action,
                tracking,
                last_valid,
                history,
            } => {
                let a = lookup(&self.legs, &self.values, &rules.leg_a);
                let b = lookup(&self.legs, &self.values, &rules.leg_b);
                let out = match *tracking {
                    ConditionalTracking::FrozenA(v) => valid(v),
                    ConditionalTracking::LegA => a.and_then(valid),
                    ConditionalTracking::Ratio => {
                        let (jn, dn) = match rules.conditioning {
                            Conditioning::Direct => (joint.and_then(|j| self.values[j]), b),
                            Conditioning::Complement => (a, b.map(|p| 1.0 - p)),
                        };
                        match (jn, dn) {
                            (Some(jn), Some(dn)) => {
                                let step = conditional_step(jn, dn, *floor, *action, *last_valid);
                                if step.status == PointStatus::Valid {
                                    *last_valid = Some(step.value);
                                }
                                Some((step.value, step.status))
                            }
                            _ => None,
                        }
                    }
                };
                if tick {
                    if let Some((v, s)) = out {
                        history.push(t, v, s);
                    }
                }
                out
            }
            Detail::Spread { .. } => {
                let (a, b) = (self.values[0], self.values[1]);
                match (a, b) {
                    // frozen legs already carry their outcome
                    (Some(a), Some(b)) => valid(spread_value(a, b, SpreadFrozen::default(), t)),
                    _ => None,
                }
            }
            Detail::Basket { book, available_from } => {
                if t < *available_from {
                    None
                } else {
                    let vals: Option<Vec<f64>> = book
                        .legs
                        .iter()
                        .map(|l| lookup(&self.legs, &self.values, l))
                        .collect();
                    vals.map(|v| {
                        (
                            Support::UNIT.clamp(basket_value(&book.weights, &v)),
                            PointStatus::Valid,
                        )
                    })
                }
            }
            Detail::Variance { est } => {
                if tick {
                    match self.values[0] {
                        Some(p) => est.push(p).and_then(valid),
                        None => None,
                    }
                } else {
                    self.last
                }
            }
            Detail::Entropy => self.values[0].and_then(|p| {
                let frozen = self.taus.get(&self.legs[0]).is_some_and(|&tau| t >= tau);
                valid(if frozen { 0.0 } else { binary_entropy(p) })
            }),
            Detail::Liquidity { series } => {
                if tick {
                    match series.timestamps.binary_search(&t) {
                        Ok(k) => valid(series.values[k]),
                        Err(_) => None,
                    }
                } else {
                    self.last
                }
            }
            Detail::Rolling { schedule, lambda, .. } => {
                // active constituent is tracked in the contract state; the
                // engine mirrors it through `active`
                let active = schedule.plans.iter().filter(|p| p.executed).count();
                let cur = self.values[active];
                let next = self.values.get(active + 1).copied().flatten();
                match (cur, next) {
                    (Some(c), _) if *lambda == 0.0 => valid(c),
                    (Some(c), Some(n)) => valid(rolled_index(c, n, *lambda)),
                    _ => None,
                }
            }
            Detail::FundingOnly { target } => {
                let v = match target {
                    FundingTarget::Basis { .. } => self.values[0].map(|p| {
                        let leg_mark = (p + basis).clamp(0.0, 1.0);
                        funding_target_value(target, leg_mark, p, None).unwrap_or(0.0)
                    }),
                    FundingTarget::Divergence { .. } => match (self.values[0], self.values[1]) {
                        (Some(a), Some(b)) => funding_target_value(target, 0.0, a, Some(b)).ok(),
                        _ => None,
                    },
                    FundingTarget::Disagreement => None,
                };
                v.and_then(valid)
            }
        };
        let out = out.map(|(v, s)| (self.support.clamp(v), s));
        if out.is_some() {
            self.last = out;
        }
        out
    }

    /// Time until the closest pending resolution that can collapse the
    /// underlying. `None` for variants without terminal collapse.
    pub fn time_to_tau(&self, t: TimeMs, state: &ContractState) -> Option<TimeMs> {
        let pending = |legs: &mut dyn Iterator<Item = &LegId>| {
            legs.filter(|l| state.frozen(l).is_none())
                .filter_map(|l| self.taus.get(l))
                .map(|tau| tau - t)
                .min()
        };
        match &self.detail {
            Detail::Conditional { rules, .. } => pending(&mut [&rules.leg_a, &rules.leg_b].into_iter()),
            Detail::Spread { .. } => pending(&mut self.legs.iter()),
            Detail::Basket { book, .. } => pending(&mut book.legs.iter()),
            // a constituent rolled out of before its zone never collapses
            // under the contract
            Detail::Rolling { schedule, .. } => {
                let i = state.active_constituent;
                let exposed = i + 1 >= self.legs.len() || schedule.overlaps_zone(i);
                self.legs
                    .get(i)
                    .filter(|_| exposed)
                    .and_then(|l| pending(&mut std::iter::once(l)))
            }
            _ => None,
        }
    }

    /// Whether the rolling contract is inside the resolution zone of a
    /// constituent it failed to roll out of in time.
    pub fn force_full_margin(&self, t: TimeMs, state: &ContractState) -> bool {
        match &self.detail {
            Detail::Rolling { schedule, .. } => {
                let i = state.active_constituent;
                schedule.overlaps_zone(i)
                    && self
                        .legs
                        .get(i)
                        .and_then(|l| self.taus.get(l))
                        .is_some_and(|tau| t >= tau - self.delta_r_ms)
            }
            _ => false,
        }
    }

    pub fn jump_snapshot(&self, state: &ContractState) -> JumpSnapshot {
        let index = self.last.map(|x| x.0);
        match &self.detail {
            Detail::Conditional { .. } | Detail::Rolling { .. } => {
                index.map_or(JumpSnapshot::Continuous, JumpSnapshot::Single)
            }
            Detail::Spread { simultaneous } => {
                let open = |i: usize| {
                    if state.frozen(&self.legs[i]).is_some() {
                        None
                    } else {
                        self.values[i]
                    }
                };
                JumpSnapshot::Spread {
                    a: open(0),
                    b: open(1),
                    simultaneous: *simultaneous,
                }
            }
            Detail::Basket { book, .. } => JumpSnapshot::Basket {
                weights: book.weights.clone(),
                values: book.legs.iter().map(|l| self.value(l).unwrap_or(0.0)).collect(),
                active: book.legs.iter().map(|l| state.frozen(l).is_none()).collect(),
            },
            _ => JumpSnapshot::Continuous,
        }
    }

    pub fn funding_input(&self, state: &ContractState) -> FundingInput {
        let index = self.last.map_or(0.0, |x| x.0);
        match self.kind {
            VariantKind::Conditional | VariantKind::Basket | VariantKind::Rolling => {
                FundingInput::Probability(index)
            }
            VariantKind::Spread => FundingInput::Spread(
                self.legs
                    .iter()
                    .zip(&self.values)
                    .filter(|(l, _)| state.frozen(l).is_none())
                    .filter_map(|(_, v)| *v)
                    .collect(),
            ),
            VariantKind::Variance => FundingInput::Variance(index),
            VariantKind::FundingOnly => FundingInput::Target(index),
            VariantKind::Entropy | VariantKind::Liquidity => FundingInput::Unbounded,
        }
    }

    /// Dispatches a resolution to the variant's settlement logic. The leg
    /// must already carry its outcome through `update_leg`.
    pub fn on_resolution(
        &mut self,
        leg: &LegId,
        record: ResolutionRecord,
        state: &mut ContractState,
    ) -> Result<(Transition, Option<Discontinuity>), ReplayError> {
        let live: Vec<f64> = self.values.iter().map(|v| v.unwrap_or(0.0)).collect();
        let legs = self.legs.clone();
        let value_of = |l: &LegId| legs.iter().position(|x| x == l).map_or(0.0, |i| live[i]);
        Ok(match &mut self.detail {
            Detail::Conditional {
                rules,
                tracking,
                history,
                ..
            } => {
                if leg != &rules.leg_a && leg != &rules.leg_b {
                    return Ok((Transition::NoOp, None));
                }
                let (t, next) = settle_conditional(state, leg, record, rules, history)?;
                if let Some(next) = next {
                    *tracking = next;
                }
                (t, None)
            }
            Detail::Spread { .. } => (settle_spread(state, leg, record, &legs[0], &legs[1])?, None),
            Detail::Basket { book, .. } => {
                let live: Vec<f64> = book.legs.iter().map(value_of).collect();
                settle_basket(state, leg, record, book, &live)?
            }
            Detail::Entropy => (settle_entropy(state, leg, record)?, None),
            Detail::Rolling { .. } => (settle_rolling(state, leg, record, &legs)?, None),
            Detail::Variance { .. } | Detail::Liquidity { .. } | Detail::FundingOnly { .. } => {
                (Transition::NoOp, None)
            }
        })
    }

    /// Grid times and explicit instants at which roll weights may change.
    pub fn roll_checkpoints(&self, times: &[TimeMs]) -> Vec<TimeMs> {
        let Detail::Rolling { schedule, .. } = &self.detail else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for p in &schedule.plans {
            out.extend(times.iter().copied().filter(|&t| t >= p.start && t < p.end));
            out.push(p.end);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Advances the active roll to its weight at `t`. Returns the step if
    /// the weight changed; completing a roll moves the contract to the next
    /// constituent.
    pub fn roll_step(
        &mut self,
        t: TimeMs,
        state: &mut ContractState,
    ) -> Result<Option<RollStep>, ReplayError> {
        let Detail::Rolling {
            schedule,
            lambda,
            volume_prefix,
            times,
        } = &mut self.detail
        else {
            return Ok(None);
        };
        let i = state.active_constituent;
        let Some(plan) = schedule.plans.get(i) else {
            return Ok(None);
        };
        if t < plan.start || plan.executed {
            return Ok(None);
        }
        let cum = volume_prefix[plan.to_constituent].as_ref().map(|pre| {
            let upto = |x: TimeMs| times.partition_point(|&g| g <= x);
            pre[upto(t)] - pre[upto(plan.start)]
        });
        let new = roll_weight(plan, t, cum)?;
        if new <= *lambda {
            return Ok(None);
        }
        let step = RollStep {
            plan: i,
            from_leg: plan.from_leg.clone(),
            to_leg: plan.to_leg.clone(),
            lambda_before: *lambda,
            lambda_after: new,
            completed: new >= 1.0,
        };
        if step.completed {
            schedule.plans[i].executed = true;
            *lambda = 0.0;
            state.active_constituent = i + 1;
        } else {
            *lambda = new;
        }
        Ok(Some(step))
    }

    /// Adds a step's basis to the executed plan's running total.
    pub fn record_roll_basis(&mut self, plan: usize, basis: f64) {
        if let Detail::Rolling { schedule, .. } = &mut self.detail {
            if let Some(p) = schedule.plans.get_mut(plan) {
                p.realized_basis += basis;
            }
        }
    }
}

fn lookup(legs: &[LegId], values: &[Option<f64>], leg: &LegId) -> Option<f64> {
    legs.iter().position(|l| l == leg).and_then(|i| values[i])
}

/// Weights proportional to each member's volume traded up to `time_ms`.
fn snapshot_weights(grid: &AlignedGrid, members: &[LegId], time_ms: TimeMs) -> Result<Vec<f64>, ReplayError> {
    let upto = grid.times.partition_point(|&t| t <= time_ms);
    let mut vols = Vec::with_capacity(members.len());
    for m in members {
        let v = grid
            .leg(m)
            .and_then(|l| l.volume.as_ref())
            .ok_or_else(|| ReplayError::Config(format!("leg {m} lacks volume for snapshot weights")))?;
        vols.push(v[..upto].iter().sum::<f64>());
    }
    let total: f64 = vols.iter().sum();
    if !(total > 0.0) {
        return Err(ReplayError::Config(format!(
            "no volume traded up to snapshot time {time_ms}"
        )));
    }
    Ok(vols.into_iter().map(|v| v / total).collect())
}
