//! The replay loop.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constructors::{Discontinuity, IndexSeries, PointStatus};
use crate::model::{
    align_series, sort_events, validate_spec, AlignedGrid, ContractState, LegSeries, MarketData, Phase,
    Position, ProbabilityPoint, ReplayEvent, Side, TimeMs, TraderOrder, VariantKind, VariantSpec, DAY_MS,
};
use crate::risk::{
    check_liquidation, clip, funding_rate, maintenance_margin, max_leverage, FundingBase, FundingLedger,
    FundingTransfer, LiquidationCheck, RiskConfig,
};
use crate::schedule::{apply_roll_basis, halt_windows, in_any_window, HaltConfig, HaltWindow};
use crate::settlement::{SettlementKind, SettlementRecord, Transition};

use super::engine::VariantEngine;
use super::{
    AccountRecord, FundingRecord, Granularity, LiquidationRecord, OrderRejection, Population, ReplayConfig,
    ReplayError, ReplayReport, ReplayStats, ReportMeta, RollEvent, TickRecord, HOUSE, REFLEXIVITY_CAVEAT,
};

const STREAM_BASIS: u64 = 1;
const STREAM_POPULATION: u64 = 2;

/// Validates the inputs, aligns the referenced legs and runs the replay.
///
/// Validation problems are returned as errors. Failures during the run
/// produce a partial report with `meta.complete == false`.
pub fn replay(
    spec: &VariantSpec,
    data: &MarketData,
    risk: &RiskConfig,
    cfg: &ReplayConfig,
) -> Result<ReplayReport, ReplayError> {
    cfg.validate()?;
    risk.validate()?;
    let spec = validate_spec(spec, data).map_err(ReplayError::Spec)?;
    let legs: Vec<LegSeries> = spec
        .referenced_legs()
        .iter()
        .filter_map(|l| data.leg(l).cloned())
        .collect();
    let grid = align_series(&legs, cfg.grid_ms)?;
    replay_validated(&spec, &grid, risk, cfg)
}

/// Runs a replay over already validated and aligned inputs.
pub fn replay_validated(
    spec: &VariantSpec,
    grid: &AlignedGrid,
    risk: &RiskConfig,
    cfg: &ReplayConfig,
) -> Result<ReplayReport, ReplayError> {
    if grid.times.is_empty() {
        return Err(ReplayError::Config("aligned grid is empty".into()));
    }
    check_correction(spec, risk)?;
    let mut run = Run::new(spec, grid, risk, cfg)?;
    let events = run.events()?;
    let outcome = run.drive(&events);
    Ok(run.finish(outcome.err()))
}

/// Index-only replay: no traders, zero basis.
pub fn build_index(
    spec: &VariantSpec,
    data: &MarketData,
    grid_ms: TimeMs,
) -> Result<IndexSeries, ReplayError> {
    let cfg = ReplayConfig {
        grid_ms,
        ..ReplayConfig::default()
    };
    let report = replay(spec, data, &RiskConfig::default(), &cfg)?;
    if let Some(e) = &report.meta.error {
        return Err(ReplayError::Config(e.clone()));
    }
    let support = report_support(spec);
    let mut out = IndexSeries::new(spec.kind(), support);
    for t in &report.ticks {
        out.push(t.time, t.index, t.status);
    }
    Ok(out)
}

fn report_support(spec: &VariantSpec) -> crate::constructors::Support {
    use crate::constructors::{Support, VarianceConfig};
    match spec {
        VariantSpec::Spread { .. } => Support::SIGNED_UNIT,
        VariantSpec::Variance {
            estimator,
            window_ms,
            tick_ms,
            normalization,
            ..
        } => VarianceConfig {
            estimator: *estimator,
            window_ms: *window_ms,
            tick_ms: *tick_ms,
            normalization: *normalization,
        }
        .support(),
        VariantSpec::Liquidity { .. } => Support::NON_NEGATIVE,
        VariantSpec::FundingOnly {
            target: crate::model::FundingTarget::Basis { .. },
            ..
        } => Support::SIGNED_UNIT,
        _ => Support::UNIT,
    }
}

/// Rejects a configured funding correction the variant cannot use before
/// any event is processed.
fn check_correction(spec: &VariantSpec, risk: &RiskConfig) -> Result<(), ReplayError> {
    let kind = spec.kind();
    let probe = [0.5];
    let base = match kind {
        VariantKind::FundingOnly => return Ok(()),
        VariantKind::Conditional | VariantKind::Basket | VariantKind::Rolling => {
            FundingBase::Probability { index: 0.5 }
        }
        VariantKind::Spread => FundingBase::Spread { unresolved: &probe },
        VariantKind::Variance => FundingBase::Variance { index: 0.0 },
        VariantKind::Entropy | VariantKind::Liquidity => FundingBase::Unbounded,
    };
    funding_rate(0.0, 0.0, &risk.funding, base, kind)?;
    Ok(())
}

/// Scripted population orders, drawn on the grid.
fn population_orders(p: &Population, grid: &AlignedGrid, seed: u64) -> Vec<TraderOrder> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_POPULATION);
    let from = p.from_ms.unwrap_or(TimeMs::MIN);
    let to = p.to_ms.unwrap_or(TimeMs::MAX);
    let times: Vec<TimeMs> = grid
        .times
        .iter()
        .copied()
        .filter(|t| (from..=to).contains(t))
        .collect();
    let mut out = Vec::new();
    if times.is_empty() {
        return out;
    }
    let width = (p.traders.max(1) - 1).to_string().len().max(4);
    for k in 0..p.traders {
        for _ in 0..p.orders_per_trader {
            let time = times[rng.random_range(0..times.len())];
            let side = if rng.random::<f64>() < p.long_fraction {
                Side::Long
            } else {
                Side::Short
            };
            let notional = draw(&mut rng, p.notional);
            let leverage = draw(&mut rng, p.leverage);
            out.push(TraderOrder {
                time,
                trader_id: format!("t{k:0width$}"),
                side,
                notional,
                leverage,
            });
        }
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

// ---------------------------------------------------------------------------

struct Run<'a> {
    spec: &'a VariantSpec,
    grid: &'a AlignedGrid,
    risk: &'a RiskConfig,
    cfg: &'a ReplayConfig,
    kind: VariantKind,
    engine: VariantEngine,
    state: ContractState,
    ledger: FundingLedger,
    /// Windows enforced on orders.
    windows: Vec<HaltWindow>,
    /// Windows the schedule implies, enforced or not.
    scheduled: Vec<HaltWindow>,
    basis: f64,
    basis_at: Option<TimeMs>,
    rng: ChaCha8Rng,
    index: Option<f64>,
    status: PointStatus,
    accounts: BTreeMap<String, AccountRecord>,
    ticks: Vec<TickRecord>,
    funding: Vec<FundingRecord>,
    liquidations: Vec<LiquidationRecord>,
    bad_debt_total: f64,
    roll_events: Vec<RollEvent>,
    discontinuities: Vec<Discontinuity>,
    settlements: Vec<SettlementRecord>,
    rejections: Vec<OrderRejection>,
    stats: ReplayStats,
    settled: bool,
    now: TimeMs,
}

impl<'a> Run<'a> {
    fn new(
        spec: &'a VariantSpec,
        grid: &'a AlignedGrid,
        risk: &'a RiskConfig,
        cfg: &'a ReplayConfig,
    ) -> Result<Self, ReplayError> {
        let engine = VariantEngine::new(spec, grid, &cfg.halt, risk.spread_simultaneous)?;
        let rolls = engine.roll_schedule();
        let scheduled = halt_windows(
            spec,
            engine.taus(),
            &HaltConfig {
                enabled: true,
                ..cfg.halt
            },
            rolls,
        );
        let windows = if cfg.halt.enabled {
            scheduled.clone()
        } else {
            Vec::new()
        };
        let cadence = match spec {
            VariantSpec::FundingOnly {
                settlement_cadence, ..
            } => *settlement_cadence,
            _ => risk.funding.cadence,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_BASIS);
        let mut accounts = BTreeMap::new();
        accounts.insert(HOUSE.to_string(), account(HOUSE));
        Ok(Self {
            spec,
            grid,
            risk,
            cfg,
            kind: spec.kind(),
            engine,
            state: ContractState::new(),
            ledger: FundingLedger::new(cadence),
            windows,
            scheduled,
            basis: 0.0,
            basis_at: None,
            rng,
            index: None,
            status: PointStatus::Valid,
            accounts,
            ticks: Vec::new(),
            funding: Vec::new(),
            liquidations: Vec::new(),
            bad_debt_total: 0.0,
            roll_events: Vec::new(),
            discontinuities: Vec::new(),
            settlements: Vec::new(),
            rejections: Vec::new(),
            stats: ReplayStats::default(),
            settled: false,
            now: grid.times[0],
        })
    }

    fn start(&self) -> TimeMs {
        self.grid.times[0]
    }

    fn end(&self) -> TimeMs {
        *self.grid.times.last().expect("non-empty grid")
    }

    /// The merged, totally ordered event stream.
    fn events(&self) -> Result<Vec<ReplayEvent>, ReplayError> {
        let mut events = Vec::new();
        let (start, end) = (self.start(), self.end());
        for leg in self.engine.legs() {
            let a = self
                .grid
                .leg(leg)
                .ok_or_else(|| ReplayError::Config(format!("leg {leg} missing from aligned data")))?;
            let tau = a.resolution.map(|r| r.tau);
            for (k, &t) in self.grid.times.iter().enumerate() {
                if tau.is_some_and(|tau| t >= tau) {
                    break;
                }
                events.push(ReplayEvent::PriceUpdate {
                    leg_id: leg.clone(),
                    point: ProbabilityPoint::new(t, a.values[k]),
                });
            }
            if let Some(record) = a.resolution {
                if record.tau <= end {
                    events.push(ReplayEvent::Resolution {
                        leg_id: leg.clone(),
                        record,
                    });
                }
            }
        }
        let interval = self.risk.funding.interval_ms;
        let mut t = start.div_euclid(interval) * interval;
        if t < start {
            t += interval;
        }
        while t <= end {
            events.push(ReplayEvent::FundingTick { time: t });
            t += interval;
        }
        for t in self.engine.roll_checkpoints(&self.grid.times) {
            if t <= end {
                events.push(ReplayEvent::RollCheckpoint { time: t });
            }
        }
        let mut orders = self.cfg.orders.clone();
        if let Some(p) = &self.cfg.population {
            orders.extend(population_orders(p, self.grid, self.cfg.seed));
        }
        events.extend(orders.into_iter().map(ReplayEvent::TraderOrder));
        sort_events(&mut events);
        Ok(events)
    }

    fn drive(&mut self, events: &[ReplayEvent]) -> Result<(), ReplayError> {
        let mut i = 0;
        while i < events.len() && !self.settled {
            let t = events[i].time();
            self.now = t;
            let mut j = i;
            while j < events.len() && events[j].time() == t {
                j += 1;
            }
            let mut k = i;
            while k < j && !self.settled {
                let rank = events[k].kind_rank();
                let mut m = k;
                while m < j && events[m].kind_rank() == rank {
                    m += 1;
                }
                self.group(t, &events[k..m])?;
                k = m;
            }
            if !self.settled && self.grid.times.binary_search(&t).is_ok() {
                if let Some(index) = self.index {
                    self.ticks.push(TickRecord {
                        time: t,
                        index,
                        mark: self.state.mark,
                        status: self.status,
                    });
                }
            }
            i = j;
        }
        Ok(())
    }

    fn group(&mut self, t: TimeMs, events: &[ReplayEvent]) -> Result<(), ReplayError> {
        match &events[0] {
            ReplayEvent::Resolution { .. } => self.resolutions(t, events),
            ReplayEvent::PriceUpdate { .. } => {
                for e in events {
                    if let ReplayEvent::PriceUpdate { leg_id, point } = e {
                        self.engine.update_leg(leg_id, point.value);
                    }
                }
                self.advance_basis(t);
                self.refresh(t, true);
                self.sync_phase(t)?;
                self.liquidate(t)
            }
            ReplayEvent::RollCheckpoint { .. } => self.roll(t),
            ReplayEvent::FundingTick { .. } => self.apply_funding(t),
            ReplayEvent::TraderOrder(_) => {
                self.sync_phase(t)?;
                for e in events {
                    if let ReplayEvent::TraderOrder(o) = e {
                        self.order(o)?;
                    }
                }
                Ok(())
            }
        }
    }

    // --- underlying and mark

    fn price(&self, x: f64) -> f64 {
        // funding-only positions carry no price exposure
        if self.kind == VariantKind::FundingOnly {
            0.0
        } else {
            x
        }
    }

    fn refresh(&mut self, t: TimeMs, tick: bool) {
        if let Some((v, s)) = self.engine.recompute(t, tick, self.basis) {
            self.index = Some(v);
            self.status = s;
            self.state.underlying = v;
            self.state.mark = if self.kind == VariantKind::FundingOnly {
                v
            } else {
                self.engine.support().clamp(v + self.basis)
            };
        }
    }

    /// Ornstein-Uhlenbeck step of the synthetic basis from the last update.
    fn advance_basis(&mut self, t: TimeMs) {
        let o = self.cfg.basis;
        let prev = self.basis_at.replace(t);
        if o.sigma == 0.0 {
            return;
        }
        let Some(prev) = prev else {
            return;
        };
        let dt = (t - prev) as f64 / DAY_MS as f64;
        if dt <= 0.0 {
            return;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        if o.theta_per_day > 0.0 {
            let decay = (-o.theta_per_day * dt).exp();
            self.basis = self.basis * decay + o.sigma * (1.0 - decay * decay).sqrt() * z;
        } else {
            self.basis += o.sigma * dt.sqrt() * z;
        }
    }

    fn sync_phase(&mut self, t: TimeMs) -> Result<(), ReplayError> {
        if self.state.phase().is_terminal() {
            return Ok(());
        }
        let halted = in_any_window(&self.windows, t) || self.status == PointStatus::Halted;
        let want = if halted { Phase::Halted } else { Phase::Active };
        if self.state.phase() != want {
            self.state.transition(want)?;
        }
        Ok(())
    }

    // --- accounting

    fn book(&mut self, trader: &str, f: impl Fn(&mut AccountRecord, f64), amount: f64) {
        f(
            self.accounts
                .entry(trader.to_string())
                .or_insert_with(|| account(trader)),
            amount,
        );
        f(self.accounts.get_mut(HOUSE).expect("house account"), -amount);
    }

    fn book_transfer(&mut self, tr: &FundingTransfer) {
        self.book(&tr.trader_id, |a, x| a.funding += x, tr.amount);
    }

    /// Closes a position at `price` and writes off any loss beyond its
    /// collateral. Returns `(equity_after_fill, shortfall)`.
    fn close(&mut self, t: TimeMs, trader: &str, price: f64) -> (f64, f64) {
        let Some(pos) = self.state.positions.remove(trader) else {
            return (0.0, 0.0);
        };
        let pnl = pos.unrealized_pnl(price);
        self.book(trader, |a, x| a.realized += x, pnl);
        let pending = self.ledger.pending(trader);
        if let Some(tr) = self.ledger.close(t, trader) {
            self.book_transfer(&tr);
        }
        let equity = pos.margin_posted + pnl + pending;
        let shortfall = (-equity).max(0.0);
        if shortfall > 0.0 {
            self.accounts
                .get_mut(trader)
                .expect("trader account")
                .bad_debt_relief += shortfall;
            self.bad_debt_total += shortfall;
            self.stats.bad_debt_count += 1;
        }
        (equity, shortfall)
    }

    fn liquidate(&mut self, t: TimeMs) -> Result<(), ReplayError> {
        let Some(index) = self.index else {
            return Ok(());
        };
        if self.state.positions.is_empty() || self.state.phase().is_terminal() {
            return Ok(());
        }
        let ttc = self.engine.time_to_tau(t, &self.state);
        let force = self.engine.force_full_margin(t, &self.state);
        let jump = self.engine.jump_snapshot(&self.state);
        let mark = self.price(self.state.mark);
        let index = self.price(index);
        let ids: Vec<String> = self.state.positions.keys().cloned().collect();
        for id in ids {
            let pos = self.state.positions[&id].clone();
            let j = jump.magnitude(pos.side, self.risk.margin.aggregation);
            let mm = maintenance_margin(pos.notional, j, ttc, &self.risk.margin, force);
            let check = check_liquidation(
                &pos,
                mark,
                index,
                mm,
                self.risk.liquidation_slippage,
                self.ledger.pending(&id),
            );
            if let LiquidationCheck::Liquidate { fill_price, .. } = check {
                let fill = if self.kind == VariantKind::FundingOnly {
                    0.0
                } else {
                    self.engine.support().clamp(fill_price)
                };
                let (equity_after_fill, shortfall) = self.close(t, &id, fill);
                self.stats.liquidation_count += 1;
                self.liquidations.push(LiquidationRecord {
                    time: t,
                    trader_id: id,
                    side: pos.side,
                    notional: pos.notional,
                    fill_price: fill,
                    equity_after_fill,
                    shortfall,
                });
            }
        }
        Ok(())
    }

    // --- event handlers

    fn resolutions(&mut self, t: TimeMs, events: &[ReplayEvent]) -> Result<(), ReplayError> {
        let pre = self.index;
        let mut resolved = Vec::new();
        for e in events {
            if let ReplayEvent::Resolution { leg_id, record } = e {
                self.engine.update_leg(leg_id, record.outcome.value());
                if self.state.frozen(leg_id).is_none() {
                    self.state.freeze(leg_id, *record)?;
                }
                resolved.push((leg_id.clone(), *record));
            }
        }
        self.refresh(t, false);
        self.liquidate(t)?;
        for (leg, record) in resolved {
            let (transition, disc) = self.engine.on_resolution(&leg, record, &mut self.state)?;
            self.discontinuities.extend(disc);
            if let Transition::Settled(rec) = transition {
                if self.kind == VariantKind::Entropy {
                    if let Some(pre) = pre {
                        self.discontinuities.push(Discontinuity {
                            time: t,
                            pre,
                            post: rec.value,
                            cause: "entropy-collapse".into(),
                        });
                    }
                }
                self.settle(rec);
                return Ok(());
            }
        }
        self.refresh(t, false);
        self.liquidate(t)
    }

    fn settle(&mut self, rec: SettlementRecord) {
        let t = rec.time;
        let price = self.price(rec.value);
        let ids: Vec<String> = self.state.positions.keys().cloned().collect();
        for id in ids {
            self.close(t, &id, price);
        }
        for tr in self.ledger.flush_all(t) {
            self.book_transfer(&tr);
        }
        self.index = Some(rec.value);
        self.status = PointStatus::Valid;
        self.state.underlying = rec.value;
        self.state.mark = rec.value;
        self.ticks.push(TickRecord {
            time: t,
            index: rec.value,
            mark: rec.value,
            status: PointStatus::Valid,
        });
        self.now = t;
        self.settlements.push(rec);
        self.settled = true;
    }

    fn roll(&mut self, t: TimeMs) -> Result<(), ReplayError> {
        let VariantSpec::Rolling {
            roll_mechanism,
            roll_basis_rule,
            ..
        } = self.spec
        else {
            return Ok(());
        };
        let (Some(index_before), mark_before) = (self.index, self.state.mark) else {
            return Ok(());
        };
        let Some(step) = self.engine.roll_step(t, &mut self.state)? else {
            return Ok(());
        };
        self.refresh(t, false);
        let index_after = self.index.unwrap_or(index_before);
        let adj = apply_roll_basis(
            &mut self.state.positions,
            mark_before,
            self.state.mark,
            *roll_basis_rule,
        )?;
        let mut basis_pnl = 0.0;
        let mut cash = 0.0;
        for a in &adj {
            basis_pnl += a.basis_pnl;
            cash += a.cash;
            if a.cash != 0.0 {
                // the payment settles against the position's collateral
                if let Some(pos) = self.state.positions.get_mut(&a.trader_id) {
                    pos.margin_posted += a.cash;
                }
                self.book(&a.trader_id, |acc, x| acc.roll_cash += x, a.cash);
            }
        }
        self.engine.record_roll_basis(step.plan, basis_pnl);
        self.roll_events.push(RollEvent {
            time: t,
            from_leg: step.from_leg.clone(),
            to_leg: step.to_leg.clone(),
            lambda_before: step.lambda_before,
            lambda_after: step.lambda_after,
            index_before,
            index_after,
            basis_rule: roll_basis_rule.tag().to_string(),
            basis_pnl,
            cash,
            completed: step.completed,
        });
        if step.completed {
            self.settlements.push(SettlementRecord {
                time: t,
                kind: SettlementKind::RollConversion,
                value: index_after,
                triggering_leg: Some(step.from_leg),
                rule_applied: format!("roll:{}:{}", roll_mechanism.tag(), roll_basis_rule.tag()),
            });
        }
        self.liquidate(t)
    }

    fn apply_funding(&mut self, t: TimeMs) -> Result<(), ReplayError> {
        let Some(index) = self.index else {
            return Ok(());
        };
        if self.state.phase().is_terminal() {
            return Ok(());
        }
        let mark = self.state.mark;
        let rate = match self.spec {
            VariantSpec::FundingOnly { clip: bounds, .. } => clip(self.risk.funding.kappa * index, *bounds),
            _ => {
                let input = self.engine.funding_input(&self.state);
                funding_rate(mark, index, &self.risk.funding, input.base(), self.kind)?
            }
        };
        let transfers = self.ledger.accrue(t, &self.state.positions, rate);
        let mut trader_total = 0.0;
        let mut net = 0.0;
        for tr in &transfers {
            self.book_transfer(tr);
            trader_total += tr.amount;
            net += tr.amount + (-tr.amount);
        }
        self.funding.push(FundingRecord {
            time: t,
            rate,
            mark,
            index,
            transfers: transfers.len(),
            trader_total,
            net,
        });
        self.liquidate(t)
    }

    fn reject(&mut self, o: &TraderOrder, reason: &str) {
        match reason {
            "halt" => self.stats.rejected_halt += 1,
            "leverage" => self.stats.rejected_leverage += 1,
            "margin" => self.stats.rejected_margin += 1,
            _ => self.stats.rejected_phase += 1,
        }
        self.rejections.push(OrderRejection {
            time: o.time,
            trader_id: o.trader_id.clone(),
            reason: reason.to_string(),
        });
    }

    fn order(&mut self, o: &TraderOrder) -> Result<(), ReplayError> {
        let t = o.time;
        self.stats.orders_submitted += 1;
        if self.state.phase().is_terminal() || self.index.is_none() {
            self.reject(o, "phase");
            return Ok(());
        }
        if self.state.phase() == Phase::Halted || in_any_window(&self.windows, t) {
            self.reject(o, "halt");
            return Ok(());
        }
        let price = self.price(self.state.mark);
        let existing = self.state.positions.get(&o.trader_id).cloned();
        let (reduce, open) = match &existing {
            Some(p) if p.side != o.side => (o.notional.min(p.notional), (o.notional - p.notional).max(0.0)),
            _ => (0.0, o.notional),
        };
        let mut opened = None;
        if open > 0.0 {
            let ttc = self.engine.time_to_tau(t, &self.state);
            if o.leverage > max_leverage(ttc, &self.risk.leverage) {
                self.reject(o, "leverage");
                return Ok(());
            }
            let value = if self.kind == VariantKind::FundingOnly {
                1.0
            } else {
                self.state.mark.abs()
            };
            let posted = open * value / o.leverage;
            let pos = match existing.as_ref().filter(|p| p.side == o.side) {
                Some(p) => {
                    let notional = p.notional + open;
                    Position {
                        notional,
                        entry_price: (p.notional * p.entry_price + open * price) / notional,
                        margin_posted: p.margin_posted + posted,
                        ..p.clone()
                    }
                }
                None => Position {
                    trader_id: o.trader_id.clone(),
                    side: o.side,
                    notional: open,
                    entry_price: price,
                    margin_posted: posted,
                    open_time: t,
                },
            };
            let force = self.engine.force_full_margin(t, &self.state);
            let jump = self.engine.jump_snapshot(&self.state);
            let j = jump.magnitude(pos.side, self.risk.margin.aggregation);
            let mm = maintenance_margin(pos.notional, j, ttc, &self.risk.margin, force);
            let pending = if reduce > 0.0 {
                0.0
            } else {
                self.ledger.pending(&o.trader_id)
            };
            let equity = pos.margin_posted + pos.unrealized_pnl(price) + pending;
            if equity < mm {
                self.reject(o, "margin");
                return Ok(());
            }
            opened = Some(pos);
        }
        if let Some(p) = existing.filter(|_| reduce > 0.0) {
            if reduce >= p.notional {
                self.close(t, &o.trader_id, price);
            } else {
                let pnl = p.side.sign() * reduce * (price - p.entry_price);
                self.book(&o.trader_id, |a, x| a.realized += x, pnl);
                let keep = (p.notional - reduce) / p.notional;
                let pos = self.state.positions.get_mut(&o.trader_id).expect("position");
                pos.notional -= reduce;
                pos.margin_posted *= keep;
            }
        }
        if let Some(pos) = opened {
            self.accounts
                .entry(o.trader_id.clone())
                .or_insert_with(|| account(&o.trader_id));
            self.state.positions.insert(o.trader_id.clone(), pos);
        }
        self.accounts
            .entry(o.trader_id.clone())
            .or_insert_with(|| account(&o.trader_id));
        self.stats.orders_executed += 1;
        if in_any_window(&self.scheduled, t) {
            self.stats.in_window_executions += 1;
        }
        Ok(())
    }

    // --- report

    fn finish(mut self, error: Option<ReplayError>) -> ReplayReport {
        let complete = error.is_none();
        let end = if self.settled || !complete {
            self.now
        } else {
            self.end()
        };
        if complete && !self.settled {
            for tr in self.ledger.flush_all(end) {
                self.book_transfer(&tr);
            }
            self.settlements.push(SettlementRecord {
                time: end,
                kind: SettlementKind::NonePerpetual,
                value: self.index.unwrap_or(0.0),
                triggering_leg: None,
                rule_applied: "end-of-data".into(),
            });
        }
        let mark = self.price(self.state.mark);
        let open: Vec<(String, f64)> = self
            .state
            .positions
            .iter()
            .map(|(id, p)| (id.clone(), p.unrealized_pnl(mark)))
            .collect();
        for (id, u) in open {
            self.book(&id, |a, x| a.unrealized += x, u);
        }
        let mut total = 0.0;
        let accounts: Vec<AccountRecord> = self
            .accounts
            .into_values()
            .map(|mut a| {
                a.total = a.realized + a.funding + a.roll_cash + a.bad_debt_relief + a.unrealized;
                total += a.total;
                a
            })
            .collect();
        self.stats.conservation_residual = total - self.bad_debt_total;

        let mut caveats = Vec::new();
        if self.kind.is_reflexive() {
            caveats.push(REFLEXIVITY_CAVEAT.to_string());
        }
        if let Some(r) = self.engine.roll_schedule() {
            for o in &r.overlaps {
                caveats.push(format!("roll-overlaps-resolution-zone:{}", o.leg));
            }
        }
        let (ticks, funding) = match self.cfg.report_granularity {
            Granularity::Tick => (self.ticks, self.funding),
            Granularity::Summary => (Vec::new(), Vec::new()),
        };
        ReplayReport {
            meta: ReportMeta {
                variant: self.kind,
                seed: self.cfg.seed,
                grid_ms: self.grid.grid_ms,
                start_ms: self.grid.times[0],
                end_ms: end,
                complete,
                caveats,
                error: error.map(|e| e.to_string()),
            },
            ticks,
            funding,
            liquidations: self.liquidations,
            bad_debt_total: self.bad_debt_total,
            halt_windows: self.windows,
            roll_events: self.roll_events,
            discontinuities: self.discontinuities,
            settlements: self.settlements,
            rejections: self.rejections,
            accounts,
            stats: self.stats,
        }
    }
}

fn account(name: &str) -> AccountRecord {
    AccountRecord {
        account: name.to_string(),
        ..AccountRecord::default()
    }
}
