use eventperp::model::{
    LegSeries, MarketData, Outcome, RebalanceRule, Side, TerminationRule, TraderOrder, VariantSpec,
    WeightRule, DAY_MS, HOUR_MS,
};
use eventperp::replay::{replay, BasisOverlay, ReplayConfig, ReplayReport, HOUSE};
use eventperp::risk::RiskConfig;
use eventperp::schedule::HaltConfig;
use eventperp::settlement::SettlementKind;

const MIN: i64 = 60_000;

fn flat(id: &str, value: f64, until: i64, outcome: Option<Outcome>) -> LegSeries {
    let pairs: Vec<(i64, f64)> = (0..until / HOUR_MS).map(|h| (h * HOUR_MS, value)).collect();
    let s = LegSeries::from_pairs(id, &pairs);
    match outcome {
        Some(o) => s.with_resolution(until, o),
        None => s,
    }
}

fn order(t: i64, id: &str, side: Side, notional: f64, leverage: f64) -> TraderOrder {
    TraderOrder {
        time: t,
        trader_id: id.into(),
        side,
        notional,
        leverage,
    }
}

fn basket2() -> VariantSpec {
    VariantSpec::Basket {
        legs: vec!["a".into(), "b".into()],
        weight_rule: WeightRule::Equal,
        rebalance_rule: RebalanceRule::None,
        halt_policy: Default::default(),
    }
}

fn collapse_data() -> MarketData {
    MarketData::new(vec![
        flat("a", 0.5, 3 * DAY_MS, Some(Outcome::No)),
        flat("b", 0.5, 3 * DAY_MS, Some(Outcome::No)),
    ])
}

fn cfg(orders: Vec<TraderOrder>) -> ReplayConfig {
    ReplayConfig {
        grid_ms: MIN,
        orders,
        ..ReplayConfig::default()
    }
}

fn assert_conserved(r: &ReplayReport) {
    assert!(
        r.stats.conservation_residual.abs() <= 1e-9,
        "residual {}",
        r.stats.conservation_residual
    );
}

#[test]
fn empty_script_has_no_positions() {
    let r = replay(&basket2(), &collapse_data(), &RiskConfig::default(), &cfg(vec![])).unwrap();
    assert!(r.meta.complete);
    assert!(r.liquidations.is_empty());
    assert!(!r.ticks.is_empty());
    assert!(!r.funding.is_empty());
    assert!(r.funding.iter().all(|f| f.transfers == 0));
    assert_eq!(r.bad_debt_total, 0.0);
    assert_eq!(r.accounts.len(), 1);
    assert_eq!(r.accounts[0].account, HOUSE);
    let fin = r.final_settlement().unwrap();
    assert_eq!(fin.kind, SettlementKind::Terminal);
    assert_eq!(fin.value, 0.0);
}

#[test]
fn naive_margin_leaves_bad_debt_and_jump_margin_removes_it() {
    let orders = vec![order(0, "alice", Side::Long, 100.0, 2.0)];
    let mut naive = RiskConfig::default();
    naive.margin.m_j = 0.0;
    let r = replay(&basket2(), &collapse_data(), &naive, &cfg(orders.clone())).unwrap();
    assert!(r.stats.liquidation_count >= 1);
    // entry 0.5, margin 25, collapse to 0: loss 50, shortfall 25
    assert!((r.bad_debt_total - 25.0).abs() < 1e-9, "{}", r.bad_debt_total);
    assert_conserved(&r);

    let jump = RiskConfig::default();
    let r = replay(&basket2(), &collapse_data(), &jump, &cfg(orders)).unwrap();
    assert_eq!(r.stats.orders_executed, 1);
    assert!(r.stats.liquidation_count >= 1);
    assert_eq!(r.bad_debt_total, 0.0);
    assert_eq!(r.stats.bad_debt_count, 0);
    assert_conserved(&r);
}

#[test]
fn identical_runs_are_byte_identical() {
    let mut c = cfg(vec![order(0, "alice", Side::Long, 10.0, 1.5)]);
    c.seed = 42;
    c.basis = BasisOverlay {
        theta_per_day: 4.0,
        sigma: 0.02,
    };
    c.population = Some(eventperp::replay::Population {
        traders: 20,
        orders_per_trader: 2,
        notional: (5.0, 50.0),
        leverage: (1.0, 3.0),
        long_fraction: 0.5,
        from_ms: None,
        to_ms: None,
    });
    let run = || {
        serde_json::to_string(&replay(&basket2(), &collapse_data(), &RiskConfig::default(), &c).unwrap())
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn halts_reject_in_window_orders() {
    let t_in = 3 * DAY_MS - 2 * HOUR_MS;
    let orders = vec![order(t_in, "bob", Side::Short, 10.0, 1.0)];
    // full jump margin would refuse the order on its own this close to tau
    let mut risk = RiskConfig::default();
    risk.margin.m_j = 0.0;
    let on = replay(&basket2(), &collapse_data(), &risk, &cfg(orders.clone())).unwrap();
    assert_eq!(on.stats.rejected_halt, 1);
    assert_eq!(on.stats.in_window_executions, 0);
    assert_eq!(on.halt_windows.len(), 1);
    let mut off = cfg(orders);
    off.halt = HaltConfig {
        enabled: false,
        ..HaltConfig::default()
    };
    let off = replay(&basket2(), &collapse_data(), &risk, &off).unwrap();
    assert_eq!(off.stats.in_window_executions, 1);
    assert!(off.halt_windows.is_empty());
}

#[test]
fn spread_settles_on_second_resolution() {
    let data = MarketData::new(vec![
        flat("a", 0.4, DAY_MS, Some(Outcome::No)),
        flat("b", 0.6, 2 * DAY_MS, Some(Outcome::Yes)),
    ]);
    let spec = VariantSpec::Spread {
        leg_a: "a".into(),
        leg_b: "b".into(),
        simultaneous_regime: None,
    };
    let r = replay(&spec, &data, &RiskConfig::default(), &cfg(vec![])).unwrap();
    let fin = r.final_settlement().unwrap();
    assert_eq!(fin.value, -1.0);
    assert_eq!(fin.time, 2 * DAY_MS);
    // residual tracking between the two resolutions
    let mid = r.ticks.iter().find(|t| t.time == DAY_MS + HOUR_MS).unwrap();
    assert!((mid.index - (0.0 - 0.6)).abs() < 1e-12);
}

#[test]
fn entropy_collapses_to_zero_with_discontinuity() {
    let data = MarketData::new(vec![flat("p", 0.5, DAY_MS, Some(Outcome::Yes))]);
    let spec = VariantSpec::Entropy { leg: "p".into() };
    let r = replay(&spec, &data, &RiskConfig::default(), &cfg(vec![])).unwrap();
    assert_eq!(r.final_settlement().unwrap().value, 0.0);
    let d = r.discontinuities.last().unwrap();
    assert_eq!(d.pre, 1.0);
    assert_eq!(d.post, 0.0);
}

#[test]
fn conditional_fixed_early_termination() {
    let data = MarketData::new(vec![
        flat("a", 0.3, 2 * DAY_MS, Some(Outcome::Yes)),
        flat("b", 0.6, DAY_MS, Some(Outcome::No)),
        flat("ab", 0.2, 2 * DAY_MS, Some(Outcome::No)),
    ]);
    let spec = VariantSpec::Conditional {
        leg_a: "a".into(),
        leg_b: "b".into(),
        joint_leg: Some("ab".into()),
        denom_floor: 0.01,
        floor_action: Default::default(),
        termination_rule: TerminationRule::Fixed { value: 0.5 },
        ordering_rule: Default::default(),
    };
    let r = replay(&spec, &data, &RiskConfig::default(), &cfg(vec![])).unwrap();
    let fin = r.final_settlement().unwrap();
    assert_eq!(fin.kind, SettlementKind::EarlyTermination);
    assert_eq!(fin.value, 0.5);
    assert_eq!(fin.time, DAY_MS);
    assert!((r.ticks[0].index - 0.2 / 0.6).abs() < 1e-12);
}

#[test]
fn funding_only_is_stamped_and_has_no_price_pnl() {
    let data = MarketData::new(vec![
        flat("a", 0.6, 2 * DAY_MS, None),
        flat("b", 0.5, 2 * DAY_MS, None),
    ]);
    let spec = VariantSpec::FundingOnly {
        target: eventperp::model::FundingTarget::Divergence {
            leg_a: "a".into(),
            leg_b: "b".into(),
        },
        clip: (-0.05, 0.05),
        settlement_cadence: Default::default(),
    };
    let orders = vec![
        order(0, "x", Side::Long, 100.0, 2.0),
        order(0, "y", Side::Short, 100.0, 2.0),
    ];
    let r = replay(&spec, &data, &RiskConfig::default(), &cfg(orders)).unwrap();
    assert!(r.meta.caveats.iter().any(|c| c == "REFLEXIVITY-CAVEAT"));
    assert_eq!(r.final_settlement().unwrap().kind, SettlementKind::NonePerpetual);
    for f in &r.funding {
        assert_eq!(f.rate, 0.05);
        assert_eq!(f.net, 0.0);
    }
    let x = r.accounts.iter().find(|a| a.account == "x").unwrap();
    assert_eq!(x.realized + x.unrealized, 0.0);
    assert!(x.funding < 0.0);
    assert_conserved(&r);
}

fn rolling(rule: eventperp::model::RollBasisRule) -> VariantSpec {
    VariantSpec::Rolling {
        constituents: vec!["c0".into(), "c1".into()],
        roll_mechanism: eventperp::model::RollMechanism::Linear {
            start_lead_ms: 36 * HOUR_MS,
            end_lead_ms: 30 * HOUR_MS,
        },
        roll_basis_rule: rule,
        roll_deadline_policy: Default::default(),
    }
}

fn rolling_data() -> MarketData {
    MarketData::new(vec![
        flat("c0", 0.4, 2 * DAY_MS, Some(Outcome::Yes)),
        flat("c1", 0.7, 5 * DAY_MS, None),
    ])
}

#[test]
fn linear_roll_is_continuous_and_basis_rules_agree_on_wealth() {
    use eventperp::model::RollBasisRule::*;
    let orders = vec![order(0, "r", Side::Long, 100.0, 1.0)];
    let mut totals = Vec::new();
    for rule in [ReAnchor, MaintainNotional, CashSettle] {
        let r = replay(
            &rolling(rule),
            &rolling_data(),
            &RiskConfig::default(),
            &cfg(orders.clone()),
        )
        .unwrap();
        assert!(r.meta.complete, "{:?}", r.meta.error);
        let first = r.roll_events.first().unwrap();
        let last = r.roll_events.last().unwrap();
        assert!(last.completed);
        assert_eq!(first.time, 12 * HOUR_MS + MIN);
        assert_eq!(last.time, 18 * HOUR_MS);
        let before = r.ticks.iter().find(|t| t.time == 12 * HOUR_MS).unwrap();
        assert!((before.index - 0.4).abs() <= 1e-12);
        assert!((last.index_after - 0.7).abs() <= 1e-12);
        // each step moves the index by the weight change times the basis
        for e in &r.roll_events {
            let expected = (e.lambda_after - e.lambda_before) * 0.3;
            assert!((e.index_after - e.index_before - expected).abs() <= 1e-12);
        }
        let conv = r
            .settlements
            .iter()
            .find(|s| s.kind == SettlementKind::RollConversion)
            .unwrap();
        assert_eq!(conv.time, 18 * HOUR_MS);
        assert_conserved(&r);
        let acct = r.accounts.iter().find(|a| a.account == "r").unwrap().clone();
        totals.push((rule, acct));
    }
    let (_, re) = &totals[0];
    assert!(re.unrealized.abs() <= 1e-12, "{}", re.unrealized);
    assert_eq!(re.roll_cash, 0.0);
    let (_, mn) = &totals[1];
    let (_, cs) = &totals[2];
    assert!((mn.unrealized - 30.0).abs() <= 1e-9);
    assert_eq!(mn.roll_cash, 0.0);
    assert!((cs.roll_cash - 30.0).abs() <= 1e-9, "{cs:?}");
    assert!(cs.unrealized.abs() <= 1e-9);
    assert!((mn.total - cs.total).abs() <= 1e-9);
}

#[test]
fn runtime_failure_gives_partial_report() {
    // re-anchoring out of a zero index is undefined
    let data = MarketData::new(vec![
        flat("c0", 0.0, 2 * DAY_MS, Some(Outcome::No)),
        flat("c1", 0.7, 5 * DAY_MS, None),
    ]);
    let spec = rolling(eventperp::model::RollBasisRule::ReAnchor);
    match replay(&spec, &data, &RiskConfig::default(), &cfg(vec![])) {
        Ok(r) => {
            assert!(!r.meta.complete);
            assert!(r.meta.error.is_some());
            assert!(!r.ticks.is_empty());
        }
        Err(e) => panic!("expected a partial report, got {e}"),
    }
}

#[test]
fn drop_on_resolution_basket_tracks_survivor() {
    let data = MarketData::new(vec![
        flat("a", 0.5, DAY_MS, Some(Outcome::Yes)),
        flat("b", 0.3, 2 * DAY_MS, Some(Outcome::No)),
    ]);
    let spec = VariantSpec::Basket {
        legs: vec!["a".into(), "b".into()],
        weight_rule: WeightRule::Equal,
        rebalance_rule: RebalanceRule::DropOnResolution,
        halt_policy: Default::default(),
    };
    let r = replay(&spec, &data, &RiskConfig::default(), &cfg(vec![])).unwrap();
    assert_eq!(r.discontinuities.len(), 1);
    let after = r.ticks.iter().find(|t| t.time == DAY_MS + HOUR_MS).unwrap();
    assert!((after.index - 0.3).abs() <= 1e-12);
    assert_eq!(r.final_settlement().unwrap().value, 0.0);
}
