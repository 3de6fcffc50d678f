//! Shared domain types: per-leg series, resolution records, variant
//! configuration, contract state and the replay event vocabulary.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since the Unix epoch.
pub type TimeMs = i64;

pub const HOUR_MS: TimeMs = 3_600_000;
pub const DAY_MS: TimeMs = 24 * HOUR_MS;

/// Default observation grid for multi-leg alignment.
pub const DEFAULT_GRID_MS: TimeMs = 1_000;
/// Default tolerance on the sum-to-one relation inside a negRisk group.
pub const DEFAULT_NEGRISK_TOL: f64 = 0.02;
/// Tolerance used when checking that basket weights are normalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Opaque market identifier.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LegId(pub String);

impl LegId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LegId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LegId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for LegId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityPoint {
    pub time: TimeMs,
    pub value: f64,
}

impl ProbabilityPoint {
    pub fn new(time: TimeMs, value: f64) -> Self {
        Self { time, value }
    }
}

/// Binary resolution outcome, serialized as `0` / `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Outcome {
    No,
    Yes,
}

impl Outcome {
    pub fn value(self) -> f64 {
        match self {
            Outcome::No => 0.0,
            Outcome::Yes => 1.0,
        }
    }

    pub fn is_yes(self) -> bool {
        self == Outcome::Yes
    }

    pub fn complement(self) -> Self {
        match self {
            Outcome::No => Outcome::Yes,
            Outcome::Yes => Outcome::No,
        }
    }
}

impl From<Outcome> for u8 {
    fn from(o: Outcome) -> u8 {
        match o {
            Outcome::No => 0,
            Outcome::Yes => 1,
        }
    }
}

impl TryFrom<u8> for Outcome {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Outcome::No),
            1 => Ok(Outcome::Yes),
            other => Err(format!("outcome must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionRecord {
    pub tau: TimeMs,
    pub outcome: Outcome,
}

/// One market's timestamped probability path with optional microstructure
/// columns aligned to `points`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegSeries {
    pub leg_id: LegId,
    pub points: Vec<ProbabilityPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_200bps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_spread: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("leg {leg}: series has no points")]
    Empty { leg: LegId },
    #[error("leg {leg}: timestamps not strictly increasing at index {index}")]
    NonMonotone { leg: LegId, index: usize },
    #[error("leg {leg}: probability {value} at index {index} outside [0,1]")]
    OutOfBounds { leg: LegId, index: usize, value: f64 },
    #[error("leg {leg}: optional series `{field}` has length {len}, expected {expected}")]
    LengthMismatch {
        leg: LegId,
        field: &'static str,
        len: usize,
        expected: usize,
    },
    #[error("leg {leg}: optional series `{field}` has invalid value at index {index}")]
    NegativeValue {
        leg: LegId,
        field: &'static str,
        index: usize,
    },
    #[error("leg {leg}: resolution at {tau} precedes later points without a closing point at tau")]
    ResolutionBeforeData { leg: LegId, tau: TimeMs },
}

impl LegSeries {
    pub fn new(leg_id: impl Into<LegId>, points: Vec<ProbabilityPoint>) -> Self {
        Self {
            leg_id: leg_id.into(),
            points,
            depth_200bps: None,
            half_spread: None,
            volume: None,
            resolution: None,
        }
    }

    pub fn from_pairs(leg_id: impl Into<LegId>, pairs: &[(TimeMs, f64)]) -> Self {
        Self::new(
            leg_id,
            pairs.iter().map(|&(t, v)| ProbabilityPoint::new(t, v)).collect(),
        )
    }

    pub fn with_resolution(mut self, tau: TimeMs, outcome: Outcome) -> Self {
        self.resolution = Some(ResolutionRecord { tau, outcome });
        self
    }

    pub fn first_time(&self) -> Option<TimeMs> {
        self.points.first().map(|p| p.time)
    }

    pub fn last_time(&self) -> Option<TimeMs> {
        self.points.last().map(|p| p.time)
    }

    pub fn tau(&self) -> Option<TimeMs> {
        self.resolution.map(|r| r.tau)
    }

    /// Checks every structural invariant of the series.
    pub fn validate(&self) -> Result<(), SeriesError> {
        let leg = || self.leg_id.clone();
        if self.points.is_empty() {
            return Err(SeriesError::Empty { leg: leg() });
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.value) {
                return Err(SeriesError::OutOfBounds {
                    leg: leg(),
                    index: i,
                    value: p.value,
                });
            }
            if i > 0 && p.time <= self.points[i - 1].time {
                return Err(SeriesError::NonMonotone { leg: leg(), index: i });
            }
        }
        let n = self.points.len();
        for (field, col) in self.optional_columns() {
            if let Some(col) = col {
                if col.len() != n {
                    return Err(SeriesError::LengthMismatch {
                        leg: leg(),
                        field,
                        len: col.len(),
                        expected: n,
                    });
                }
                if let Some(index) = col.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(SeriesError::NegativeValue {
                        leg: leg(),
                        field,
                        index,
                    });
                }
            }
        }
        if let Some(res) = self.resolution {
            let last = self.points[n - 1];
            let closes_at_tau = last.time == res.tau && last.value == res.outcome.value();
            let later = self.points.iter().any(|p| p.time > res.tau);
            if later && !closes_at_tau {
                return Err(SeriesError::ResolutionBeforeData {
                    leg: leg(),
                    tau: res.tau,
                });
            }
        }
        Ok(())
    }

    fn optional_columns(&self) -> [(&'static str, Option<&Vec<f64>>); 3] {
        [
            ("depth_200bps", self.depth_200bps.as_ref()),
            ("half_spread", self.half_spread.as_ref()),
            ("volume", self.volume.as_ref()),
        ]
    }
}

/// Mutually exclusive markets whose prices sum to one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegRiskGroup {
    pub group_id: String,
    pub members: Vec<LegId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NegRiskError {
    #[error("group {group}: needs at least two members")]
    TooFewMembers { group: String },
    #[error("group {group}: member {leg} missing from the aligned grid")]
    MissingMember { group: String, leg: LegId },
    #[error("group {group}: member sum {sum} at t={time} outside 1 ± {tol}")]
    SumViolation {
        group: String,
        time: TimeMs,
        sum: f64,
        tol: f64,
    },
}

impl NegRiskGroup {
    pub fn contains(&self, leg: &LegId) -> bool {
        self.members.contains(leg)
    }

    /// Checks the simplex relation at every aligned timestamp before any
    /// member resolves.
    pub fn validate(&self, grid: &AlignedGrid, tol: f64) -> Result<(), NegRiskError> {
        if self.members.len() < 2 {
            return Err(NegRiskError::TooFewMembers {
                group: self.group_id.clone(),
            });
        }
        let mut cols = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let col = grid.leg(m).ok_or_else(|| NegRiskError::MissingMember {
                group: self.group_id.clone(),
                leg: m.clone(),
            })?;
            cols.push(col);
        }
        for (k, &t) in grid.times.iter().enumerate() {
            let sum: f64 = cols.iter().map(|c| c.values[k]).sum();
            if (sum - 1.0).abs() > tol {
                return Err(NegRiskError::SumViolation {
                    group: self.group_id.clone(),
                    time: t,
                    sum,
                    tol,
                });
            }
        }
        Ok(())
    }
}

/// Everything a run reads from disk: per-leg series and negRisk groups.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketData {
    pub legs: Vec<LegSeries>,
    #[serde(default)]
    pub groups: Vec<NegRiskGroup>,
}

impl MarketData {
    pub fn new(legs: Vec<LegSeries>) -> Self {
        Self {
            legs,
            groups: Vec::new(),
        }
    }

    pub fn leg(&self, id: &LegId) -> Option<&LegSeries> {
        self.legs.iter().find(|l| &l.leg_id == id)
    }

    pub fn group_containing(&self, a: &LegId, b: &LegId) -> Option<&NegRiskGroup> {
        self.groups.iter().find(|g| g.contains(a) && g.contains(b))
    }
}

// ---------------------------------------------------------------------------
// Variant configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloorAction {
    #[default]
    ClipToLast,
    Halt,
}

/// What a conditional contract settles at when the conditioning event fails.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminationRule {
    LastTick,
    Fixed { value: f64 },
    Twap { window_ms: TimeMs },
}

impl Default for TerminationRule {
    fn default() -> Self {
        TerminationRule::Twap { window_ms: DAY_MS }
    }
}

impl TerminationRule {
    pub fn tag(&self) -> &'static str {
        match self {
            TerminationRule::LastTick => "last-tick",
            TerminationRule::Fixed { .. } => "fixed",
            TerminationRule::Twap { .. } => "twap",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingRule {
    SettleAtA,
    #[default]
    JointAtB,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightRule {
    Static {
        weights: Vec<f64>,
    },
    Equal,
    /// Weights proportional to each leg's cumulative volume up to `time_ms`.
    VolumeSnapshot {
        time_ms: TimeMs,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RebalanceRule {
    #[default]
    None,
    DropOnResolution,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasketHaltPolicy {
    #[default]
    ClosestLeg,
    SingleMaturity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceEstimator {
    #[default]
    Level,
    Increments,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    #[default]
    PerWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiquidityMeasure {
    MedianHalfSpread,
    Depth,
    Amihud,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthAggregation {
    #[default]
    Mean,
    Median,
}

/// Roll timing. Offsets are measured backwards from the outgoing
/// constituent's resolution time, so one mechanism serves every roll.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RollMechanism {
    Cliff {
        lead_ms: TimeMs,
    },
    Linear {
        start_lead_ms: TimeMs,
        end_lead_ms: TimeMs,
    },
    VolumeWeighted {
        start_lead_ms: TimeMs,
        v_target: f64,
    },
}

impl RollMechanism {
    pub fn tag(&self) -> &'static str {
        match self {
            RollMechanism::Cliff { .. } => "cliff",
            RollMechanism::Linear { .. } => "linear",
            RollMechanism::VolumeWeighted { .. } => "volume-weighted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RollBasisRule {
    ReAnchor,
    MaintainNotional,
    CashSettle,
}

impl RollBasisRule {
    pub fn tag(&self) -> &'static str {
        match self {
            RollBasisRule::ReAnchor => "re-anchor",
            RollBasisRule::MaintainNotional => "maintain-notional",
            RollBasisRule::CashSettle => "cash-settle",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RollDeadlinePolicy {
    #[default]
    CompleteBeforeHalt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FundingTarget {
    Basis {
        leg: LegId,
    },
    Divergence {
        leg_a: LegId,
        leg_b: LegId,
    },
    /// Requires per-trader disagreement data; always rejected.
    Disagreement,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cadence", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SettlementCadence {
    #[default]
    Continuous,
    Periodic {
        interval_ms: TimeMs,
    },
    OnClose,
}

fn default_denom_floor() -> f64 {
    0.01
}

fn default_window_ms() -> TimeMs {
    HOUR_MS
}

fn default_tick_ms() -> TimeMs {
    60_000
}

/// One of the seven contract variants with every rule choice resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VariantSpec {
    /// P(A | B). Without `joint_leg`, `leg_a` and `leg_b` must share a
    /// negRisk group and the conditioning event is "not B".
    Conditional {
        leg_a: LegId,
        leg_b: LegId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        joint_leg: Option<LegId>,
        #[serde(default = "default_denom_floor")]
        denom_floor: f64,
        #[serde(default)]
        floor_action: FloorAction,
        #[serde(default)]
        termination_rule: TerminationRule,
        #[serde(default)]
        ordering_rule: OrderingRule,
    },
    Spread {
        leg_a: LegId,
        leg_b: LegId,
        /// Simultaneous-resolution margin regime; defaults to on when the two
        /// resolution times are within one grid step.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        simultaneous_regime: Option<bool>,
    },
    Basket {
        legs: Vec<LegId>,
        weight_rule: WeightRule,
        #[serde(default)]
        rebalance_rule: RebalanceRule,
        #[serde(default)]
        halt_policy: BasketHaltPolicy,
    },
    Variance {
        leg: LegId,
        #[serde(default)]
        estimator: VarianceEstimator,
        #[serde(default = "default_window_ms")]
        window_ms: TimeMs,
        #[serde(default = "default_tick_ms")]
        tick_ms: TimeMs,
        #[serde(default)]
        normalization: Normalization,
    },
    Entropy {
        leg: LegId,
    },
    Liquidity {
        measure: LiquidityMeasure,
        member_legs: Vec<LegId>,
        #[serde(default)]
        depth_aggregation: DepthAggregation,
        /// Amihud look-back; defaults to one grid step.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amihud_window_ms: Option<TimeMs>,
    },
    Rolling {
        constituents: Vec<LegId>,
        roll_mechanism: RollMechanism,
        roll_basis_rule: RollBasisRule,
        #[serde(default)]
        roll_deadline_policy: RollDeadlinePolicy,
    },
    FundingOnly {
        target: FundingTarget,
        clip: (f64, f64),
        #[serde(default)]
        settlement_cadence: SettlementCadence,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Conditional,
    Spread,
    Basket,
    Variance,
    Entropy,
    Liquidity,
    Rolling,
    FundingOnly,
}

impl VariantKind {
    pub fn tag(self) -> &'static str {
        match self {
            VariantKind::Conditional => "conditional",
            VariantKind::Spread => "spread",
            VariantKind::Basket => "basket",
            VariantKind::Variance => "variance",
            VariantKind::Entropy => "entropy",
            VariantKind::Liquidity => "liquidity",
            VariantKind::Rolling => "rolling",
            VariantKind::FundingOnly => "funding-only",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Some(match s {
            "conditional" => VariantKind::Conditional,
            "spread" => VariantKind::Spread,
            "basket" => VariantKind::Basket,
            "variance" => VariantKind::Variance,
            "entropy" => VariantKind::Entropy,
            "liquidity" => VariantKind::Liquidity,
            "rolling" => VariantKind::Rolling,
            "funding-only" => VariantKind::FundingOnly,
            _ => return None,
        })
    }

    /// Variants whose introduction would feed back into the legs they read.
    pub fn is_reflexive(self) -> bool {
        matches!(self, VariantKind::Liquidity | VariantKind::FundingOnly)
    }

    /// Whether the underlying can jump to a resolved boundary.
    pub fn has_terminal_collapse(self) -> bool {
        matches!(
            self,
            VariantKind::Conditional | VariantKind::Spread | VariantKind::Basket | VariantKind::Rolling
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl VariantSpec {
    pub fn kind(&self) -> VariantKind {
        match self {
            VariantSpec::Conditional { .. } => VariantKind::Conditional,
            VariantSpec::Spread { .. } => VariantKind::Spread,
            VariantSpec::Basket { .. } => VariantKind::Basket,
            VariantSpec::Variance { .. } => VariantKind::Variance,
            VariantSpec::Entropy { .. } => VariantKind::Entropy,
            VariantSpec::Liquidity { .. } => VariantKind::Liquidity,
            VariantSpec::Rolling { .. } => VariantKind::Rolling,
            VariantSpec::FundingOnly { .. } => VariantKind::FundingOnly,
        }
    }

    /// Every leg the variant reads, in configuration order, without repeats.
    pub fn referenced_legs(&self) -> Vec<LegId> {
        let mut out: Vec<LegId> = Vec::new();
        let mut push = |l: &LegId| {
            if !out.contains(l) {
                out.push(l.clone());
            }
        };
        match self {
            VariantSpec::Conditional {
                leg_a,
                leg_b,
                joint_leg,
                ..
            } => {
                push(leg_a);
                push(leg_b);
                if let Some(j) = joint_leg {
                    push(j);
                }
            }
            VariantSpec::Spread { leg_a, leg_b, .. } => {
                push(leg_a);
                push(leg_b);
            }
            VariantSpec::Basket { legs, .. } => legs.iter().for_each(push),
            VariantSpec::Variance { leg, .. } | VariantSpec::Entropy { leg } => push(leg),
            VariantSpec::Liquidity { member_legs, .. } => member_legs.iter().for_each(push),
            VariantSpec::Rolling { constituents, .. } => constituents.iter().for_each(push),
            VariantSpec::FundingOnly { target, .. } => match target {
                FundingTarget::Basis { leg } => push(leg),
                FundingTarget::Divergence { leg_a, leg_b } => {
                    push(leg_a);
                    push(leg_b);
                }
                FundingTarget::Disagreement => {}
            },
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("{field}: leg `{leg}` not present in data")]
    MissingLeg { field: String, leg: LegId },
    #[error("{field}: funding target `disagreement` needs per-trader data and is unsupported")]
    UnsupportedTarget { field: String },
    #[error("{field}: {reason}")]
    MalformedWeights { field: String, reason: String },
    #[error("{field}: leg `{leg}` has a {gap_ms} ms gap, coarser than tick {tick_ms} ms")]
    GranularityTooCoarse {
        field: String,
        leg: LegId,
        gap_ms: TimeMs,
        tick_ms: TimeMs,
    },
    #[error("{field}: leg `{leg}` lacks the `{series}` series")]
    MissingSeries {
        field: String,
        leg: LegId,
        series: &'static str,
    },
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("{field}: legs `{a}` and `{b}` share no negRisk group and no joint leg is given")]
    NotNegRisk { field: String, a: LegId, b: LegId },
    #[error("{field}: {source}")]
    Series {
        field: String,
        #[source]
        source: SeriesError,
    },
}

/// Checks a spec against the data it will run on. Returns every problem
/// found, not just the first.
pub fn validate_spec(spec: &VariantSpec, data: &MarketData) -> Result<VariantSpec, Vec<SpecError>> {
    let mut errs = Vec::new();

    let require = |field: &str, leg: &LegId, errs: &mut Vec<SpecError>| -> bool {
        match data.leg(leg) {
            Some(series) => {
                if let Err(e) = series.validate() {
                    errs.push(SpecError::Series {
                        field: field.to_string(),
                        source: e,
                    });
                }
                true
            }
            None => {
                errs.push(SpecError::MissingLeg {
                    field: field.to_string(),
                    leg: leg.clone(),
                });
                false
            }
        }
    };

    let invalid = |field: &str, reason: String| SpecError::InvalidParameter {
        field: field.to_string(),
        reason,
    };

    match spec {
        VariantSpec::Conditional {
            leg_a,
            leg_b,
            joint_leg,
            denom_floor,
            termination_rule,
            ..
        } => {
            let a = require("leg_a", leg_a, &mut errs);
            let b = require("leg_b", leg_b, &mut errs);
            if leg_a == leg_b {
                errs.push(invalid("leg_b", "must differ from leg_a".into()));
            }
            match joint_leg {
                Some(j) => {
                    require("joint_leg", j, &mut errs);
                }
                None => {
                    if a && b && data.group_containing(leg_a, leg_b).is_none() {
                        errs.push(SpecError::NotNegRisk {
                            field: "joint_leg".into(),
                            a: leg_a.clone(),
                            b: leg_b.clone(),
                        });
                    }
                }
            }
            if !(*denom_floor > 0.0 && *denom_floor < 1.0) {
                errs.push(invalid("denom_floor", format!("{denom_floor} not in (0,1)")));
            }
            match termination_rule {
                TerminationRule::Fixed { value } if !(0.0..=1.0).contains(value) => {
                    errs.push(invalid("termination_rule.value", format!("{value} not in [0,1]")))
                }
                TerminationRule::Twap { window_ms } if *window_ms <= 0 => {
                    errs.push(invalid("termination_rule.window_ms", "must be positive".into()))
                }
                _ => {}
            }
        }
        VariantSpec::Spread { leg_a, leg_b, .. } => {
            require("leg_a", leg_a, &mut errs);
            require("leg_b", leg_b, &mut errs);
            if leg_a == leg_b {
                errs.push(invalid("leg_b", "must differ from leg_a".into()));
            }
        }
        VariantSpec::Basket {
            legs, weight_rule, ..
        } => {
            if legs.is_empty() {
                errs.push(invalid("legs", "basket needs at least one leg".into()));
            }
            let distinct: BTreeSet<&LegId> = legs.iter().collect();
            if distinct.len() != legs.len() {
                errs.push(invalid("legs", "duplicate leg".into()));
            }
            let mut present = true;
            for (i, l) in legs.iter().enumerate() {
                present &= require(&format!("legs[{i}]"), l, &mut errs);
            }
            match weight_rule {
                WeightRule::Static { weights } => {
                    if let Err(reason) = check_weights(weights, legs.len()) {
                        errs.push(SpecError::MalformedWeights {
                            field: "weight_rule.weights".into(),
                            reason,
                        });
                    }
                }
                WeightRule::Equal => {}
                WeightRule::VolumeSnapshot { .. } => {
                    if present {
                        for (i, l) in legs.iter().enumerate() {
                            if data.leg(l).and_then(|s| s.volume.as_ref()).is_none() {
                                errs.push(SpecError::MissingSeries {
                                    field: format!("legs[{i}]"),
                                    leg: l.clone(),
                                    series: "volume",
                                });
                            }
                        }
                    }
                }
            }
        }
        VariantSpec::Variance {
            leg,
            window_ms,
            tick_ms,
            ..
        } => {
            let present = require("leg", leg, &mut errs);
            if *tick_ms <= 0 || *window_ms <= 0 {
                errs.push(invalid("tick_ms", "window and tick must be positive".into()));
            } else if tick_ms >= window_ms {
                errs.push(invalid(
                    "tick_ms",
                    format!("tick {tick_ms} must be shorter than window {window_ms}"),
                ));
            }
            if present && *tick_ms > 0 {
                let series = data.leg(leg).expect("checked");
                let cutoff = series.tau().unwrap_or(TimeMs::MAX);
                let gap = series
                    .points
                    .windows(2)
                    .filter(|w| w[1].time <= cutoff)
                    .map(|w| w[1].time - w[0].time)
                    .max()
                    .unwrap_or(0);
                if gap > *tick_ms {
                    errs.push(SpecError::GranularityTooCoarse {
                        field: "tick_ms".into(),
                        leg: leg.clone(),
                        gap_ms: gap,
                        tick_ms: *tick_ms,
                    });
                }
            }
        }
        VariantSpec::Entropy { leg } => {
            require("leg", leg, &mut errs);
        }
        VariantSpec::Liquidity {
            measure,
            member_legs,
            amihud_window_ms,
            ..
        } => {
            if member_legs.is_empty() {
                errs.push(invalid("member_legs", "needs at least one leg".into()));
            }
            let needed: &[&'static str] = match measure {
                LiquidityMeasure::MedianHalfSpread => &["half_spread"],
                LiquidityMeasure::Depth => &["depth_200bps"],
                LiquidityMeasure::Amihud => &["volume"],
            };
            for (i, l) in member_legs.iter().enumerate() {
                let field = format!("member_legs[{i}]");
                if require(&field, l, &mut errs) {
                    let s = data.leg(l).expect("checked");
                    for &series in needed {
                        let has = match series {
                            "half_spread" => s.half_spread.is_some(),
                            "depth_200bps" => s.depth_200bps.is_some(),
                            _ => s.volume.is_some(),
                        };
                        if !has {
                            errs.push(SpecError::MissingSeries {
                                field: field.clone(),
                                leg: l.clone(),
                                series,
                            });
                        }
                    }
                }
            }
            if matches!(amihud_window_ms, Some(w) if *w <= 0) {
                errs.push(invalid("amihud_window_ms", "must be positive".into()));
            }
        }
        VariantSpec::Rolling {
            constituents,
            roll_mechanism,
            ..
        } => {
            if constituents.is_empty() {
                errs.push(invalid("constituents", "needs at least one constituent".into()));
            }
            let mut prev_tau: Option<TimeMs> = None;
            for (i, c) in constituents.iter().enumerate() {
                let field = format!("constituents[{i}]");
                if require(&field, c, &mut errs) {
                    let s = data.leg(c).expect("checked");
                    match s.tau() {
                        None if i + 1 < constituents.len() => errs.push(invalid(
                            &field,
                            "non-final constituent needs a resolution time".into(),
                        )),
                        Some(tau) => {
                            if prev_tau.is_some_and(|p| p >= tau) {
                                errs.push(invalid(&field, "constituents not ordered by tau".into()));
                            }
                            prev_tau = Some(tau);
                        }
                        None => {}
                    }
                    if matches!(roll_mechanism, RollMechanism::VolumeWeighted { .. })
                        && i > 0
                        && s.volume.is_none()
                    {
                        errs.push(SpecError::MissingSeries {
                            field,
                            leg: c.clone(),
                            series: "volume",
                        });
                    }
                }
            }
            match roll_mechanism {
                RollMechanism::Cliff { lead_ms } if *lead_ms <= 0 => {
                    errs.push(invalid("roll_mechanism.lead_ms", "must be positive".into()))
                }
                RollMechanism::Linear {
                    start_lead_ms,
                    end_lead_ms,
                } if !(*end_lead_ms > 0 && start_lead_ms > end_lead_ms) => errs.push(invalid(
                    "roll_mechanism",
                    "need start_lead_ms > end_lead_ms > 0".into(),
                )),
                RollMechanism::VolumeWeighted {
                    start_lead_ms,
                    v_target,
                } if !(*start_lead_ms > 0 && *v_target > 0.0) => errs.push(invalid(
                    "roll_mechanism",
                    "need start_lead_ms > 0 and v_target > 0".into(),
                )),
                _ => {}
            }
        }
        VariantSpec::FundingOnly {
            target,
            clip,
            settlement_cadence,
        } => {
            match target {
                FundingTarget::Basis { leg } => {
                    require("target.leg", leg, &mut errs);
                }
                FundingTarget::Divergence { leg_a, leg_b } => {
                    require("target.leg_a", leg_a, &mut errs);
                    require("target.leg_b", leg_b, &mut errs);
                }
                FundingTarget::Disagreement => errs.push(SpecError::UnsupportedTarget {
                    field: "target".into(),
                }),
            }
            if !(clip.0 <= 0.0 && 0.0 <= clip.1) {
                errs.push(invalid("clip", format!("need lo <= 0 <= hi, got {clip:?}")));
            }
            if let SettlementCadence::Periodic { interval_ms } = settlement_cadence {
                if *interval_ms <= 0 {
                    errs.push(invalid(
                        "settlement_cadence.interval_ms",
                        "must be positive".into(),
                    ));
                }
            }
        }
    }

    if errs.is_empty() {
        Ok(spec.clone())
    } else {
        Err(errs)
    }
}

fn check_weights(weights: &[f64], legs: usize) -> Result<(), String> {
    if weights.len() != legs {
        return Err(format!("{} weights for {} legs", weights.len(), legs));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(format!("weight {w} is negative or non-finite"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(format!("weights sum to {sum}, expected 1"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// One leg carried forward onto the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedLeg {
    pub leg_id: LegId,
    pub values: Vec<f64>,
    pub half_spread: Option<Vec<f64>>,
    pub depth_200bps: Option<Vec<f64>>,
    /// Volume traded inside each grid bucket `(t - grid, t]`.
    pub volume: Option<Vec<f64>>,
    pub resolution: Option<ResolutionRecord>,
}

impl AlignedLeg {
    /// A leg with only a probability column, for tests and scalar callers.
    pub fn from_values(leg_id: impl Into<LegId>, values: Vec<f64>) -> Self {
        Self {
            leg_id: leg_id.into(),
            values,
            half_spread: None,
            depth_200bps: None,
            volume: None,
            resolution: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedGrid {
    pub grid_ms: TimeMs,
    pub times: Vec<TimeMs>,
    pub legs: Vec<AlignedLeg>,
}

impl AlignedGrid {
    pub fn leg(&self, id: &LegId) -> Option<&AlignedLeg> {
        self.legs.iter().find(|l| &l.leg_id == id)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("leg {0} has no points")]
    EmptySeries(LegId),
    #[error("no legs to align")]
    NoLegs,
    #[error("grid step must be positive, got {0}")]
    BadGrid(TimeMs),
}

/// Carries every leg forward onto a common grid.
///
/// The grid starts at the first multiple of `grid_ms` at which every leg has
/// an observation and ends at the latest point or resolution time. A value
/// at grid time `t` only ever uses observations with timestamp `<= t`;
/// resolved legs read their outcome from `tau` on.
pub fn align_series(legs: &[LegSeries], grid_ms: TimeMs) -> Result<AlignedGrid, AlignError> {
    if grid_ms <= 0 {
        return Err(AlignError::BadGrid(grid_ms));
    }
    if legs.is_empty() {
        return Err(AlignError::NoLegs);
    }
    let mut start = TimeMs::MIN;
    let mut end = TimeMs::MIN;
    for leg in legs {
        let first = leg
            .first_time()
            .ok_or_else(|| AlignError::EmptySeries(leg.leg_id.clone()))?;
        start = start.max(first);
        end = end.max(leg.last_time().unwrap_or(first));
        if let Some(tau) = leg.tau() {
            end = end.max(tau);
        }
    }
    let start = start.div_euclid(grid_ms) * grid_ms
        + if start.rem_euclid(grid_ms) == 0 {
            0
        } else {
            grid_ms
        };
    let times: Vec<TimeMs> = if end < start {
        Vec::new()
    } else {
        let steps = (end - start + grid_ms - 1) / grid_ms;
        (0..=steps).map(|k| start + k * grid_ms).collect()
    };

    let aligned = legs.iter().map(|leg| align_leg(leg, &times, grid_ms)).collect();
    Ok(AlignedGrid {
        grid_ms,
        times,
        legs: aligned,
    })
}

fn align_leg(leg: &LegSeries, times: &[TimeMs], grid_ms: TimeMs) -> AlignedLeg {
    let n = times.len();
    let mut values = Vec::with_capacity(n);
    let mut half_spread = leg.half_spread.as_ref().map(|_| Vec::with_capacity(n));
    let mut depth = leg.depth_200bps.as_ref().map(|_| Vec::with_capacity(n));
    let mut volume = leg.volume.as_ref().map(|_| Vec::with_capacity(n));

    // Index of the last point with time <= t.
    let mut cursor = 0usize;
    let mut vol_cursor = 0usize;
    for &t in times {
        while cursor + 1 < leg.points.len() && leg.points[cursor + 1].time <= t {
            cursor += 1;
        }
        let resolved = leg.resolution.filter(|r| t >= r.tau);
        let v = match resolved {
            Some(r) => r.outcome.value(),
            None => leg.points[cursor].value,
        };
        values.push(v);
        if let (Some(out), Some(src)) = (half_spread.as_mut(), leg.half_spread.as_ref()) {
            out.push(src[cursor]);
        }
        if let (Some(out), Some(src)) = (depth.as_mut(), leg.depth_200bps.as_ref()) {
            out.push(src[cursor]);
        }
        if let (Some(out), Some(src)) = (volume.as_mut(), leg.volume.as_ref()) {
            let lo = t - grid_ms;
            let mut bucket = 0.0;
            while vol_cursor < leg.points.len() && leg.points[vol_cursor].time <= t {
                if leg.points[vol_cursor].time > lo {
                    bucket += src[vol_cursor];
                }
                vol_cursor += 1;
            }
            out.push(bucket);
        }
    }
    AlignedLeg {
        leg_id: leg.leg_id.clone(),
        values,
        half_spread,
        depth_200bps: depth,
        volume,
        resolution: leg.resolution,
    }
}

// ---------------------------------------------------------------------------
// Contract state
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Long,
    Short,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Long => 1.0,
            Side::Short => -1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Side::Long => Side::Short,
            Side::Short => Side::Long,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub trader_id: String,
    pub side: Side,
    pub notional: f64,
    pub entry_price: f64,
    pub margin_posted: f64,
    pub open_time: TimeMs,
}

impl Position {
    /// One contract unit pays `(mark - entry)` per unit of notional.
    pub fn unrealized_pnl(&self, mark: f64) -> f64 {
        self.side.sign() * self.notional * (mark - self.entry_price)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Active,
    Halted,
    Resolved,
    TerminatedEarly,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Resolved | Phase::TerminatedEarly)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("illegal phase transition {from:?} -> {to:?}")]
    IllegalTransition { from: Phase, to: Phase },
    #[error("leg {0} already frozen")]
    AlreadyFrozen(LegId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractState {
    phase: Phase,
    pub underlying: f64,
    pub mark: f64,
    pub positions: BTreeMap<String, Position>,
    /// Funding accrued but not yet settled to cash, per trader.
    pub accrued_funding: BTreeMap<String, f64>,
    pub active_constituent: usize,
    frozen_legs: BTreeMap<LegId, ResolutionRecord>,
}

impl Default for ContractState {
    fn default() -> Self {
        Self::new()
    }
}

impl ContractState {
    pub fn new() -> Self {
        Self {
            phase: Phase::Active,
            underlying: 0.0,
            mark: 0.0,
            positions: BTreeMap::new(),
            accrued_funding: BTreeMap::new(),
            active_constituent: 0,
            frozen_legs: BTreeMap::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Moves along active <-> halted, or into an absorbing terminal phase.
    pub fn transition(&mut self, to: Phase) -> Result<(), StateError> {
        let ok = match (self.phase, to) {
            (from, to) if from == to => !from.is_terminal(),
            (Phase::Active, _) => true,
            (Phase::Halted, _) => true,
            _ => false,
        };
        if !ok {
            return Err(StateError::IllegalTransition { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }

    pub fn freeze(&mut self, leg: &LegId, record: ResolutionRecord) -> Result<(), StateError> {
        if self.frozen_legs.contains_key(leg) {
            return Err(StateError::AlreadyFrozen(leg.clone()));
        }
        self.frozen_legs.insert(leg.clone(), record);
        Ok(())
    }

    pub fn frozen(&self, leg: &LegId) -> Option<ResolutionRecord> {
        self.frozen_legs.get(leg).copied()
    }

    pub fn frozen_legs(&self) -> &BTreeMap<LegId, ResolutionRecord> {
        &self.frozen_legs
    }
}

// ---------------------------------------------------------------------------
// Replay events
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraderOrder {
    pub time: TimeMs,
    pub trader_id: String,
    pub side: Side,
    pub notional: f64,
    pub leverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ReplayEvent {
    PriceUpdate { leg_id: LegId, point: ProbabilityPoint },
    Resolution { leg_id: LegId, record: ResolutionRecord },
    FundingTick { time: TimeMs },
    RollCheckpoint { time: TimeMs },
    TraderOrder(TraderOrder),
}

impl ReplayEvent {
    pub fn time(&self) -> TimeMs {
        match self {
            ReplayEvent::PriceUpdate { point, .. } => point.time,
            ReplayEvent::Resolution { record, .. } => record.tau,
            ReplayEvent::FundingTick { time } | ReplayEvent::RollCheckpoint { time } => *time,
            ReplayEvent::TraderOrder(o) => o.time,
        }
    }

    /// Position of the event kind in the same-timestamp tie-break.
    pub fn kind_rank(&self) -> u8 {
        match self {
            ReplayEvent::Resolution { .. } => 0,
            ReplayEvent::PriceUpdate { .. } => 1,
            ReplayEvent::RollCheckpoint { .. } => 2,
            ReplayEvent::FundingTick { .. } => 3,
            ReplayEvent::TraderOrder(_) => 4,
        }
    }

    fn key(&self) -> &str {
        match self {
            ReplayEvent::PriceUpdate { leg_id, .. } | ReplayEvent::Resolution { leg_id, .. } => {
                leg_id.as_str()
            }
            ReplayEvent::TraderOrder(o) => o.trader_id.as_str(),
            _ => "",
        }
    }

    fn payload_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ReplayEvent::PriceUpdate { point: a, .. }, ReplayEvent::PriceUpdate { point: b, .. }) => {
                a.value.total_cmp(&b.value)
            }
            (ReplayEvent::Resolution { record: a, .. }, ReplayEvent::Resolution { record: b, .. }) => {
                a.outcome.cmp(&b.outcome)
            }
            (ReplayEvent::TraderOrder(a), ReplayEvent::TraderOrder(b)) => a
                .side
                .cmp(&b.side)
                .then(a.notional.total_cmp(&b.notional))
                .then(a.leverage.total_cmp(&b.leverage)),
            _ => Ordering::Equal,
        }
    }
}

/// Total order on replay events: time, then kind
/// (Resolution < PriceUpdate < RollCheckpoint < FundingTick < TraderOrder),
/// then leg (or trader) id, then payload.
pub fn event_order(a: &ReplayEvent, b: &ReplayEvent) -> Ordering {
    a.time()
        .cmp(&b.time())
        .then(a.kind_rank().cmp(&b.kind_rank()))
        .then_with(|| a.key().cmp(b.key()))
        .then_with(|| a.payload_cmp(b))
}

pub fn sort_events(events: &mut [ReplayEvent]) {
    events.sort_by(event_order);
}
