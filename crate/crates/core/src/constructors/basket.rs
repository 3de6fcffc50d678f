use serde::{Deserialize, Serialize};

use super::{check_len, ConstructError, IndexSeries, PointStatus, Support};
use crate::model::{RebalanceRule, ResolutionRecord, TimeMs, VariantKind};

/// A jump in the underlying caused by a rule rather than by the legs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discontinuity {
    pub time: TimeMs,
    pub pre: f64,
    pub post: f64,
    pub cause: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RebalanceOutcome {
    pub weights: Vec<f64>,
    pub discontinuity: Option<Discontinuity>,
}

/// `sum_i w_i v_i`, accumulated in leg order.
pub fn basket_value(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).fold(0.0, |acc, (w, v)| acc + w * v)
}

/// Weighted sum over the legs; a leg frozen at `tau` contributes its outcome
/// from then on. Under drop-on-resolution the caller passes the renormalized
/// weights, in which resolved legs already carry zero.
pub fn basket_index(
    times: &[TimeMs],
    legs: &[&[f64]],
    weights: &[f64],
    frozen: &[Option<ResolutionRecord>],
) -> Result<IndexSeries, ConstructError> {
    if weights.len() != legs.len() {
        return Err(ConstructError::WeightMismatch {
            weights: weights.len(),
            legs: legs.len(),
        });
    }
    check_len(frozen.len(), legs.len())?;
    for l in legs {
        check_len(times.len(), l.len())?;
    }
    let mut out = IndexSeries::new(VariantKind::Basket, Support::UNIT);
    let mut row = vec![0.0; legs.len()];
    for (k, &t) in times.iter().enumerate() {
        for (i, leg) in legs.iter().enumerate() {
            row[i] = match frozen[i] {
                Some(r) if t >= r.tau => r.outcome.value(),
                _ => leg[k],
            };
        }
        out.push(
            t,
            Support::UNIT.clamp(basket_value(weights, &row)),
            PointStatus::Valid,
        );
    }
    Ok(out)
}

/// Applies the rebalance rule after `resolved` resolves. `values` are the
/// leg values at `time` with the resolved leg already at its outcome.
pub fn rebalance_weights(
    weights: &[f64],
    values: &[f64],
    resolved: usize,
    rule: RebalanceRule,
    time: TimeMs,
) -> Result<RebalanceOutcome, ConstructError> {
    if weights.len() != values.len() {
        return Err(ConstructError::WeightMismatch {
            weights: weights.len(),
            legs: values.len(),
        });
    }
    if resolved >= weights.len() {
        return Err(ConstructError::LegOutOfRange {
            index: resolved,
            legs: weights.len(),
        });
    }
    match rule {
        RebalanceRule::None => Ok(RebalanceOutcome {
            weights: weights.to_vec(),
            discontinuity: None,
        }),
        RebalanceRule::DropOnResolution => {
            let remaining: f64 = weights
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != resolved)
                .map(|(_, w)| w)
                .sum();
            if remaining <= 0.0 {
                return Err(ConstructError::AllLegsResolved(resolved));
            }
            let new: Vec<f64> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| if i == resolved { 0.0 } else { w / remaining })
                .collect();
            let pre = basket_value(weights, values);
            let post = basket_value(&new, values);
            Ok(RebalanceOutcome {
                weights: new,
                discontinuity: Some(Discontinuity {
                    time,
                    pre,
                    post,
                    cause: format!("rebalance:drop-leg-{resolved}"),
                }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;

    #[test]
    fn equal_weights() {
        assert!((basket_value(&[0.5, 0.5], &[0.4, 0.8]) - 0.6).abs() < 1e-15);
        assert_eq!(basket_value(&[0.2, 0.3, 0.5], &[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn terminal_outcomes() {
        let frozen: Vec<_> = [Outcome::Yes, Outcome::No, Outcome::Yes]
            .iter()
            .map(|&o| Some(ResolutionRecord { tau: 0, outcome: o }))
            .collect();
        let legs: [&[f64]; 3] = [&[0.3], &[0.3], &[0.3]];
        let s = basket_index(&[0], &legs, &[0.5, 0.3, 0.2], &frozen).unwrap();
        assert!((s.values[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn weight_mismatch() {
        let legs: [&[f64]; 2] = [&[0.3], &[0.3]];
        assert!(matches!(
            basket_index(&[0], &legs, &[1.0], &[None, None]),
            Err(ConstructError::WeightMismatch { .. })
        ));
    }

    #[test]
    fn drop_single_survivor() {
        let r = rebalance_weights(&[0.5, 0.5], &[1.0, 0.3], 0, RebalanceRule::DropOnResolution, 7).unwrap();
        assert_eq!(r.weights, vec![0.0, 1.0]);
        let d = r.discontinuity.unwrap();
        assert_eq!((d.time, d.pre, d.post), (7, 0.65, 0.3));
    }

    #[test]
    fn drop_renormalizes_survivors() {
        let r = rebalance_weights(
            &[0.5, 0.3, 0.2],
            &[0.4, 0.0, 0.6],
            1,
            RebalanceRule::DropOnResolution,
            0,
        )
        .unwrap();
        // survivors carry 0.5 and 0.2 of a remaining 0.7
        assert!((r.weights[0] - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.weights[1], 0.0);
        assert!((r.weights[2] - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn none_rule_is_identity() {
        let w = [0.1, 0.6, 0.3];
        let r = rebalance_weights(&w, &[1.0, 0.5, 0.5], 0, RebalanceRule::None, 0).unwrap();
        assert_eq!(r.weights, w.to_vec());
        assert!(r.discontinuity.is_none());
    }

    #[test]
    fn drop_last_leg_fails() {
        assert_eq!(
            rebalance_weights(&[0.0, 1.0], &[0.0, 1.0], 1, RebalanceRule::DropOnResolution, 0).unwrap_err(),
            ConstructError::AllLegsResolved(1)
        );
    }
}
