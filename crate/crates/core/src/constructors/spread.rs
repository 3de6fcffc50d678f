use super::{check_len, ConstructError, IndexSeries, PointStatus, Support};
use crate::model::{ResolutionRecord, TimeMs, VariantKind};

/// Resolution outcomes already frozen for the two spread legs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpreadFrozen {
    pub a: Option<ResolutionRecord>,
    pub b: Option<ResolutionRecord>,
}

fn leg_value(live: f64, frozen: Option<ResolutionRecord>, t: TimeMs) -> f64 {
    match frozen {
        Some(r) if t >= r.tau => r.outcome.value(),
        _ => live,
    }
}

/// `a - b`, with a resolved leg replaced by its outcome from `tau` on so the
/// contract keeps tracking the residual exposure.
pub fn spread_value(a: f64, b: f64, frozen: SpreadFrozen, t: TimeMs) -> f64 {
    leg_value(a, frozen.a, t) - leg_value(b, frozen.b, t)
}

pub fn spread_index(
    times: &[TimeMs],
    a: &[f64],
    b: &[f64],
    frozen: SpreadFrozen,
) -> Result<IndexSeries, ConstructError> {
    check_len(times.len(), a.len())?;
    check_len(a.len(), b.len())?;
    let mut out = IndexSeries::new(VariantKind::Spread, Support::SIGNED_UNIT);
    for ((&t, &x), &y) in times.iter().zip(a).zip(b) {
        out.push(t, spread_value(x, y, frozen, t), PointStatus::Valid);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;

    #[test]
    fn difference() {
        assert_eq!(spread_value(0.7, 0.7, SpreadFrozen::default(), 0), 0.0);
        assert!((spread_value(0.35, 0.60, SpreadFrozen::default(), 0) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn residual_then_terminal() {
        let mut frozen = SpreadFrozen {
            a: Some(ResolutionRecord {
                tau: 10,
                outcome: Outcome::Yes,
            }),
            b: None,
        };
        assert_eq!(spread_value(0.9, 0.4, frozen, 10), 0.6);
        // before tau the live value is used
        assert_eq!(spread_value(0.9, 0.4, frozen, 9), 0.9 - 0.4);
        frozen.b = Some(ResolutionRecord {
            tau: 20,
            outcome: Outcome::No,
        });
        assert_eq!(spread_value(0.9, 0.4, frozen, 20), 1.0);
    }
}
