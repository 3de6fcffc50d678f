use super::{check_len, ConstructError, IndexSeries, PointStatus, Support};
use crate::model::{FundingTarget, TimeMs, VariantKind};

/// Target quantity for one tick. `mark` is the leg's mark price and is only
/// read by the basis target.
pub fn funding_target_value(
    target: &FundingTarget,
    mark: f64,
    a: f64,
    b: Option<f64>,
) -> Result<f64, ConstructError> {
    match target {
        FundingTarget::Basis { .. } => Ok(mark - a),
        FundingTarget::Divergence { .. } => {
            let b = b.ok_or(ConstructError::LengthMismatch(2, 1))?;
            Ok((a - b).abs())
        }
        FundingTarget::Disagreement => Err(ConstructError::UnsupportedTarget),
    }
}

/// Basis target: signed `mark - index` of one leg. Divergence target:
/// `|p_a - p_b|`. `inputs` holds one column for basis, two for divergence.
pub fn funding_target(
    target: &FundingTarget,
    times: &[TimeMs],
    mark: &[f64],
    inputs: &[&[f64]],
) -> Result<IndexSeries, ConstructError> {
    let (arity, support) = match target {
        FundingTarget::Basis { .. } => (1, Support::REAL_LINE),
        FundingTarget::Divergence { .. } => (2, Support::UNIT),
        FundingTarget::Disagreement => return Err(ConstructError::UnsupportedTarget),
    };
    check_len(inputs.len(), arity)?;
    for col in inputs {
        check_len(times.len(), col.len())?;
    }
    if arity == 1 {
        check_len(times.len(), mark.len())?;
    }
    let mut out = IndexSeries::new(VariantKind::FundingOnly, support);
    for (k, &t) in times.iter().enumerate() {
        let m = mark.get(k).copied().unwrap_or(0.0);
        let b = inputs.get(1).map(|c| c[k]);
        out.push(
            t,
            funding_target_value(target, m, inputs[0][k], b)?,
            PointStatus::Valid,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> FundingTarget {
        FundingTarget::Basis { leg: "a".into() }
    }

    #[test]
    fn basis_is_signed() {
        let v = funding_target_value(&basis(), 0.55, 0.52, None).unwrap();
        assert!((v - 0.03).abs() < 1e-15);
        assert_eq!(funding_target_value(&basis(), 0.4, 0.4, None).unwrap(), 0.0);
        assert!(funding_target_value(&basis(), 0.4, 0.5, None).unwrap() < 0.0);
    }

    #[test]
    fn divergence_is_absolute() {
        let t = FundingTarget::Divergence {
            leg_a: "a".into(),
            leg_b: "b".into(),
        };
        let s = funding_target(&t, &[0, 1], &[], &[&[0.60, 0.55], &[0.55, 0.60]]).unwrap();
        assert!((s.values[0] - 0.05).abs() < 1e-15);
        assert_eq!(s.values[0], s.values[1]);
    }

    #[test]
    fn disagreement_rejected() {
        assert_eq!(
            funding_target(&FundingTarget::Disagreement, &[0], &[0.0], &[&[0.5]]).unwrap_err(),
            ConstructError::UnsupportedTarget
        );
    }
}
