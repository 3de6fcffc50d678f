use super::{check_len, ConstructError, IndexSeries, PointStatus, Support};
use crate::model::{AlignedLeg, FloorAction, TimeMs, VariantKind};

/// Value emitted when clip-to-last has no earlier valid value.
const NO_HISTORY_FALLBACK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalStep {
    pub value: f64,
    pub status: PointStatus,
}

/// One tick of `joint / denom` with the denominator floor applied.
///
/// `last_valid` is the most recent value emitted with a denominator at or
/// above the floor.
pub fn conditional_step(
    joint: f64,
    denom: f64,
    floor: f64,
    action: FloorAction,
    last_valid: Option<f64>,
) -> ConditionalStep {
    if denom >= floor && joint.is_finite() {
        return ConditionalStep {
            value: Support::UNIT.clamp(joint / denom),
            status: PointStatus::Valid,
        };
    }
    let carried = last_valid.unwrap_or(NO_HISTORY_FALLBACK);
    ConditionalStep {
        value: carried,
        status: match action {
            FloorAction::ClipToLast => PointStatus::Clipped,
            FloorAction::Halt => PointStatus::Halted,
        },
    }
}

fn run(
    times: &[TimeMs],
    joint: impl Iterator<Item = f64>,
    denom: impl Iterator<Item = f64>,
    floor: f64,
    action: FloorAction,
    mut last_valid: Option<f64>,
) -> IndexSeries {
    let mut out = IndexSeries::new(VariantKind::Conditional, Support::UNIT);
    for ((&t, j), d) in times.iter().zip(joint).zip(denom) {
        let step = conditional_step(j, d, floor, action, last_valid);
        if step.status == PointStatus::Valid {
            last_valid = Some(step.value);
        }
        out.push(t, step.value, step.status);
    }
    out
}

/// `P(A|B)` from a listed joint market and the conditioning market.
pub fn conditional_index(
    times: &[TimeMs],
    joint: &[f64],
    denom: &[f64],
    floor: f64,
    action: FloorAction,
    last_valid: Option<f64>,
) -> Result<IndexSeries, ConstructError> {
    check_len(times.len(), joint.len())?;
    check_len(joint.len(), denom.len())?;
    Ok(run(
        times,
        joint.iter().copied(),
        denom.iter().copied(),
        floor,
        action,
        last_valid,
    ))
}

/// `P(A_i | not A_j) = p_i / (1 - p_j)` inside a negRisk group, where the
/// members are mutually exclusive so the joint is `p_i` itself.
pub fn negrisk_conditional(
    times: &[TimeMs],
    leg_i: &AlignedLeg,
    leg_j: &AlignedLeg,
    floor: f64,
    action: FloorAction,
) -> Result<IndexSeries, ConstructError> {
    if leg_i.leg_id == leg_j.leg_id {
        return Err(ConstructError::SameLeg(leg_i.leg_id.clone()));
    }
    check_len(times.len(), leg_i.values.len())?;
    check_len(leg_i.values.len(), leg_j.values.len())?;
    Ok(run(
        times,
        leg_i.values.iter().copied(),
        leg_j.values.iter().map(|p| 1.0 - p),
        floor,
        action,
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_ratio() {
        let s = conditional_step(0.3, 0.6, 0.01, FloorAction::ClipToLast, None);
        assert_eq!(s.value, 0.3 / 0.6);
        assert!((s.value - 0.5).abs() < 1e-15);
        assert_eq!(s.status, PointStatus::Valid);
        assert_eq!(
            conditional_step(0.0, 0.4, 0.01, FloorAction::ClipToLast, None).value,
            0.0
        );
    }

    #[test]
    fn floor_clips_to_last_valid() {
        let s = conditional_step(0.005, 0.004, 0.01, FloorAction::ClipToLast, Some(0.62));
        assert_eq!(s.value, 0.62);
        assert_eq!(s.status, PointStatus::Clipped);
        let s = conditional_step(0.005, 0.004, 0.01, FloorAction::ClipToLast, None);
        assert_eq!(s.value, 0.5);
    }

    #[test]
    fn clamps_book_noise() {
        let s = conditional_step(0.5, 0.4, 0.01, FloorAction::ClipToLast, None);
        assert_eq!(s.value, 1.0);
    }

    #[test]
    fn negrisk_ratio_and_halt() {
        let times = [0, 1000];
        let i = AlignedLeg::from_values("i", vec![0.2, 0.0]);
        let j = AlignedLeg::from_values("j", vec![0.6, 0.3]);
        let s = negrisk_conditional(&times, &i, &j, 0.01, FloorAction::Halt).unwrap();
        assert!((s.values[0] - 0.5).abs() < 1e-15);
        assert_eq!(s.values[1], 0.0);

        let i = AlignedLeg::from_values("i", vec![0.004]);
        let j = AlignedLeg::from_values("j", vec![0.995]);
        let s = negrisk_conditional(&[0], &i, &j, 0.01, FloorAction::Halt).unwrap();
        assert_eq!(s.flags[0], PointStatus::Halted);
        assert!(s.values[0].is_finite());
    }

    #[test]
    fn negrisk_same_leg() {
        let i = AlignedLeg::from_values("i", vec![0.2]);
        assert_eq!(
            negrisk_conditional(&[0], &i, &i, 0.01, FloorAction::Halt).unwrap_err(),
            ConstructError::SameLeg("i".into())
        );
    }

    #[test]
    fn series_carries_last_valid() {
        let s = conditional_index(
            &[0, 1, 2, 3],
            &[0.3, 0.001, 0.0, 0.2],
            &[0.6, 0.005, 0.0, 0.4],
            0.01,
            FloorAction::ClipToLast,
            None,
        )
        .unwrap();
        assert_eq!(s.values[1], s.values[0]);
        assert_eq!(s.values[2], s.values[0]);
        assert_eq!(
            s.flags,
            vec![
                PointStatus::Valid,
                PointStatus::Clipped,
                PointStatus::Clipped,
                PointStatus::Valid
            ]
        );
    }
}
