use super::{ConstructError, IndexSeries, PointStatus, Support};
use crate::model::{AlignedGrid, AlignedLeg, DepthAggregation, LegId, LiquidityMeasure, TimeMs, VariantKind};

/// Floor on `|Δprice|` in the Amihud ratio, one-thousandth of a 0.001 tick.
pub const AMIHUD_PRICE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiquidityConfig {
    pub measure: LiquidityMeasure,
    pub depth_aggregation: DepthAggregation,
    /// Amihud look-back; `None` means one grid step.
    pub amihud_window_ms: Option<TimeMs>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn amihud_ratio(volume: f64, price_move: f64, floor: f64) -> f64 {
    volume / price_move.abs().max(floor)
}

fn column<'a>(
    leg: &'a AlignedLeg,
    series: &'static str,
    col: Option<&'a Vec<f64>>,
) -> Result<&'a [f64], ConstructError> {
    col.map(Vec::as_slice)
        .ok_or_else(|| ConstructError::MissingMicrostructureSeries {
            leg: leg.leg_id.clone(),
            series,
        })
}

/// Cross-member liquidity measure on the grid.
///
/// Median half-spread and depth are defined from the first grid point; the
/// Amihud ratio needs one full look-back window first.
pub fn liquidity_index(
    grid: &AlignedGrid,
    members: &[LegId],
    cfg: LiquidityConfig,
) -> Result<IndexSeries, ConstructError> {
    let legs: Vec<&AlignedLeg> = members
        .iter()
        .map(|id| {
            grid.leg(id)
                .ok_or_else(|| ConstructError::MissingMicrostructureSeries {
                    leg: id.clone(),
                    series: "mid",
                })
        })
        .collect::<Result<_, _>>()?;
    let mut out = IndexSeries::new(VariantKind::Liquidity, Support::NON_NEGATIVE);
    let mut row = vec![0.0; legs.len()];
    match cfg.measure {
        LiquidityMeasure::MedianHalfSpread => {
            let cols: Vec<&[f64]> = legs
                .iter()
                .map(|l| column(l, "half_spread", l.half_spread.as_ref()))
                .collect::<Result<_, _>>()?;
            for (k, &t) in grid.times.iter().enumerate() {
                for (i, c) in cols.iter().enumerate() {
                    row[i] = c[k];
                }
                out.push(t, median(&row), PointStatus::Valid);
            }
        }
        LiquidityMeasure::Depth => {
            let cols: Vec<&[f64]> = legs
                .iter()
                .map(|l| column(l, "depth_200bps", l.depth_200bps.as_ref()))
                .collect::<Result<_, _>>()?;
            for (k, &t) in grid.times.iter().enumerate() {
                for (i, c) in cols.iter().enumerate() {
                    row[i] = c[k];
                }
                let v = match cfg.depth_aggregation {
                    DepthAggregation::Mean => mean(&row),
                    DepthAggregation::Median => median(&row),
                };
                out.push(t, v, PointStatus::Valid);
            }
        }
        LiquidityMeasure::Amihud => {
            let vols: Vec<&[f64]> = legs
                .iter()
                .map(|l| column(l, "volume", l.volume.as_ref()))
                .collect::<Result<_, _>>()?;
            let window = cfg.amihud_window_ms.unwrap_or(grid.grid_ms);
            let steps = ((window + grid.grid_ms - 1) / grid.grid_ms).max(1) as usize;
            for (k, &t) in grid.times.iter().enumerate().skip(steps) {
                for (i, leg) in legs.iter().enumerate() {
                    let traded: f64 = vols[i][k + 1 - steps..=k].iter().sum();
                    let moved = leg.values[k] - leg.values[k - steps];
                    row[i] = amihud_ratio(traded, moved, AMIHUD_PRICE_FLOOR);
                }
                out.push(t, mean(&row), PointStatus::Valid);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(legs: Vec<AlignedLeg>, n: usize) -> AlignedGrid {
        AlignedGrid {
            grid_ms: 1000,
            times: (0..n as TimeMs).map(|k| k * 1000).collect(),
            legs,
        }
    }

    #[test]
    fn median_half_spread_of_three() {
        let legs = [0.002, 0.004, 0.010]
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let mut l = AlignedLeg::from_values(format!("l{i}"), vec![0.5]);
                l.half_spread = Some(vec![h]);
                l
            })
            .collect();
        let ids: Vec<LegId> = (0..3).map(|i| LegId::new(format!("l{i}"))).collect();
        let cfg = LiquidityConfig {
            measure: LiquidityMeasure::MedianHalfSpread,
            depth_aggregation: DepthAggregation::Mean,
            amihud_window_ms: None,
        };
        let s = liquidity_index(&grid(legs, 1), &ids, cfg).unwrap();
        assert_eq!(s.values, vec![0.004]);
    }

    #[test]
    fn amihud_direct_ratio() {
        assert_eq!(amihud_ratio(1000.0, 0.02, AMIHUD_PRICE_FLOOR), 50_000.0);
        assert_eq!(amihud_ratio(10.0, 0.0, 1e-6), 1e7);
    }

    #[test]
    fn amihud_on_grid() {
        let mut l = AlignedLeg::from_values("a", vec![0.50, 0.52]);
        l.volume = Some(vec![0.0, 1000.0]);
        let cfg = LiquidityConfig {
            measure: LiquidityMeasure::Amihud,
            depth_aggregation: DepthAggregation::Mean,
            amihud_window_ms: None,
        };
        let s = liquidity_index(&grid(vec![l], 2), &["a".into()], cfg).unwrap();
        assert_eq!(s.timestamps, vec![1000]);
        assert!((s.values[0] - 50_000.0).abs() < 1e-6);
    }

    #[test]
    fn depth_mean_and_missing_series() {
        let mut a = AlignedLeg::from_values("a", vec![0.5]);
        a.depth_200bps = Some(vec![100.0]);
        let mut b = AlignedLeg::from_values("b", vec![0.5]);
        b.depth_200bps = Some(vec![300.0]);
        let cfg = LiquidityConfig {
            measure: LiquidityMeasure::Depth,
            depth_aggregation: DepthAggregation::Mean,
            amihud_window_ms: None,
        };
        let g = grid(vec![a, b], 1);
        let s = liquidity_index(&g, &["a".into(), "b".into()], cfg).unwrap();
        assert_eq!(s.values, vec![200.0]);
        let cfg = LiquidityConfig {
            measure: LiquidityMeasure::MedianHalfSpread,
            ..cfg
        };
        assert!(matches!(
            liquidity_index(&g, &["a".into()], cfg),
            Err(ConstructError::MissingMicrostructureSeries {
                series: "half_spread",
                ..
            })
        ));
    }
}
