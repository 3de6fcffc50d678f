//! Seeded synthetic leg data.
//!
//! The bridge generator maps a driftless Gaussian walk through the normal
//! CDF, `p = Phi(W_t / sqrt(1 - t/T))`, so each path is a bounded martingale
//! absorbed at 0 or 1 at `T`. The negRisk generator normalizes independent
//! log-normal walks onto the simplex; the normalization keeps the sum-to-one
//! relation exact but the individual legs are no longer martingales.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::{LegId, LegSeries, NegRiskGroup, Outcome, ProbabilityPoint, TimeMs};

/// Emitted probabilities are kept inside `[BRIDGE_EPSILON, 1 - BRIDGE_EPSILON]`.
pub const BRIDGE_EPSILON: f64 = 1e-6;

const STREAM_PATH: u64 = 0;
const STREAM_BOOK: u64 = 1;
const STREAM_WINNER: u64 = 2;

/// Grid times in `[start, start + horizon]`, always ending exactly at the
/// horizon.
fn path_times(start: TimeMs, horizon_ms: TimeMs, grid_ms: TimeMs) -> Vec<TimeMs> {
    let grid_ms = grid_ms.max(1);
    let mut times: Vec<TimeMs> = (0..)
        .map(|k| start + k * grid_ms)
        .take_while(|&t| t < start + horizon_ms)
        .collect();
    times.push(start + horizon_ms);
    times
}

/// Seeded half-spread, depth and per-point volume columns.
fn attach_book(series: &mut LegSeries, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_BOOK);
    let vol = LogNormal::new(3.0, 1.0).expect("valid log-normal");
    let n = series.points.len();
    let mut half = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut volume = Vec::with_capacity(n);
    for _ in 0..n {
        half.push(0.002 + 0.008 * rng.random::<f64>());
        depth.push(500.0 + 1500.0 * rng.random::<f64>());
        volume.push(vol.sample(&mut rng));
    }
    series.half_spread = Some(half);
    series.depth_200bps = Some(depth);
    series.volume = Some(volume);
}

/// Bridge path for one leg starting at `start_ms`.
pub fn bridge_leg(
    leg_id: impl Into<LegId>,
    seed: u64,
    start_ms: TimeMs,
    horizon_ms: TimeMs,
    grid_ms: TimeMs,
    p0: f64,
) -> LegSeries {
    let normal = Normal::standard();
    let p0 = p0.clamp(BRIDGE_EPSILON, 1.0 - BRIDGE_EPSILON);
    let times = path_times(start_ms, horizon_ms, grid_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PATH);
    let horizon = horizon_ms.max(1) as f64;
    let mut w = normal.inverse_cdf(p0);
    let mut s_prev = 0.0;
    let mut points = Vec::with_capacity(times.len());
    for &t in &times {
        let s = ((t - start_ms) as f64 / horizon).min(1.0);
        if s > s_prev {
            let z: f64 = rng.sample(StandardNormal);
            w += (s - s_prev).sqrt() * z;
            s_prev = s;
        }
        let p = if s < 1.0 {
            normal.cdf(w / (1.0 - s).sqrt())
        } else if w > 0.0 {
            1.0
        } else {
            0.0
        };
        points.push(ProbabilityPoint::new(
            t,
            p.clamp(BRIDGE_EPSILON, 1.0 - BRIDGE_EPSILON),
        ));
    }
    let outcome = if w > 0.0 { Outcome::Yes } else { Outcome::No };
    let mut series = LegSeries::new(leg_id, points).with_resolution(start_ms + horizon_ms, outcome);
    attach_book(&mut series, seed);
    series
}

/// Bridge path from `t = 0` to `horizon_ms`, resolving at the horizon.
pub fn generate_bridge_path(seed: u64, horizon_ms: TimeMs, grid_ms: TimeMs, p0: f64) -> LegSeries {
    bridge_leg("bridge", seed, 0, horizon_ms, grid_ms, p0)
}

/// `k` mutually exclusive legs `leg0..` on a shared grid from `t = 0`; all
/// resolve at the horizon with exactly one winner.
pub fn generate_negrisk_group(
    seed: u64,
    k: usize,
    horizon_ms: TimeMs,
    grid_ms: TimeMs,
) -> (Vec<LegSeries>, NegRiskGroup) {
    let k = k.max(2);
    let times = path_times(0, horizon_ms, grid_ms);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PATH);
    let horizon = horizon_ms.max(1) as f64;
    let mut logs = vec![0.0f64; k];
    let mut cols: Vec<Vec<ProbabilityPoint>> = vec![Vec::with_capacity(times.len()); k];
    let mut s_prev = 0.0;
    let mut weights = vec![1.0 / k as f64; k];
    for &t in &times {
        let s = (t as f64 / horizon).min(1.0);
        if s > s_prev {
            let sd = (s - s_prev).sqrt();
            for y in logs.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *y += sd * z;
            }
            s_prev = s;
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x: Vec<f64> = logs.iter().map(|y| (y - top).exp()).collect();
        let total: f64 = x.iter().sum();
        let mut acc = 0.0;
        for j in 0..k - 1 {
            weights[j] = x[j] / total;
            acc += weights[j];
        }
        weights[k - 1] = (1.0 - acc).max(0.0);
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(ProbabilityPoint::new(t, weights[j]));
        }
    }
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(STREAM_WINNER);
    let winner = WeightedIndex::new(&weights)
        .map(|d| d.sample(&mut pick))
        .unwrap_or(0);
    let members: Vec<LegId> = (0..k).map(|j| LegId::new(format!("leg{j}"))).collect();
    let legs = cols
        .into_iter()
        .enumerate()
        .map(|(j, points)| {
            let outcome = if j == winner { Outcome::Yes } else { Outcome::No };
            let mut s = LegSeries::new(members[j].clone(), points).with_resolution(horizon_ms, outcome);
            attach_book(&mut s, seed.wrapping_add(j as u64 + 1));
            s
        })
        .collect();
    (
        legs,
        NegRiskGroup {
            group_id: "group".into(),
            members,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bridge_is_bounded_and_absorbed() {
        for seed in 0..50 {
            let s = generate_bridge_path(seed, 86_400_000, 60_000, 0.5);
            assert!(s.points.iter().all(|p| p.value > 0.0 && p.value < 1.0));
            let last = s.points.last().unwrap();
            let r = s.resolution.unwrap();
            assert_eq!(last.time, r.tau);
            assert!((last.value - r.outcome.value()).abs() < 1e-3);
            s.validate().unwrap();
        }
    }

    #[test]
    fn bridge_is_seed_deterministic() {
        assert_eq!(
            generate_bridge_path(7, 3_600_000, 1_000, 0.3),
            generate_bridge_path(7, 3_600_000, 1_000, 0.3)
        );
        assert_ne!(
            generate_bridge_path(7, 3_600_000, 1_000, 0.3),
            generate_bridge_path(8, 3_600_000, 1_000, 0.3)
        );
    }

    #[test]
    fn negrisk_sums_to_one_with_one_winner() {
        let (legs, group) = generate_negrisk_group(3, 3, 3_600_000, 60_000);
        assert_eq!(group.members.len(), 3);
        for i in 0..legs[0].points.len() {
            let sum: f64 = legs.iter().map(|l| l.points[i].value).sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
        let winners = legs
            .iter()
            .filter(|l| l.resolution.unwrap().outcome.is_yes())
            .count();
        assert_eq!(winners, 1);
    }

    #[test]
    fn two_leg_negrisk_is_complementary() {
        let (legs, _) = generate_negrisk_group(11, 2, 600_000, 1_000);
        for (a, b) in legs[0].points.iter().zip(&legs[1].points) {
            assert_eq!(b.value, 1.0 - a.value);
        }
    }
}
