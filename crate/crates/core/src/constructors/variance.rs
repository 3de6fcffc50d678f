use std::collections::VecDeque;

use super::{ConstructError, IndexSeries, PointStatus, Support};
use crate::model::{Normalization, TimeMs, VarianceEstimator, VariantKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceConfig {
    pub estimator: VarianceEstimator,
    pub window_ms: TimeMs,
    pub tick_ms: TimeMs,
    pub normalization: Normalization,
}

impl VarianceConfig {
    pub fn support(&self) -> Support {
        match self.estimator {
            VarianceEstimator::Level => Support::LEVEL_VARIANCE,
            VarianceEstimator::Increments => Support::NON_NEGATIVE,
        }
    }
}

/// Neumaier-compensated running sum; supports removal by adding `-x`.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct PhaseAccumulator {
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

/// Streaming windowed variance on a uniform grid, O(1) per tick.
///
/// Samples are taken every `tick_ms` inside `[t - window_ms, t]`. When the
/// tick spans several grid steps, each grid phase keeps its own running
/// sums, so every grid tick still gets an exact window.
#[derive(Clone, Debug)]
pub struct RollingVariance {
    cfg: VarianceConfig,
    stride: usize,
    steps: usize,
    warmup: usize,
    history: VecDeque<f64>,
    phases: Vec<PhaseAccumulator>,
    seen: usize,
}

impl RollingVariance {
    pub fn new(cfg: VarianceConfig, grid_ms: TimeMs) -> Result<Self, ConstructError> {
        if grid_ms <= 0 || cfg.tick_ms <= 0 || cfg.tick_ms % grid_ms != 0 {
            return Err(ConstructError::MisalignedTick {
                tick_ms: cfg.tick_ms,
                grid_ms,
            });
        }
        let stride = (cfg.tick_ms / grid_ms) as usize;
        let steps = (cfg.window_ms / cfg.tick_ms) as usize;
        if steps == 0 {
            return Err(ConstructError::WindowTooShort {
                covered_ms: cfg.tick_ms,
                window_ms: cfg.window_ms,
            });
        }
        let warmup = ((cfg.window_ms + grid_ms - 1) / grid_ms) as usize;
        Ok(Self {
            cfg,
            stride,
            steps,
            warmup,
            history: VecDeque::with_capacity(steps * stride + stride + 1),
            phases: vec![PhaseAccumulator::default(); stride],
            seen: 0,
        })
    }

    pub fn config(&self) -> VarianceConfig {
        self.cfg
    }

    /// Number of samples (level) or increments in one window.
    pub fn sample_count(&self) -> usize {
        match self.cfg.estimator {
            VarianceEstimator::Level => self.steps + 1,
            VarianceEstimator::Increments => self.steps,
        }
    }

    fn back(&self, lag: usize) -> f64 {
        self.history[self.history.len() - 1 - lag]
    }

    /// Feeds the next grid value; returns the estimate once a full window
    /// is available.
    pub fn push(&mut self, value: f64) -> Option<f64> {
        let k = self.seen;
        self.seen += 1;
        self.history.push_back(value);
        let span = self.steps * self.stride + self.stride;
        while self.history.len() > span + 1 {
            self.history.pop_front();
        }
        let (m, n) = (self.stride, self.steps);
        let expired = k >= (n + 1) * m;
        match self.cfg.estimator {
            VarianceEstimator::Level => {
                // shift by 0.5 so the squared sum stays small
                let y = value - 0.5;
                let old = expired.then(|| self.back((n + 1) * m) - 0.5);
                let phase = &mut self.phases[k % m];
                phase.sum.add(y);
                phase.sum_sq.add(y * y);
                if let Some(old) = old {
                    phase.sum.add(-old);
                    phase.sum_sq.add(-(old * old));
                }
            }
            VarianceEstimator::Increments => {
                let new = (k >= m).then(|| value - self.back(m));
                let old = expired.then(|| self.back(n * m) - self.back(n * m + m));
                let phase = &mut self.phases[k % m];
                if let Some(d) = new {
                    phase.sum_sq.add(d * d);
                }
                if let Some(d) = old {
                    phase.sum_sq.add(-(d * d));
                }
            }
        }
        if k < self.warmup {
            return None;
        }
        let acc = self.phases[k % m];
        let count = self.sample_count() as f64;
        Some(match self.cfg.estimator {
            VarianceEstimator::Level => {
                let mean = acc.sum.value() / count;
                let var = acc.sum_sq.value() / count - mean * mean;
                var.clamp(0.0, 0.25)
            }
            VarianceEstimator::Increments => {
                let total = acc.sum_sq.value().max(0.0);
                match self.cfg.normalization {
                    Normalization::None => total,
                    Normalization::PerWindow => total / count,
                }
            }
        })
    }
}

/// Windowed variance of a grid-aligned probability path.
pub fn variance_index(
    times: &[TimeMs],
    values: &[f64],
    cfg: VarianceConfig,
    grid_ms: TimeMs,
) -> Result<IndexSeries, ConstructError> {
    super::check_len(times.len(), values.len())?;
    let covered = match (times.first(), times.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0,
    };
    if covered < cfg.window_ms {
        return Err(ConstructError::WindowTooShort {
            covered_ms: covered,
            window_ms: cfg.window_ms,
        });
    }
    let mut est = RollingVariance::new(cfg, grid_ms)?;
    let mut out = IndexSeries::new(VariantKind::Variance, cfg.support());
    for (&t, &v) in times.iter().zip(values) {
        if let Some(x) = est.push(v) {
            out.push(t, x, PointStatus::Valid);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(estimator: VarianceEstimator, window_ms: TimeMs, tick_ms: TimeMs) -> VarianceConfig {
        VarianceConfig {
            estimator,
            window_ms,
            tick_ms,
            normalization: Normalization::PerWindow,
        }
    }

    // Two-pass population variance, recomputed from scratch.
    fn brute_level(samples: &[f64]) -> f64 {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    }

    #[test]
    fn constant_path_is_zero() {
        let times: Vec<TimeMs> = (0..20).map(|k| k * 10).collect();
        let vals = vec![0.37; 20];
        for est in [VarianceEstimator::Level, VarianceEstimator::Increments] {
            let s = variance_index(&times, &vals, cfg(est, 50, 10), 10).unwrap();
            assert!(s.values.iter().all(|&v| v.abs() < 1e-15), "{est:?}");
        }
    }

    #[test]
    fn bernoulli_bound() {
        let s = variance_index(&[0, 10], &[0.0, 1.0], cfg(VarianceEstimator::Level, 10, 10), 10).unwrap();
        assert_eq!(s.values, vec![0.25]);
    }

    #[test]
    fn three_point_level() {
        let s = variance_index(
            &[0, 10, 20],
            &[0.4, 0.5, 0.6],
            cfg(VarianceEstimator::Level, 20, 10),
            10,
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.values[0] - brute_level(&[0.4, 0.5, 0.6])).abs() < 1e-15);
        assert!((s.values[0] - 0.02 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn increments_sum_of_squares() {
        let mut c = cfg(VarianceEstimator::Increments, 20, 10);
        c.normalization = Normalization::None;
        let s = variance_index(&[0, 10, 20], &[0.4, 0.5, 0.7], c, 10).unwrap();
        assert!((s.values[0] - (0.01 + 0.04)).abs() < 1e-15);
        c.normalization = Normalization::PerWindow;
        let s = variance_index(&[0, 10, 20], &[0.4, 0.5, 0.7], c, 10).unwrap();
        assert!((s.values[0] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn multi_phase_windows() {
        // tick = 2 grid steps; at k=4 samples are x4, x2, x0
        let vals = [0.1, 0.9, 0.3, 0.8, 0.5, 0.2];
        let times: Vec<TimeMs> = (0..6).collect();
        let s = variance_index(&times, &vals, cfg(VarianceEstimator::Level, 4, 2), 1).unwrap();
        assert_eq!(s.timestamps, vec![4, 5]);
        assert!((s.values[0] - brute_level(&[0.1, 0.3, 0.5])).abs() < 1e-15);
        assert!((s.values[1] - brute_level(&[0.9, 0.8, 0.2])).abs() < 1e-15);
    }

    #[test]
    fn window_too_short() {
        assert!(matches!(
            variance_index(&[0, 10], &[0.1, 0.2], cfg(VarianceEstimator::Level, 50, 10), 10),
            Err(ConstructError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn misaligned_tick() {
        assert!(matches!(
            RollingVariance::new(cfg(VarianceEstimator::Level, 50, 15), 10),
            Err(ConstructError::MisalignedTick { .. })
        ));
    }
}
