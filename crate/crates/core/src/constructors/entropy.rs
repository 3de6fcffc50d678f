use super::{IndexSeries, PointStatus, Support};
use crate::model::{ResolutionRecord, TimeMs, VariantKind};

/// Shannon entropy of a binary probability in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    let p = p.clamp(0.0, 1.0);
    (term(p) + term(1.0 - p)).clamp(0.0, 1.0)
}

/// Entropy of the leg at every grid point; exactly zero from `tau` on.
pub fn entropy_index(times: &[TimeMs], values: &[f64], resolution: Option<ResolutionRecord>) -> IndexSeries {
    let mut out = IndexSeries::new(VariantKind::Entropy, Support::UNIT);
    for (&t, &p) in times.iter().zip(values) {
        let h = match resolution {
            Some(r) if t >= r.tau => 0.0,
            _ => binary_entropy(p),
        };
        out.push(t, h, PointStatus::Valid);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Outcome;

    #[test]
    fn known_values() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        // -0.25 log2 0.25 - 0.75 log2 0.75 = 0.5 + 0.311278...
        assert!((binary_entropy(0.25) - 0.811_278_124_459_132_8).abs() < 1e-15);
    }

    #[test]
    fn collapses_at_tau() {
        let r = ResolutionRecord {
            tau: 10,
            outcome: Outcome::Yes,
        };
        let s = entropy_index(&[0, 10], &[0.5, 0.5], Some(r));
        assert_eq!(s.values, vec![1.0, 0.0]);
    }
}
