use super::{dot, logsumexp, ExplanationSet, LikelihoodError, OutcomeDistribution};

pub const ORACLE_MAX_INTERVALS: usize = 20;

/// Reference distribution by exhaustive enumeration of all `2^m` label
/// sequences, scoring each one term by term. Sequences containing a `(1, 0)`
/// transition get `-inf` and drop out; each surviving sequence is mapped back
/// to its outcome index.
pub fn brute_force_distribution(
    x: &[f64],
    e: &ExplanationSet,
) -> Result<OutcomeDistribution, LikelihoodError> {
    let m = e.m();
    if m > ORACLE_MAX_INTERVALS {
        return Err(LikelihoodError::OracleScaleExceeded {
            m,
            max: ORACLE_MAX_INTERVALS,
        });
    }
    if m == 0 || e.thetas.iter().any(|t| t.len() != x.len()) {
        return Err(LikelihoodError::DimMismatch("oracle input".into()));
    }
    let unary: Vec<f64> = e.thetas.iter().map(|th| dot(th, x)).collect();

    let mut by_outcome = vec![Vec::new(); m + 1];
    for bits in 0u32..(1u32 << m) {
        let y: Vec<u8> = (0..m).map(|t| ((bits >> t) & 1) as u8).collect();
        let mut score = 0.0;
        for t in 0..m {
            score += f64::from(y[t]) * unary[t];
        }
        for t in 0..m - 1 {
            score += e.pairwise.transition(y[t], y[t + 1]);
        }
        if score == f64::NEG_INFINITY {
            continue;
        }
        // valid sequences are 0..0 1..1; k = number of leading zeros
        let k = y.iter().take_while(|&&v| v == 0).count();
        by_outcome[k].push(score);
    }
    let scores: Vec<f64> = by_outcome.iter().map(|s| logsumexp(s)).collect();
    Ok(OutcomeDistribution::from_scores(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{outcome_scores, PairwisePotentials};
    use approx::assert_abs_diff_eq;

    #[test]
    fn every_outcome_has_exactly_one_sequence() {
        let e = ExplanationSet {
            thetas: vec![vec![0.3]; 6],
            pairwise: PairwisePotentials::new(0.2, -0.4, 0.1),
        };
        let d = brute_force_distribution(&[1.0], &e).unwrap();
        assert_eq!(d.log_probs.len(), 7);
        assert!(d.log_probs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn uniform_when_theta_zero() {
        let d = brute_force_distribution(&[1.0, 4.0], &ExplanationSet::zeros(5, 2)).unwrap();
        for p in d.probs() {
            assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-15);
        }
    }

    // m = 3, u = (0.5, -0.2, 0.3), w = (0.1, -0.1, 0.2), summed by hand:
    //   k=0 111: 0.5-0.2+0.3 + 2·w11 = 1.0
    //   k=1 011: -0.2+0.3 + w01 + w11 = 0.2
    //   k=2 001: 0.3 + w00 + w01 = 0.3
    //   k=3 000: 2·w00 = 0.2
    #[test]
    fn pairwise_instance_by_hand() {
        let e = ExplanationSet {
            thetas: vec![vec![0.5], vec![-0.2], vec![0.3]],
            pairwise: PairwisePotentials::new(0.1, -0.1, 0.2),
        };
        let want = [1.0, 0.2, 0.3, 0.2];
        let s = outcome_scores(&[1.0], &e).unwrap();
        for (a, b) in s.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        let brute = brute_force_distribution(&[1.0], &e).unwrap();
        let closed = OutcomeDistribution::from_scores(&want);
        for (a, b) in brute.log_probs.iter().zip(&closed.log_probs) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn scale_guard() {
        let e = ExplanationSet::zeros(21, 1);
        assert_eq!(
            brute_force_distribution(&[1.0], &e),
            Err(LikelihoodError::OracleScaleExceeded { m: 21, max: 20 })
        );
    }
}
