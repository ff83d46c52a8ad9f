//! Exact likelihood of the discrete-time survival CRF.
//!
//! A patient's label sequence `y^1..y^m` is monotone, so it is fully described
//! by the outcome index `k` (intervals survived). With unary potentials
//! `u_t = x·θ^t`, the score of outcome `k` is
//!
//! ```text
//! s[k] = Σ_{t=k+1}^{m} u_t + n00(k)·w00 + n01(k)·w01 + n11(k)·w11
//! ```
//!
//! where `n..(k)` count the adjacent label pairs of each kind. The `(1, 0)`
//! transition has score `-inf` and therefore never appears. Everything here
//! is `O(m)` per patient after the unary potentials are formed.
//!
//! Index convention: death in interval `k + 1` uses the numerator
//! `exp(Σ_{t=k+1}^m u_t)`, so the `m + 1` outcomes normalize exactly. A
//! patient censored in interval `j + 1` is treated as alive through the end of
//! that interval, i.e. the feasible set is `k ∈ j+1..=m`.

mod export;
mod oracle;

pub use export::{top_k_features, write_curve_csv, write_explanation_csv};
pub use oracle::{brute_force_distribution, ORACLE_MAX_INTERVALS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::survival::{Outcome, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("outcome index {index} out of range for m = {m}")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("oracle limited to m <= {max}, got m = {m}")]
    OracleScaleExceeded { m: usize, max: usize },
}

/// Transition scores between adjacent labels. `(1, 0)` is structurally
/// forbidden and not stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwisePotentials {
    pub w00: f64,
    pub w01: f64,
    pub w11: f64,
    pub enabled: bool,
}

impl PairwisePotentials {
    pub const DISABLED: PairwisePotentials = PairwisePotentials {
        w00: 0.0,
        w01: 0.0,
        w11: 0.0,
        enabled: false,
    };

    pub fn new(w00: f64, w01: f64, w11: f64) -> Self {
        PairwisePotentials {
            w00,
            w01,
            w11,
            enabled: true,
        }
    }

    /// Effective `[w00, w01, w11]`; all zero when disabled.
    pub fn weights(&self) -> [f64; 3] {
        if self.enabled {
            [self.w00, self.w01, self.w11]
        } else {
            [0.0; 3]
        }
    }

    /// Score of the label transition `(a, b)`.
    pub fn transition(&self, a: u8, b: u8) -> f64 {
        let [w00, w01, w11] = self.weights();
        match (a, b) {
            (0, 0) => w00,
            (0, 1) => w01,
            (1, 1) => w11,
            _ => f64::NEG_INFINITY,
        }
    }
}

impl Default for PairwisePotentials {
    fn default() -> Self {
        Self::DISABLED
    }
}

/// Counts of `(0,0)`, `(0,1)` and `(1,1)` pairs in the sequence of outcome `k`.
pub fn pair_counts(k: usize, m: usize) -> [f64; 3] {
    let n00 = k.saturating_sub(1).min(m.saturating_sub(1));
    let n01 = usize::from(k > 0 && k < m);
    let n11 = m.saturating_sub(k + 1);
    [n00 as f64, n01 as f64, n11 as f64]
}

/// Per-patient explanation: one weight vector per interval plus the pairwise
/// potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    /// `m` rows of `d_x` weights.
    pub thetas: Vec<Vec<f64>>,
    pub pairwise: PairwisePotentials,
}

impl ExplanationSet {
    pub fn zeros(m: usize, d_x: usize) -> Self {
        ExplanationSet {
            thetas: vec![vec![0.0; d_x]; m],
            pairwise: PairwisePotentials::DISABLED,
        }
    }

    pub fn m(&self) -> usize {
        self.thetas.len()
    }

    pub fn d_x(&self) -> usize {
        self.thetas.first().map_or(0, Vec::len)
    }

    /// `u_t = x·θ^t` for every interval.
    pub fn unary(&self, x: &[f64]) -> Result<Vec<f64>, LikelihoodError> {
        if self.thetas.is_empty() {
            return Err(LikelihoodError::DimMismatch("no intervals".into()));
        }
        self.thetas
            .iter()
            .enumerate()
            .map(|(t, theta)| {
                if theta.len() != x.len() {
                    return Err(LikelihoodError::DimMismatch(format!(
                        "theta^{} has {} entries, x has {}",
                        t + 1,
                        theta.len(),
                        x.len()
                    )));
                }
                Ok(dot(theta, x))
            })
            .collect()
    }

    pub fn chain(&self, x: &[f64]) -> Result<Chain, LikelihoodError> {
        Ok(Chain::new(self.unary(x)?, self.pairwise))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Max-shifted log-sum-exp; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    /// `log P(K = k)` for `k = 0..=m`.
    pub log_probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn from_scores(scores: &[f64]) -> Self {
        let z = logsumexp(scores);
        OutcomeDistribution {
            log_probs: scores.iter().map(|s| s - z).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.log_probs.len() - 1
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    /// `S[i] = P(K >= i)` for `i = 0..=m`, with `S[0] = 1`.
    pub fn survival(&self) -> Vec<f64> {
        let p = self.probs();
        let m = self.m();
        let mut s = vec![0.0; m + 1];
        let mut acc = 0.0;
        for i in (1..=m).rev() {
            acc += p[i];
            s[i] = acc.clamp(0.0, 1.0);
        }
        s[0] = 1.0;
        // accumulated rounding can nudge S[1] a hair above 1
        for i in 1..=m {
            s[i] = s[i].min(s[i - 1]);
        }
        s
    }
}

/// Unary and pairwise potentials of one patient; the object all likelihood
/// computations run on. Models that do not act on raw attributes (neural
/// CRFs) build this directly from their own unary scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub unary: Vec<f64>,
    pub pairwise: PairwisePotentials,
}

/// Value and gradient of `log P(outcome)` with respect to the chain inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrad {
    pub log_prob: f64,
    /// `∂/∂u_t`, `t = 1..=m`.
    pub d_unary: Vec<f64>,
    /// `∂/∂[w00, w01, w11]`; zero when pairwise potentials are disabled.
    pub d_pairwise: [f64; 3],
}

impl Chain {
    pub fn new(unary: Vec<f64>, pairwise: PairwisePotentials) -> Self {
        Chain { unary, pairwise }
    }

    pub fn m(&self) -> usize {
        self.unary.len()
    }

    /// `s[0..=m]` via a suffix sum over the unary potentials.
    pub fn scores(&self) -> Vec<f64> {
        let m = self.m();
        let w = self.pairwise.weights();
        let mut s = vec![0.0; m + 1];
        let mut suffix = 0.0;
        for k in (0..=m).rev() {
            let c = pair_counts(k, m);
            s[k] = suffix + c[0] * w[0] + c[1] * w[1] + c[2] * w[2];
            if k > 0 {
                suffix += self.unary[k - 1];
            }
        }
        s
    }

    pub fn distribution(&self) -> OutcomeDistribution {
        OutcomeDistribution::from_scores(&self.scores())
    }

    fn check_outcome(&self, outcome: &Outcome) -> Result<(), LikelihoodError> {
        let m = self.m();
        match *outcome {
            Outcome::Event { k } if k >= m => {
                Err(LikelihoodError::IndexOutOfRange { index: k, m })
            }
            Outcome::Censored { last_alive } if last_alive >= m => {
                Err(LikelihoodError::IndexOutOfRange {
                    index: last_alive,
                    m,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn log_prob(&self, outcome: &Outcome) -> Result<f64, LikelihoodError> {
        self.check_outcome(outcome)?;
        let s = self.scores();
        let range = outcome.feasible(self.m());
        Ok(logsumexp(&s[range]) - logsumexp(&s))
    }

    pub fn grad(&self, outcome: &Outcome) -> Result<ChainGrad, LikelihoodError> {
        self.check_outcome(outcome)?;
        let m = self.m();
        let s = self.scores();
        let z_all = logsumexp(&s);
        let feasible = outcome.feasible(m);
        let z_f = logsumexp(&s[feasible.clone()]);

        let p_all: Vec<f64> = s.iter().map(|v| (v - z_all).exp()).collect();
        let p_f: Vec<f64> = (0..=m)
            .map(|k| {
                if feasible.contains(&k) {
                    (s[k] - z_f).exp()
                } else {
                    0.0
                }
            })
            .collect();

        // ∂s[k]/∂u_t = [k < t]  →  ∂logP/∂u_t = P(K < t | F) − P(K < t)
        let mut d_unary = vec![0.0; m];
        let (mut cdf_all, mut cdf_f) = (0.0, 0.0);
        for t in 1..=m {
            cdf_all += p_all[t - 1];
            cdf_f += p_f[t - 1];
            d_unary[t - 1] = cdf_f - cdf_all;
        }

        let mut d_pairwise = [0.0; 3];
        if self.pairwise.enabled {
            for k in 0..=m {
                let c = pair_counts(k, m);
                let w = p_f[k] - p_all[k];
                for (d, n) in d_pairwise.iter_mut().zip(c) {
                    *d += w * n;
                }
            }
        }

        Ok(ChainGrad {
            log_prob: z_f - z_all,
            d_unary,
            d_pairwise,
        })
    }
}

fn check_dims(x: &[f64], e: &ExplanationSet) -> Result<(), LikelihoodError> {
    if e.m() == 0 || e.thetas.iter().any(|t| t.len() != x.len()) {
        return Err(LikelihoodError::DimMismatch(format!(
            "x has {} entries, explanation is {}x{}",
            x.len(),
            e.m(),
            e.d_x()
        )));
    }
    Ok(())
}

pub fn outcome_scores(x: &[f64], e: &ExplanationSet) -> Result<Vec<f64>, LikelihoodError> {
    check_dims(x, e)?;
    Ok(e.chain(x)?.scores())
}

pub fn outcome_distribution(
    x: &[f64],
    e: &ExplanationSet,
) -> Result<OutcomeDistribution, LikelihoodError> {
    check_dims(x, e)?;
    Ok(e.chain(x)?.distribution())
}

/// `log P(K = k)` for a death observed after `k` full intervals.
pub fn log_prob_event(x: &[f64], e: &ExplanationSet, k: usize) -> Result<f64, LikelihoodError> {
    check_dims(x, e)?;
    e.chain(x)?.log_prob(&Outcome::Event { k })
}

/// `log P(K > j)` for a patient censored inside interval `j + 1`.
pub fn log_prob_censored(
    x: &[f64],
    e: &ExplanationSet,
    j: usize,
) -> Result<f64, LikelihoodError> {
    check_dims(x, e)?;
    e.chain(x)?.log_prob(&Outcome::Censored { last_alive: j })
}

/// Gradient of `log P(outcome)` with respect to every `θ^t` and the pairwise
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbGrad {
    pub log_prob: f64,
    pub d_thetas: Vec<Vec<f64>>,
    pub d_pairwise: [f64; 3],
}

pub fn grad_log_prob(
    x: &[f64],
    e: &ExplanationSet,
    outcome: &Outcome,
) -> Result<LogProbGrad, LikelihoodError> {
    check_dims(x, e)?;
    let g = e.chain(x)?.grad(outcome)?;
    let d_thetas = g
        .d_unary
        .iter()
        .map(|&du| x.iter().map(|xi| du * xi).collect())
        .collect();
    Ok(LogProbGrad {
        log_prob: g.log_prob,
        d_thetas,
        d_pairwise: g.d_pairwise,
    })
}

pub fn survival_curve(x: &[f64], e: &ExplanationSet) -> Result<Vec<f64>, LikelihoodError> {
    Ok(outcome_distribution(x, e)?.survival())
}

/// Median point prediction: the midpoint of the first interval `i` with
/// `S[i] < 0.5`, or of the last interval when the curve never drops below 0.5.
pub fn predicted_event_time(survival: &[f64], grid: &TimeGrid) -> f64 {
    let m = grid.len();
    let i = (1..=m.min(survival.len().saturating_sub(1)))
        .find(|&i| survival[i] < 0.5)
        .unwrap_or(m);
    grid.midpoint(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sigmoid(a: f64) -> f64 {
        1.0 / (1.0 + (-a).exp())
    }

    fn single(thetas: Vec<Vec<f64>>) -> ExplanationSet {
        ExplanationSet {
            thetas,
            pairwise: PairwisePotentials::DISABLED,
        }
    }

    #[test]
    fn zero_theta_scores() {
        let e = ExplanationSet::zeros(2, 3);
        assert_eq!(outcome_scores(&[1.0, 2.0, 3.0], &e).unwrap(), vec![0.0; 3]);
        let d = outcome_distribution(&[1.0, 0.0, 0.0], &ExplanationSet::zeros(4, 3)).unwrap();
        for p in d.probs() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_interval_is_logistic() {
        let a = 0.7;
        let e = single(vec![vec![a]]);
        assert_eq!(outcome_scores(&[1.0], &e).unwrap(), vec![a, 0.0]);
        assert_abs_diff_eq!(
            log_prob_event(&[1.0], &e, 0).unwrap(),
            sigmoid(a).ln(),
            epsilon = 1e-14
        );
        let s = survival_curve(&[1.0], &e).unwrap();
        assert_abs_diff_eq!(s[1], 1.0 - sigmoid(a), epsilon = 1e-14);
        let half = outcome_distribution(&[1.0], &single(vec![vec![0.0]])).unwrap();
        assert_abs_diff_eq!(half.probs()[0], 0.5, epsilon = 1e-15);
    }

    // Enumeration for the m = 2 instance: outcomes k=0 (y=11), k=1 (y=01),
    // k=2 (y=00) have scores u1+u2 = 0, u2 = -1, 0.
    #[test]
    fn two_interval_instance() {
        let e = single(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let x = [1.0, 0.0];
        assert_eq!(outcome_scores(&x, &e).unwrap(), vec![0.0, -1.0, 0.0]);
        let z = 2.0 + (-1.0f64).exp();
        let p0 = 1.0 / z;
        assert_abs_diff_eq!(p0, 0.42232, epsilon = 1e-5);
        assert_abs_diff_eq!(log_prob_event(&x, &e, 0).unwrap(), p0.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            log_prob_censored(&x, &e, 0).unwrap(),
            (((-1.0f64).exp() + 1.0) / z).ln(),
            epsilon = 1e-14
        );
        let s = survival_curve(&x, &e).unwrap();
        assert_abs_diff_eq!(s[1], 1.0 - p0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[2], 1.0 / z, epsilon = 1e-14);
    }

    #[test]
    fn uniform_censored_probabilities() {
        let e = ExplanationSet::zeros(4, 1);
        assert_abs_diff_eq!(
            log_prob_censored(&[1.0], &e, 1).unwrap(),
            (0.6f64).ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            log_prob_censored(&[1.0], &e, 0).unwrap(),
            (0.8f64).ln(),
            epsilon = 1e-14
        );
        for k in 0..4 {
            assert_abs_diff_eq!(
                log_prob_event(&[1.0], &e, k).unwrap(),
                (0.2f64).ln(),
                epsilon = 1e-14
            );
        }
        let s = survival_curve(&[1.0], &e).unwrap();
        for (got, want) in s.iter().zip([1.0, 0.8, 0.6, 0.4, 0.2]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn index_errors() {
        let e = ExplanationSet::zeros(3, 1);
        assert_eq!(
            log_prob_event(&[1.0], &e, 3),
            Err(LikelihoodError::IndexOutOfRange { index: 3, m: 3 })
        );
        assert!(log_prob_censored(&[1.0], &e, 3).is_err());
        assert!(matches!(
            outcome_scores(&[1.0, 2.0], &e),
            Err(LikelihoodError::DimMismatch(_))
        ));
    }

    #[test]
    fn pair_counts_by_hand() {
        // m = 3: k=0 → 111, k=1 → 011, k=2 → 001, k=3 → 000
        assert_eq!(pair_counts(0, 3), [0.0, 0.0, 2.0]);
        assert_eq!(pair_counts(1, 3), [0.0, 1.0, 1.0]);
        assert_eq!(pair_counts(2, 3), [1.0, 1.0, 0.0]);
        assert_eq!(pair_counts(3, 3), [2.0, 0.0, 0.0]);
        assert_eq!(pair_counts(0, 1), [0.0, 0.0, 0.0]);
        assert_eq!(pair_counts(1, 1), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_gradients() {
        let m = 4;
        let e = ExplanationSet::zeros(m, 2);
        let x = [1.0, -2.0];
        for k in 0..m {
            let g = grad_log_prob(&x, &e, &Outcome::Event { k }).unwrap();
            for t in 1..=m {
                let want = f64::from(u8::from(t > k)) - t as f64 / (m + 1) as f64;
                assert_abs_diff_eq!(g.d_thetas[t - 1][0], want * x[0], epsilon = 1e-14);
                assert_abs_diff_eq!(g.d_thetas[t - 1][1], want * x[1], epsilon = 1e-14);
            }
        }
        // censored at m-1: the conditional puts all mass on k = m, so
        // P(K < t | F) = 0 and the gradient is -t/(m+1)·x
        let censored = Outcome::Censored { last_alive: m - 1 };
        let g = grad_log_prob(&x, &e, &censored).unwrap();
        for t in 1..=m {
            let want = -(t as f64) / (m + 1) as f64;
            assert_abs_diff_eq!(g.d_thetas[t - 1][0], want * x[0], epsilon = 1e-14);
            let h = 1e-6;
            let (mut up, mut down) = (e.clone(), e.clone());
            up.thetas[t - 1][0] += h;
            down.thetas[t - 1][0] -= h;
            let fd = (log_prob_censored(&x, &up, m - 1).unwrap()
                - log_prob_censored(&x, &down, m - 1).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(fd, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn point_prediction_rules() {
        let one = TimeGrid::uniform(1, 7.0).unwrap();
        assert_eq!(predicted_event_time(&[1.0, 0.4], &one), 3.5);
        let weekly = TimeGrid::uniform(156, 7.0).unwrap();
        assert_eq!(predicted_event_time(&vec![0.9; 157], &weekly), 1088.5);
        let four = TimeGrid::uniform(4, 7.0).unwrap();
        assert_eq!(
            predicted_event_time(&[1.0, 0.8, 0.6, 0.49, 0.3], &four),
            17.5
        );
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let e = single(vec![vec![800.0]; 5]);
        let d = outcome_distribution(&[1.0], &e).unwrap();
        assert!(d.log_probs.iter().all(|l| l.is_finite()));
        assert_abs_diff_eq!(logsumexp(&d.log_probs), 0.0, epsilon = 1e-12);
    }
}
