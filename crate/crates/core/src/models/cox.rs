//! Cox proportional hazards with Breslow ties, fitted by damped Newton
//! iterations on the partial likelihood.

use nalgebra::{DMatrix, DVector};

use super::ModelError;
use crate::survival::Dataset;

/// Norm above which the coefficients are treated as diverging (separation).
pub const SEPARATION_NORM: f64 = 50.0;

/// Right-censored data for the partial likelihood, covariates without the
/// bias column.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxData {
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub covariates: Vec<Vec<f64>>,
}

impl CoxData {
    /// Attributes minus the bias, with follow-up truncated at the grid cap.
    pub fn from_dataset(d: &Dataset) -> Self {
        let cap = d.grid.cap();
        let mut data = CoxData {
            times: Vec::with_capacity(d.len()),
            events: Vec::with_capacity(d.len()),
            covariates: Vec::with_capacity(d.len()),
        };
        for r in &d.records {
            let (t, e) = if r.label.time >= cap {
                (cap, false)
            } else {
                (r.label.time, r.label.event)
            };
            data.times.push(t);
            data.events.push(e);
            data.covariates.push(r.attributes[1..].to_vec());
        }
        data
    }

    pub fn dim(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    /// Indices sorted by decreasing time; at equal times events come first so
    /// that risk sets are complete when a tied block is closed.
    fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.times.len()).collect();
        idx.sort_by(|&a, &b| self.times[b].total_cmp(&self.times[a]));
        idx
    }
}

/// Value, gradient and negated Hessian of the Breslow log partial likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihood {
    pub log_lik: f64,
    pub score: Vec<f64>,
    pub neg_hessian: Vec<Vec<f64>>,
}

pub fn partial_likelihood(data: &CoxData, beta: &[f64]) -> PartialLikelihood {
    let p = beta.len();
    let eta: Vec<f64> = data
        .covariates
        .iter()
        .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);

    let mut out = PartialLikelihood {
        log_lik: 0.0,
        score: vec![0.0; p],
        neg_hessian: vec![vec![0.0; p]; p],
    };
    // running risk-set sums: Σw, Σw·x, Σw·x·xᵀ with w = exp(η - shift)
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![vec![0.0; p]; p];

    let order = data.order_desc();
    let mut pos = 0;
    while pos < order.len() {
        let t = data.times[order[pos]];
        let mut end = pos;
        while end < order.len() && data.times[order[end]] == t {
            let i = order[end];
            let w = (eta[i] - shift).exp();
            let x = &data.covariates[i];
            s0 += w;
            for a in 0..p {
                s1[a] += w * x[a];
                for b in 0..p {
                    s2[a][b] += w * x[a] * x[b];
                }
            }
            end += 1;
        }
        let deaths: Vec<usize> = order[pos..end]
            .iter()
            .copied()
            .filter(|&i| data.events[i])
            .collect();
        if !deaths.is_empty() {
            let d = deaths.len() as f64;
            out.log_lik += deaths.iter().map(|&i| eta[i]).sum::<f64>() - d * (s0.ln() + shift);
            for a in 0..p {
                let mean_a = s1[a] / s0;
                out.score[a] += deaths.iter().map(|&i| data.covariates[i][a]).sum::<f64>()
                    - d * mean_a;
                for b in 0..p {
                    let mean_b = s1[b] / s0;
                    out.neg_hessian[a][b] += d * (s2[a][b] / s0 - mean_a * mean_b);
                }
            }
        }
        pos = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    /// Distinct event times, increasing.
    pub event_times: Vec<f64>,
    /// Breslow hazard increments at `event_times`, relative to `exp(η - center)`.
    pub hazard: Vec<f64>,
    pub center: f64,
    pub iterations: usize,
    pub separation_detected: bool,
}

impl CoxFit {
    pub fn linear_predictor(&self, covariates: &[f64]) -> f64 {
        covariates.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// Breslow cumulative hazard over event times strictly before `t`.
    pub fn baseline_cumhaz_before(&self, t: f64) -> f64 {
        self.event_times
            .iter()
            .zip(&self.hazard)
            .take_while(|(s, _)| **s < t)
            .map(|(_, h)| h)
            .sum()
    }

    /// `S(b_i) = exp(-H0(<b_i) · exp(η - center))` at each grid boundary.
    pub fn survival_on(&self, covariates: &[f64], boundaries: &[f64]) -> Vec<f64> {
        let risk = (self.linear_predictor(covariates) - self.center).exp();
        let mut curve: Vec<f64> = boundaries
            .iter()
            .map(|&b| (-self.baseline_cumhaz_before(b) * risk).exp().clamp(0.0, 1.0))
            .collect();
        curve[0] = 1.0;
        curve
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|b| b * b).sum::<f64>().sqrt()
}

fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    let mat = DMatrix::from_fn(p, p, |i, j| a[i][j]);
    let trace: f64 = (0..p).map(|i| a[i][i].abs()).sum::<f64>().max(1e-12);
    // escalating diagonal loading for singular (e.g. collinear one-hot) designs
    let mut ridge = 0.0;
    for _ in 0..8 {
        let loaded = &mat + DMatrix::identity(p, p) * ridge;
        if let Some(ch) = loaded.cholesky() {
            let x = ch.solve(&DVector::from_column_slice(b));
            if x.iter().all(|v| v.is_finite()) {
                return Some(x.iter().copied().collect());
            }
        }
        ridge = if ridge == 0.0 { 1e-10 * trace } else { ridge * 100.0 };
    }
    None
}

pub fn cox_fit(train: &Dataset) -> Result<CoxFit, ModelError> {
    cox_fit_data(&CoxData::from_dataset(train))
}

pub fn cox_fit_data(data: &CoxData) -> Result<CoxFit, ModelError> {
    if !data.events.iter().any(|&e| e) {
        return Err(ModelError::NoEvents);
    }
    let p = data.dim();
    let mut beta = vec![0.0; p];
    let mut current = partial_likelihood(data, &beta);
    let mut iterations = 0;
    let mut separation = false;

    while iterations < 200 && p > 0 {
        iterations += 1;
        let direction = solve_spd(&current.neg_hessian, &current.score)
            .unwrap_or_else(|| current.score.clone());
        // only strict improvements are taken, so a flat likelihood stays put
        let tol = 1e-12 * (1.0 + current.log_lik.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&direction)
                .map(|(b, d)| b + step * d)
                .collect();
            let pl = partial_likelihood(data, &cand);
            if pl.log_lik.is_finite() && pl.log_lik > current.log_lik + tol {
                accepted = Some((cand, pl));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, pl)) = accepted else { break };
        beta = cand;
        current = pl;
        if norm(&beta) > SEPARATION_NORM {
            separation = true;
            break;
        }
    }

    // at a finite maximum the likelihood drops along the ray past β; under
    // separation it keeps rising
    let n = norm(&beta);
    if !separation && n > 0.0 {
        let doubled: Vec<f64> = beta.iter().map(|b| 2.0 * b).collect();
        separation = partial_likelihood(data, &doubled).log_lik > current.log_lik;
    }
    if separation {
        let n = norm(&beta);
        beta.iter_mut().for_each(|b| *b *= SEPARATION_NORM / n);
        log::warn!("cox: likelihood unbounded along the fitted direction; coefficients capped at norm {SEPARATION_NORM}");
    }

    let (event_times, hazard, center) = breslow(data, &beta);
    Ok(CoxFit {
        beta,
        event_times,
        hazard,
        center,
        iterations,
        separation_detected: separation,
    })
}

/// Breslow increments `d_j / Σ_{R_j} exp(η - center)` at each distinct event
/// time.
fn breslow(data: &CoxData, beta: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let eta: Vec<f64> = data
        .covariates
        .iter()
        .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    let center = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let order = data.order_desc();
    let mut times = Vec::new();
    let mut hazard = Vec::new();
    let mut s0 = 0.0;
    let mut pos = 0;
    while pos < order.len() {
        let t = data.times[order[pos]];
        let mut deaths = 0usize;
        while pos < order.len() && data.times[order[pos]] == t {
            let i = order[pos];
            s0 += (eta[i] - center).exp();
            deaths += usize::from(data.events[i]);
            pos += 1;
        }
        if deaths > 0 {
            times.push(t);
            hazard.push(deaths as f64 / s0);
        }
    }
    times.reverse();
    hazard.reverse();
    (times, hazard, center)
}
