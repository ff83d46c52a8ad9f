//! Aalen additive hazards: least-squares increments of the cumulative
//! regression functions at each distinct event time.

use nalgebra::{DMatrix, DVector};

use super::{CoxData, ModelError};
use crate::survival::{Dataset, TimeGrid};

const RIDGE: f64 = 1e-6;

/// Cumulative coefficient path as increments at each event time.
#[derive(Debug, Clone, PartialEq)]
pub struct AalenFit {
    /// Distinct event times, increasing.
    pub event_times: Vec<f64>,
    /// `dB` at each event time, one entry per attribute (bias included).
    pub increments: Vec<Vec<f64>>,
}

impl AalenFit {
    /// Product integral `Π_{t_j < b_i} clamp(1 - xᵀdB_j, 0, 1)` at each
    /// boundary.
    pub fn survival_on(&self, x: &[f64], boundaries: &[f64]) -> Vec<f64> {
        let factors: Vec<f64> = self
            .increments
            .iter()
            .map(|db| (1.0 - db.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).clamp(0.0, 1.0))
            .collect();
        boundaries
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if i == 0 {
                    return 1.0;
                }
                self.event_times
                    .iter()
                    .zip(&factors)
                    .take_while(|(t, _)| **t < b)
                    .map(|(_, f)| f)
                    .product()
            })
            .collect()
    }

    /// Increments summed within each grid interval `[b_{i-1}, b_i)`.
    pub fn interval_increments(&self, grid: &TimeGrid, d_x: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d_x]; grid.len()];
        for (t, db) in self.event_times.iter().zip(&self.increments) {
            let i = grid.interval_of(*t).unwrap_or(grid.len());
            for (o, v) in out[i - 1].iter_mut().zip(db) {
                *o += v;
            }
        }
        out
    }
}

/// Solve `XᵀX dB = XᵀdN`, loading the diagonal by `RIDGE` when the risk set
/// is smaller than the design width or the factorization is (near) singular.
fn solve_normal(
    xtx: &DMatrix<f64>,
    rhs: &DVector<f64>,
    at_risk: usize,
    p: usize,
) -> Result<DVector<f64>, ModelError> {
    let scale = xtx.diagonal().max().max(1e-300);
    if at_risk >= p {
        if let Some(ch) = xtx.clone().cholesky() {
            let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
            if min_pivot > 1e-12 * scale {
                return Ok(ch.solve(rhs));
            }
        }
    }
    let loaded = xtx + DMatrix::identity(p, p) * RIDGE;
    match loaded.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => loaded
            .lu()
            .solve(rhs)
            .ok_or_else(|| ModelError::DimMismatch("aalen normal equations are singular".into())),
    }
}

pub fn aalen_fit(train: &Dataset) -> Result<AalenFit, ModelError> {
    let mut data = CoxData::from_dataset(train);
    for (x, r) in data.covariates.iter_mut().zip(&train.records) {
        x.insert(0, r.attributes[0]);
    }
    aalen_fit_data(&data)
}

/// Covariates are used as given; include a constant column for an intercept.
pub fn aalen_fit_data(data: &CoxData) -> Result<AalenFit, ModelError> {
    if !data.events.iter().any(|&e| e) {
        return Err(ModelError::NoEvents);
    }
    let p = data.dim();
    let mut idx: Vec<usize> = (0..data.times.len()).collect();
    idx.sort_by(|&a, &b| data.times[b].total_cmp(&data.times[a]));

    // XᵀX over the current risk set, grown as time decreases
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut times = Vec::new();
    let mut increments = Vec::new();
    let mut pos = 0;
    while pos < idx.len() {
        let t = data.times[idx[pos]];
        let start = pos;
        while pos < idx.len() && data.times[idx[pos]] == t {
            let x = DVector::from_column_slice(&data.covariates[idx[pos]]);
            xtx += &x * x.transpose();
            pos += 1;
        }
        let mut rhs = DVector::<f64>::zeros(p);
        let mut any = false;
        for &i in &idx[start..pos] {
            if data.events[i] {
                rhs += DVector::from_column_slice(&data.covariates[i]);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let db = solve_normal(&xtx, &rhs, pos, p)?;
        times.push(t);
        increments.push(db.iter().copied().collect::<Vec<f64>>());
    }
    times.reverse();
    increments.reverse();
    Ok(AalenFit {
        event_times: times,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_gives_nelson_aalen() {
        let data = CoxData {
            times: vec![1.0, 2.0, 2.0, 3.0, 5.0, 5.0],
            events: vec![true, true, true, false, true, false],
            covariates: vec![vec![1.0]; 6],
        };
        let fit = aalen_fit_data(&data).unwrap();
        assert_eq!(fit.event_times, vec![1.0, 2.0, 5.0]);
        let expected = [1.0 / 6.0, 2.0 / 5.0, 1.0 / 2.0];
        for (db, e) in fit.increments.iter().zip(expected) {
            assert_abs_diff_eq!(db[0], e, epsilon = 1e-12);
        }
    }

    #[test]
    fn increments_match_direct_normal_equations() {
        let cov = vec![
            vec![1.0, 0.5, -1.0],
            vec![1.0, 1.5, 0.3],
            vec![1.0, -0.2, 2.0],
            vec![1.0, 0.9, 0.0],
            vec![1.0, 2.2, -0.7],
            vec![1.0, -1.1, 1.2],
        ];
        let data = CoxData {
            times: vec![3.0, 1.0, 4.0, 2.0, 6.0, 5.0],
            events: vec![true, true, false, true, true, false],
            covariates: cov.clone(),
        };
        let fit = aalen_fit_data(&data).unwrap();
        assert_eq!(fit.event_times, vec![1.0, 2.0, 3.0, 6.0]);
        for (t, db) in fit.event_times.iter().zip(&fit.increments) {
            // explicit at-risk design, built from scratch
            let risk: Vec<usize> = (0..6).filter(|&i| data.times[i] >= *t).collect();
            let x = DMatrix::from_fn(risk.len(), 3, |r, c| cov[risk[r]][c]);
            let dn = DVector::from_fn(risk.len(), |r, _| {
                f64::from(u8::from(data.times[risk[r]] == *t && data.events[risk[r]]))
            });
            let xtx = x.transpose() * &x;
            // every risk set with at least 3 members is full rank here
            let a = if risk.len() >= 3 {
                xtx
            } else {
                xtx + DMatrix::identity(3, 3) * RIDGE
            };
            let expect = a.lu().solve(&(x.transpose() * dn)).unwrap();
            for c in 0..3 {
                assert_abs_diff_eq!(db[c], expect[c], epsilon = 1e-6 * (1.0 + expect[c].abs()));
            }
        }
    }

    #[test]
    fn empty_path_is_certain_survival() {
        let fit = AalenFit {
            event_times: vec![],
            increments: vec![],
        };
        assert_eq!(fit.survival_on(&[1.0, 2.0], &[0.0, 1.0, 2.0]), vec![1.0; 3]);
    }

    #[test]
    fn no_events_is_an_error() {
        let data = CoxData {
            times: vec![1.0],
            events: vec![false],
            covariates: vec![vec![1.0]],
        };
        assert!(matches!(aalen_fit_data(&data), Err(ModelError::NoEvents)));
    }

    #[test]
    fn curve_is_clamped_and_monotone() {
        let fit = AalenFit {
            event_times: vec![1.0, 2.0, 3.0],
            increments: vec![vec![0.4], vec![-0.3], vec![2.0]],
        };
        let s = fit.survival_on(&[1.0], &[0.0, 1.5, 2.5, 3.5]);
        assert_eq!(s, vec![1.0, 0.6, 0.6, 0.0]);
    }
}
