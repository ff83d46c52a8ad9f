//! Survival evaluation: temporal quantiles, accuracy at a horizon, relative
//! absolute error of the median point prediction, and k-fold
//! cross-validation.
//!
//! Every metric is computed from one pass over predicted curves, collected
//! into a [`Tally`]; fold results pool tallies so the cross-validated figure is
//! the rate over all test patients of all folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::predicted_event_time;
use crate::models::{fit, ModelArtifact, ModelError, ModelSpec, SurvivalModel};
use crate::survival::{to_outcome, Dataset, Outcome, PatientRecord, TimeGrid};

/// Population quantiles reported by default.
pub const QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no patient has a known status at {tau} days")]
    NoLabeledPatients { tau: f64 },
    #[error("no uncensored patients")]
    NoEvents,
    #[error("{n} records cannot be split into {k} folds")]
    TooFewRecords { n: usize, k: usize },
    #[error("invalid horizon {0}")]
    InvalidHorizon(f64),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<MetricError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl MetricError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            MetricError::EmptyDataset => "EMPTY_DATASET",
            MetricError::NoLabeledPatients { .. } => "NO_LABELED_PATIENTS",
            MetricError::NoEvents => "NO_EVENTS",
            MetricError::TooFewRecords { .. } => "TOO_FEW_RECORDS",
            MetricError::InvalidHorizon(_) => "INVALID_HORIZON",
            MetricError::Fold { source, .. } => source.code(),
            MetricError::Model(_) => "MODEL_ERROR",
        }
    }
}

/// Smallest last-follow-up time whose cumulative fraction reaches `p`,
/// deaths and censorings alike.
pub fn temporal_quantile(d: &Dataset, p: f64) -> Result<f64, MetricError> {
    if d.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let mut times: Vec<f64> = d.records.iter().map(|r| r.label.time).collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let rank = (p.clamp(0.0, 1.0) * n as f64 - 1e-9).ceil() as usize;
    Ok(times[rank.clamp(1, n) - 1])
}

pub fn temporal_quantiles(d: &Dataset) -> Result<[f64; 3], MetricError> {
    Ok([
        temporal_quantile(d, QUANTILES[0])?,
        temporal_quantile(d, QUANTILES[1])?,
        temporal_quantile(d, QUANTILES[2])?,
    ])
}

/// Index into a survival curve for horizon `tau`: the interval containing
/// it, or the last one at and past the cap.
fn curve_index(grid: &TimeGrid, tau: f64) -> Result<usize, MetricError> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(MetricError::InvalidHorizon(tau));
    }
    Ok(grid.interval_of(tau).unwrap_or(grid.len()))
}

/// Known status at `tau`: `Some(true)` alive, `Some(false)` dead, `None`
/// when censored before `tau`.
fn status_at(r: &PatientRecord, tau: f64) -> Option<bool> {
    let l = r.label;
    if l.event {
        Some(l.time > tau)
    } else if l.time >= tau {
        Some(true)
    } else {
        None
    }
}

/// Per-patient relative error `min(|t̂ − t| / t, 1)`, with `t` floored at
/// `floor`.
pub fn relative_error(predicted: f64, actual: f64, floor: f64) -> f64 {
    let t = actual.max(floor);
    ((predicted - t).abs() / t).min(1.0)
}

/// Counts behind one [`EvalReport`]; additive across folds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub n: usize,
    pub correct: [usize; 3],
    pub included: [usize; 3],
    pub excluded: [usize; 3],
    pub rae_sum: f64,
    pub events: usize,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.n += o.n;
        for j in 0..3 {
            self.correct[j] += o.correct[j];
            self.included[j] += o.included[j];
            self.excluded[j] += o.excluded[j];
        }
        self.rae_sum += o.rae_sum;
        self.events += o.events;
    }
}

fn curves<M: SurvivalModel + Sync>(model: &M, d: &Dataset) -> Result<Vec<Vec<f64>>, MetricError> {
    Ok(d.records
        .par_iter()
        .map(|r| model.predict_survival(r))
        .collect::<Result<_, _>>()?)
}

/// Count correct survivor calls at each horizon and accumulate the relative
/// error over patients with an observed death inside the grid.
pub fn tally<M: SurvivalModel + Sync>(model: &M, d: &Dataset, taus: [f64; 3]) -> Result<Tally, MetricError> {
    let grid = model.grid();
    let idx = [
        curve_index(grid, taus[0])?,
        curve_index(grid, taus[1])?,
        curve_index(grid, taus[2])?,
    ];
    let curves = curves(model, d)?;
    let mut t = Tally {
        n: d.len(),
        ..Tally::default()
    };
    for (r, s) in d.records.iter().zip(&curves) {
        for j in 0..3 {
            match status_at(r, taus[j]) {
                None => t.excluded[j] += 1,
                Some(alive) => {
                    t.included[j] += 1;
                    if (s[idx[j]] >= 0.5) == alive {
                        t.correct[j] += 1;
                    }
                }
            }
        }
        if matches!(to_outcome(&r.label, &d.grid), Ok(Outcome::Event { .. })) {
            let predicted = predicted_event_time(s, grid);
            t.rae_sum += relative_error(predicted, r.label.time, grid.first_width());
            t.events += 1;
        }
    }
    Ok(t)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    /// Percentages in `[0, 100]` at the 25/50/75% temporal quantiles.
    pub acc25: f64,
    pub acc50: f64,
    pub acc75: f64,
    pub rae: f64,
    pub split: String,
    pub n: usize,
    pub taus: [f64; 3],
    pub included: [usize; 3],
    pub excluded: [usize; 3],
    pub events: usize,
}

impl EvalReport {
    pub fn from_tally(model: &str, split: &str, taus: [f64; 3], t: &Tally) -> Result<Self, MetricError> {
        let acc = |j: usize| {
            if t.included[j] == 0 {
                Err(MetricError::NoLabeledPatients { tau: taus[j] })
            } else {
                Ok(100.0 * t.correct[j] as f64 / t.included[j] as f64)
            }
        };
        if t.events == 0 {
            return Err(MetricError::NoEvents);
        }
        Ok(EvalReport {
            model: model.to_owned(),
            acc25: acc(0)?,
            acc50: acc(1)?,
            acc75: acc(2)?,
            rae: t.rae_sum / t.events as f64,
            split: split.to_owned(),
            n: t.n,
            taus,
            included: t.included,
            excluded: t.excluded,
            events: t.events,
        })
    }

    pub fn accuracies(&self) -> [f64; 3] {
        [self.acc25, self.acc50, self.acc75]
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    model: &'a str,
    acc25: String,
    acc50: String,
    acc75: String,
    rae: String,
    split: &'a str,
    n: usize,
    included25: usize,
    included50: usize,
    included75: usize,
    excluded25: usize,
    excluded50: usize,
    excluded75: usize,
    events: usize,
}

/// CSV with the accuracy and error columns first, then the counts.
pub fn write_reports_csv<W: std::io::Write>(w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(CsvRow {
            model: &r.model,
            acc25: format!("{:.4}", r.acc25),
            acc50: format!("{:.4}", r.acc50),
            acc75: format!("{:.4}", r.acc75),
            rae: format!("{:.6}", r.rae),
            split: &r.split,
            n: r.n,
            included25: r.included[0],
            included50: r.included[1],
            included75: r.included[2],
            excluded25: r.excluded[0],
            excluded50: r.excluded[1],
            excluded75: r.excluded[2],
            events: r.events,
        })
        .map_err(std::io::Error::other)?;
    }
    out.flush()
}

/// Accuracy at one horizon, in percent.
pub fn acc_at<M: SurvivalModel + Sync>(model: &M, d: &Dataset, tau: f64) -> Result<f64, MetricError> {
    let t = tally(model, d, [tau; 3])?;
    if t.included[0] == 0 {
        return Err(MetricError::NoLabeledPatients { tau });
    }
    Ok(100.0 * t.correct[0] as f64 / t.included[0] as f64)
}

pub fn rae<M: SurvivalModel + Sync>(model: &M, d: &Dataset) -> Result<f64, MetricError> {
    let t = tally(model, d, [0.0; 3])?;
    if t.events == 0 {
        return Err(MetricError::NoEvents);
    }
    Ok(t.rae_sum / t.events as f64)
}

/// Report at `d`'s own temporal quantiles.
pub fn evaluate<M: SurvivalModel + Sync>(model: &M, d: &Dataset, name: &str, split: &str) -> Result<EvalReport, MetricError> {
    let taus = temporal_quantiles(d)?;
    EvalReport::from_tally(name, split, taus, &tally(model, d, taus)?)
}

/// A curve shared by every patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    pub grid: TimeGrid,
    pub survival: Vec<f64>,
}

impl ConstantModel {
    /// Calls every patient a survivor (`true`) or a non-survivor (`false`)
    /// at every horizon.
    pub fn always(grid: TimeGrid, alive: bool) -> Self {
        let m = grid.len();
        let level = if alive { 1.0 } else { 0.0 };
        let mut survival = vec![level; m + 1];
        survival[0] = 1.0;
        ConstantModel { grid, survival }
    }
}

impl SurvivalModel for ConstantModel {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn predict_survival(&self, _: &PatientRecord) -> Result<Vec<f64>, ModelError> {
        Ok(self.survival.clone())
    }
}

/// Best accuracy any constant survivor call reaches at each horizon: the
/// larger of the survivor and non-survivor fractions among included patients.
pub fn best_constant_accuracy(d: &Dataset, taus: [f64; 3]) -> Result<[f64; 3], MetricError> {
    let mut out = [0.0; 3];
    for (j, &tau) in taus.iter().enumerate() {
        let known: Vec<bool> = d.records.iter().filter_map(|r| status_at(r, tau)).collect();
        if known.is_empty() {
            return Err(MetricError::NoLabeledPatients { tau });
        }
        let alive = known.iter().filter(|&&a| a).count();
        let best = alive.max(known.len() - alive);
        out[j] = 100.0 * best as f64 / known.len() as f64;
    }
    Ok(out)
}

/// Seeded shuffle cut into `k` contiguous folds; the first `n % k` folds get
/// one extra record.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, MetricError> {
    if k == 0 || n < k {
        return Err(MetricError::TooFewRecords { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KFoldResult {
    /// Pooled over all folds; `split` is `"mean"`.
    pub mean: EvalReport,
    /// `split` is `"fold{i}"`, 1-based.
    pub folds: Vec<EvalReport>,
    /// Best constant-call accuracies pooled over the same test folds.
    pub constant_baseline: [f64; 3],
    pub taus: [f64; 3],
}

/// Cross-validate any fitter. Horizons come from the whole dataset so every
/// fold is scored at the same times. Folds run in parallel; results are
/// combined in fold order.
pub fn kfold_with<M, F>(d: &Dataset, k: usize, seed: u64, name: &str, fitter: F) -> Result<KFoldResult, MetricError>
where
    M: SurvivalModel + Sync,
    F: Fn(&Dataset, &Dataset) -> Result<M, ModelError> + Sync,
{
    let folds = fold_indices(d.len(), k, seed)?;
    let taus = temporal_quantiles(d)?;
    let per_fold: Vec<Result<(Tally, [usize; 3], [usize; 3]), MetricError>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let rest: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| folds[g].iter().copied()).collect();
            let n_valid = rest.len() / 10;
            let (tr, va) = rest.split_at(rest.len() - n_valid);
            let test = d.subset(&folds[f]);
            let model = fitter(&d.subset(tr), &d.subset(va))?;
            let t = tally(&model, &test, taus)?;
            let (mut alive, mut dead) = ([0; 3], [0; 3]);
            for r in &test.records {
                for j in 0..3 {
                    match status_at(r, taus[j]) {
                        Some(true) => alive[j] += 1,
                        Some(false) => dead[j] += 1,
                        None => {}
                    }
                }
            }
            Ok((t, alive, dead))
        })
        .collect();

    let mut pooled = Tally::default();
    let (mut alive, mut dead) = ([0usize; 3], [0usize; 3]);
    let mut reports = Vec::with_capacity(k);
    for (f, r) in per_fold.into_iter().enumerate() {
        let wrap = |e: MetricError| MetricError::Fold {
            fold: f + 1,
            source: Box::new(e),
        };
        let (t, a, b) = r.map_err(wrap)?;
        reports.push(EvalReport::from_tally(name, &format!("fold{}", f + 1), taus, &t).map_err(wrap)?);
        pooled.add(&t);
        for j in 0..3 {
            alive[j] += a[j];
            dead[j] += b[j];
        }
    }
    let constant_baseline =
        std::array::from_fn(|j| 100.0 * alive[j].max(dead[j]) as f64 / (alive[j] + dead[j]).max(1) as f64);
    Ok(KFoldResult {
        mean: EvalReport::from_tally(name, "mean", taus, &pooled)?,
        folds: reports,
        constant_baseline,
        taus,
    })
}

/// [`kfold_with`] training `spec` on each fold.
pub fn kfold_eval(spec: &ModelSpec, d: &Dataset, k: usize, seed: u64) -> Result<KFoldResult, MetricError> {
    kfold_with::<ModelArtifact, _>(d, k, seed, spec.family.as_str(), |tr, va| fit(spec, tr, va))
}
