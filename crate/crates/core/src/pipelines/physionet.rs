//! PhysioNet-style ICU records: one `Time,Parameter,Value` file per patient
//! plus an outcomes table.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::support2::csv_error;
use super::{ensure_valid, PipelineError};
use crate::survival::{Context, ContextKind, Dataset, PatientRecord, SurvivalLabel, TimeGrid};

/// The 37 time-series variables of the 2012 challenge.
pub const PHYSIONET_VARIABLES: [&str; 37] = [
    "Albumin", "ALP", "ALT", "AST", "Bilirubin", "BUN", "Cholesterol", "Creatinine", "DiasABP",
    "FiO2", "GCS", "Glucose", "HCO3", "HCT", "HR", "K", "Lactate", "Mg", "MAP", "MechVent", "Na",
    "NIDiasABP", "NIMAP", "NISysABP", "PaCO2", "PaO2", "pH", "Platelets", "RespRate", "SaO2",
    "SysABP", "Temp", "TroponinI", "TroponinT", "Urine", "WBC", "Weight",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysioNetConfig {
    pub variables: Vec<String>,
    pub window_hours: f64,
    pub bin_minutes: f64,
    /// Value for empty bins and never-measured attributes.
    pub fill_value: f64,
    pub cap_days: f64,
    pub interval_days: f64,
    pub id_column: String,
    pub survival_column: String,
}

impl Default for PhysioNetConfig {
    fn default() -> Self {
        PhysioNetConfig {
            variables: PHYSIONET_VARIABLES.iter().map(|s| (*s).to_owned()).collect(),
            window_hours: 48.0,
            bin_minutes: 30.0,
            fill_value: 0.0,
            cap_days: 60.0,
            interval_days: 1.0,
            id_column: "RecordID".into(),
            survival_column: "Survival".into(),
        }
    }
}

impl PhysioNetConfig {
    fn bins(&self) -> Result<usize, PipelineError> {
        let n = self.window_hours * 60.0 / self.bin_minutes;
        if !(n.is_finite() && n >= 1.0) || (n - n.round()).abs() > 1e-9 {
            return Err(PipelineError::InvalidConfig(
                "window must be a whole number of bins".into(),
            ));
        }
        Ok(n.round() as usize)
    }

    fn grid(&self) -> Result<TimeGrid, PipelineError> {
        let m = self.cap_days / self.interval_days;
        if !(m.is_finite() && m >= 1.0) || (m - m.round()).abs() > 1e-9 {
            return Err(PipelineError::InvalidConfig(
                "cap must be a whole number of intervals".into(),
            ));
        }
        Ok(TimeGrid::uniform(m.round() as usize, self.interval_days)?)
    }
}

/// `hh:mm` to minutes; hours may exceed 24.
fn parse_clock(s: &str) -> Option<f64> {
    let (h, m) = s.trim().split_once(':')?;
    let h: u32 = h.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    (m < 60).then(|| f64::from(h * 60 + m))
}

struct Parsed {
    id: String,
    context: Vec<Vec<f64>>,
    last: Vec<f64>,
}

fn parse_record(path: &Path, cfg: &PhysioNetConfig, bins: usize) -> Result<Parsed, PipelineError> {
    let name = path.display().to_string();
    let var_index: HashMap<&str, usize> = cfg
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let d = cfg.variables.len();
    let mut sums = vec![vec![0.0; d]; bins];
    let mut counts = vec![vec![0u32; d]; bins];
    // (time, value) of the latest raw measurement per variable
    let mut last: Vec<Option<(f64, f64)>> = vec![None; d];
    let mut id = None;
    let mut measured = 0usize;
    let window = cfg.window_hours * 60.0;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(&name, e))?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |detail: String| PipelineError::Parse {
            path: name.clone(),
            line,
            detail,
        };
        if rec.len() < 3 {
            return Err(bad("expected Time,Parameter,Value".into()));
        }
        let param = rec[1].trim();
        if param == cfg.id_column {
            id = Some(rec[2].trim().trim_end_matches(".0").to_owned());
            continue;
        }
        let Some(&j) = var_index.get(param) else { continue };
        let t = parse_clock(&rec[0]).ok_or_else(|| bad(format!("bad time {:?}", &rec[0])))?;
        let v: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad value {:?}", &rec[2])))?;
        if t > window {
            continue;
        }
        measured += 1;
        let b = ((t / cfg.bin_minutes) as usize).min(bins - 1);
        sums[b][j] += v;
        counts[b][j] += 1;
        if last[j].is_none_or(|(lt, _)| t >= lt) {
            last[j] = Some((t, v));
        }
    }
    let id = id.unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(|| name.clone(), |s| s.to_string_lossy().into_owned())
    });
    if measured == 0 {
        return Err(PipelineError::EmptyRecord(id));
    }
    let context = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| {
            s.iter()
                .zip(c)
                .map(|(&v, &n)| if n == 0 { cfg.fill_value } else { v / f64::from(n) })
                .collect()
        })
        .collect();
    Ok(Parsed {
        id,
        context,
        last: last
            .into_iter()
            .map(|l| l.map_or(cfg.fill_value, |(_, v)| v))
            .collect(),
    })
}

/// Survival days by record id. `-1` means no recorded death.
fn read_outcomes(path: &Path, cfg: &PhysioNetConfig) -> Result<HashMap<String, f64>, PipelineError> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(&name, e))?;
    let header = rdr.headers().map_err(|e| csv_error(&name, e))?.clone();
    let find = |c: &str| header.iter().position(|h| h.trim() == c);
    let (Some(i), Some(s)) = (find(&cfg.id_column), find(&cfg.survival_column)) else {
        let missing = [&cfg.id_column, &cfg.survival_column]
            .into_iter()
            .filter(|c| find(c).is_none())
            .cloned()
            .collect();
        return Err(PipelineError::MissingLabelColumns(missing));
    };
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v: f64 = rec[s].trim().parse().map_err(|_| PipelineError::Parse {
            path: name.clone(),
            line,
            detail: format!("bad survival value {:?}", &rec[s]),
        })?;
        out.insert(rec[i].trim().trim_end_matches(".0").to_owned(), v);
    }
    Ok(out)
}

/// Convert a survival value to a label. A value `s >= 0` is the day number
/// of death (day 1 is the first 24 hours), so death is placed mid-day at
/// `s - 0.5`; `-1` is censored at the cap.
fn label_of(survival: f64, cap: f64) -> SurvivalLabel {
    if survival < 0.0 {
        SurvivalLabel::censored(cap)
    } else {
        SurvivalLabel::event((survival - 0.5).max(0.0))
    }
}

/// Ingest every `.txt`/`.csv` file under `dir` (sorted by file name) with
/// outcomes from `outcomes`.
pub fn ingest_physionet(dir: &Path, outcomes: &Path, cfg: &PhysioNetConfig) -> Result<Dataset, PipelineError> {
    if cfg.variables.is_empty() {
        return Err(PipelineError::InvalidConfig("no variables selected".into()));
    }
    let bins = cfg.bins()?;
    let grid = cfg.grid()?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("txt") || e.eq_ignore_ascii_case("csv"))
        })
        .collect();
    files.sort();
    let table = read_outcomes(outcomes, cfg)?;
    let parsed: Vec<Result<Parsed, PipelineError>> =
        files.par_iter().map(|p| parse_record(p, cfg, bins)).collect();

    let mut records = Vec::with_capacity(parsed.len());
    for p in parsed {
        let p = p?;
        let survival = *table
            .get(&p.id)
            .ok_or_else(|| PipelineError::MissingOutcome(p.id.clone()))?;
        let mut x = vec![1.0];
        x.extend(p.last);
        records.push(PatientRecord {
            label: label_of(survival, grid.cap()),
            id: p.id,
            attributes: x,
            context: Context::Series(p.context),
        });
    }
    let mut attribute_names = vec!["bias".to_owned()];
    attribute_names.extend(cfg.variables.iter().cloned());
    ensure_valid(Dataset {
        grid,
        attribute_names,
        context_names: cfg.variables.clone(),
        context_kind: ContextKind::Series,
        records,
    })
}
