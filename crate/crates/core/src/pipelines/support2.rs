//! SUPPORT2-style tables: one row per patient, numeric and categorical
//! columns, a follow-up time and a death indicator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_valid, PipelineError};
use crate::survival::{Context, ContextKind, Dataset, PatientRecord, SurvivalLabel, TimeGrid};

fn d_time() -> String {
    "d.time".into()
}
fn death() -> String {
    "death".into()
}
fn leakage() -> Vec<String> {
    vec!["death".into(), "d.time".into(), "hospdead".into()]
}
fn fill() -> f64 {
    -1.0
}
fn cap() -> f64 {
    1092.0
}
fn width() -> f64 {
    7.0
}
fn splits() -> [usize; 3] {
    [7105, 1000, 1000]
}

/// Table ingest settings. Empty `attributes` selects every column that is
/// not a label, leakage or unnamed column; empty `context` reuses the
/// attribute columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub attributes: Vec<String>,
    pub context: Vec<String>,
    /// One-hot encoded columns; `None` treats every column holding a
    /// non-numeric value as categorical.
    pub categorical: Option<Vec<String>>,
    pub leakage: Vec<String>,
    pub time_column: String,
    pub event_column: String,
    /// Column holding record ids; row numbers are used when unset.
    pub id_column: Option<String>,
    pub fill_value: f64,
    pub cap_days: f64,
    pub interval_days: f64,
    /// Train, validation and test sizes.
    pub splits: [usize; 3],
    pub seed: u64,
    /// Z-score numeric columns (missing cells still get `fill_value`).
    pub standardize: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            attributes: Vec::new(),
            context: Vec::new(),
            categorical: None,
            leakage: leakage(),
            time_column: d_time(),
            event_column: death(),
            id_column: None,
            fill_value: fill(),
            cap_days: cap(),
            interval_days: width(),
            splits: splits(),
            seed: 0,
            standardize: false,
        }
    }
}

impl IngestConfig {
    pub fn grid(&self) -> Result<TimeGrid, PipelineError> {
        let w = self.interval_days;
        let c = self.cap_days;
        if !(w.is_finite() && w > 0.0 && c.is_finite() && c > 0.0) {
            return Err(PipelineError::InvalidConfig("cap and interval must be positive".into()));
        }
        let m = (c / w).round();
        if (m * w - c).abs() > 1e-9 * c {
            return Err(PipelineError::InvalidConfig(format!(
                "cap {c} is not a whole number of {w}-day intervals"
            )));
        }
        Ok(TimeGrid::uniform(m as usize, w)?)
    }

    fn check(&self) -> Result<(), PipelineError> {
        if !self.fill_value.is_finite() {
            return Err(PipelineError::InvalidConfig("fill_value must be finite".into()));
        }
        self.grid().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle into train/valid/test. When the dataset is smaller than the
/// requested total, sizes shrink proportionally and train takes the rounding
/// remainder.
pub fn split_dataset(d: &Dataset, sizes: [usize; 3], seed: u64) -> Splits {
    let n = d.len();
    let total: usize = sizes.iter().sum();
    let [_, v, t] = if total <= n || total == 0 {
        sizes
    } else {
        let scale = |s: usize| (s as f64 * n as f64 / total as f64).floor() as usize;
        [0, scale(sizes[1]), scale(sizes[2])]
    };
    let tr = if total <= n { sizes[0] } else { n - v - t };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Splits {
        train: d.subset(&idx[..tr]),
        valid: d.subset(&idx[tr..tr + v]),
        test: d.subset(&idx[tr + v..tr + v + t]),
    }
}

fn is_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// How one source column becomes output features.
#[derive(Debug, Clone)]
enum Encoder {
    Numeric { mean: f64, sd: f64 },
    /// Sorted levels; an unseen or missing value fills the whole block.
    OneHot(Vec<String>),
}

impl Encoder {
    fn names(&self, col: &str) -> Vec<String> {
        match self {
            Encoder::Numeric { .. } => vec![col.to_owned()],
            Encoder::OneHot(levels) => levels.iter().map(|l| format!("{col}_{l}")).collect(),
        }
    }

    fn encode(&self, raw: &str, fill: f64, out: &mut Vec<f64>) -> Result<(), String> {
        match self {
            Encoder::Numeric { mean, sd } => {
                if is_missing(raw) {
                    out.push(fill);
                } else {
                    let v: f64 = raw.trim().parse().map_err(|_| format!("not a number: {raw:?}"))?;
                    out.push((v - mean) / sd);
                }
            }
            Encoder::OneHot(levels) => {
                let v = raw.trim();
                if is_missing(v) {
                    out.extend(std::iter::repeat_n(fill, levels.len()));
                } else {
                    // unseen levels leave the block at zero
                    out.extend(levels.iter().map(|l| f64::from(u8::from(l == v))));
                }
            }
        }
        Ok(())
    }
}

struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table, PipelineError> {
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(&name, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(&name, e))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(Table {
        path: name,
        header,
        rows,
    })
}

pub(super) fn csv_error(path: &str, e: csv::Error) -> PipelineError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(io) => PipelineError::Io(format!("{path}: {io}")),
        _ => PipelineError::Parse {
            path: path.to_owned(),
            line,
            detail: e.to_string(),
        },
    }
}

fn parse_time(t: &Table, line: u64, raw: &str, col: &str) -> Result<f64, PipelineError> {
    raw.trim().parse::<f64>().map_err(|_| PipelineError::Parse {
        path: t.path.clone(),
        line,
        detail: format!("{col} must be numeric, got {raw:?}"),
    })
}

fn parse_event(t: &Table, line: u64, raw: &str, col: &str) -> Result<bool, PipelineError> {
    match raw.trim() {
        "1" | "1.0" | "true" | "TRUE" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" => Ok(false),
        _ => Err(PipelineError::Parse {
            path: t.path.clone(),
            line,
            detail: format!("{col} must be 0 or 1, got {raw:?}"),
        }),
    }
}

/// Read a SUPPORT2-style CSV into a static-context dataset on the configured
/// grid.
pub fn ingest_support2(path: &Path, cfg: &IngestConfig) -> Result<Dataset, PipelineError> {
    cfg.check()?;
    let table = read_table(path)?;
    let col = |name: &str| table.header.iter().position(|h| h == name);

    let missing: Vec<String> = [&cfg.time_column, &cfg.event_column]
        .into_iter()
        .filter(|c| col(c).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingLabelColumns(missing));
    }
    let declared = cfg
        .attributes
        .iter()
        .chain(&cfg.context)
        .chain(cfg.categorical.iter().flatten())
        .chain(&cfg.leakage)
        .chain(&cfg.id_column);
    for name in declared {
        if col(name).is_none() && !cfg.leakage.contains(name) {
            return Err(PipelineError::UnknownColumn(name.clone()));
        }
    }

    let excluded: BTreeSet<&str> = cfg
        .leakage
        .iter()
        .chain([&cfg.time_column, &cfg.event_column])
        .chain(&cfg.id_column)
        .map(String::as_str)
        .collect();
    let attributes: Vec<String> = if cfg.attributes.is_empty() {
        table
            .header
            .iter()
            .filter(|h| !h.is_empty() && !excluded.contains(h.as_str()))
            .cloned()
            .collect()
    } else {
        cfg.attributes.clone()
    };
    if let Some(bad) = attributes.iter().find(|a| excluded.contains(a.as_str())) {
        return Err(PipelineError::InvalidConfig(format!("{bad:?} is a label or leakage column")));
    }
    let context = if cfg.context.is_empty() {
        attributes.clone()
    } else {
        cfg.context.clone()
    };
    if attributes.is_empty() || context.is_empty() {
        return Err(PipelineError::InvalidConfig("no attribute or context columns".into()));
    }

    let categorical: BTreeSet<String> = match &cfg.categorical {
        Some(c) => c.iter().cloned().collect(),
        None => attributes
            .iter()
            .chain(&context)
            .filter(|name| {
                let j = col(name).expect("checked");
                table
                    .rows
                    .iter()
                    .any(|(_, r)| !is_missing(&r[j]) && r[j].trim().parse::<f64>().is_err())
            })
            .cloned()
            .collect(),
    };

    let mut encoders: BTreeMap<String, Encoder> = BTreeMap::new();
    for name in attributes.iter().chain(&context) {
        if encoders.contains_key(name) {
            continue;
        }
        let j = col(name).expect("checked");
        let values = table.rows.iter().map(|(_, r)| r[j].trim()).filter(|v| !is_missing(v));
        let enc = if categorical.contains(name) {
            Encoder::OneHot(values.map(str::to_owned).collect::<BTreeSet<_>>().into_iter().collect())
        } else if cfg.standardize {
            let nums: Vec<f64> = values.filter_map(|v| v.parse().ok()).collect();
            let n = nums.len().max(1) as f64;
            let mean = nums.iter().sum::<f64>() / n;
            let var = nums.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Encoder::Numeric {
                mean,
                sd: if var > 0.0 { var.sqrt() } else { 1.0 },
            }
        } else {
            Encoder::Numeric { mean: 0.0, sd: 1.0 }
        };
        encoders.insert(name.clone(), enc);
    }

    let names_of = |cols: &[String]| -> Vec<String> {
        cols.iter().flat_map(|c| encoders[c].names(c)).collect()
    };
    let mut attribute_names = vec!["bias".to_owned()];
    attribute_names.extend(names_of(&attributes));
    let context_names = names_of(&context);

    let (t_col, e_col) = (col(&cfg.time_column).expect("checked"), col(&cfg.event_column).expect("checked"));
    let id_col = cfg.id_column.as_deref().map(|c| col(c).expect("checked"));
    let encode_row = |line: u64, row: &[String], cols: &[String], out: &mut Vec<f64>| {
        for c in cols {
            let j = col(c).expect("checked");
            encoders[c]
                .encode(&row[j], cfg.fill_value, out)
                .map_err(|detail| PipelineError::Parse {
                    path: table.path.clone(),
                    line,
                    detail: format!("column {c}: {detail}"),
                })?;
        }
        Ok::<(), PipelineError>(())
    };

    let mut records = Vec::with_capacity(table.rows.len());
    for (i, (line, row)) in table.rows.iter().enumerate() {
        let time = parse_time(&table, *line, &row[t_col], &cfg.time_column)?;
        let event = parse_event(&table, *line, &row[e_col], &cfg.event_column)?;
        let label = SurvivalLabel { time, event };
        label.validate().map_err(|e| PipelineError::Parse {
            path: table.path.clone(),
            line: *line,
            detail: e.to_string(),
        })?;
        let mut x = vec![1.0];
        encode_row(*line, row, &attributes, &mut x)?;
        let mut c = Vec::with_capacity(context_names.len());
        encode_row(*line, row, &context, &mut c)?;
        records.push(PatientRecord {
            id: id_col.map_or_else(|| format!("row{}", i + 1), |j| row[j].trim().to_owned()),
            attributes: x,
            context: Context::Static(c),
            label,
        });
    }
    ensure_valid(Dataset {
        grid: cfg.grid()?,
        attribute_names,
        context_names,
        context_kind: ContextKind::Static,
        records,
    })
}
