//! Shared survival-analysis domain types: the discretized timeline, labels,
//! outcomes, patient records and datasets.
//!
//! A patient who dies inside interval `j` (1-indexed, `[b[j-1], b[j])`) has
//! outcome index `k = j - 1`, i.e. the number of intervals fully survived.
//! The implied label sequence is `y^t = 1` for `t > k`, so only `m + 1`
//! monotone sequences exist.

mod io;

pub use io::{read_dataset, write_dataset, DatasetHeader, DATASET_FORMAT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("negative observed time {0}")]
    NegativeTime(f64),
    #[error("non-finite observed time")]
    NonFiniteTime,
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] IoErrorWrapper),
}

/// `std::io::Error` is not `Clone`/`PartialEq`; keep the message only.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoErrorWrapper(pub String);

impl From<std::io::Error> for SurvivalError {
    fn from(e: std::io::Error) -> Self {
        SurvivalError::Io(IoErrorWrapper(e.to_string()))
    }
}

/// Discretization `0 = b[0] < b[1] < ... < b[m]` of the follow-up window, in days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    boundaries: Vec<f64>,
}

impl TimeGrid {
    pub fn new(boundaries: Vec<f64>) -> Result<Self, SurvivalError> {
        if boundaries.len() < 2 {
            return Err(SurvivalError::InvalidGrid(
                "need at least one interval".into(),
            ));
        }
        if boundaries[0] != 0.0 {
            return Err(SurvivalError::InvalidGrid(format!(
                "first boundary must be 0, got {}",
                boundaries[0]
            )));
        }
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(SurvivalError::InvalidGrid("non-finite boundary".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SurvivalError::InvalidGrid(
                "boundaries must be strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { boundaries })
    }

    /// `m` equal intervals of `width` days.
    pub fn uniform(m: usize, width: f64) -> Result<Self, SurvivalError> {
        if m == 0 || !(width > 0.0) || !width.is_finite() {
            return Err(SurvivalError::InvalidGrid(format!(
                "cannot build {m} intervals of width {width}"
            )));
        }
        Self::new((0..=m).map(|i| i as f64 * width).collect())
    }

    /// Number of intervals `m`.
    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn cap(&self) -> f64 {
        self.boundaries[self.len()]
    }

    /// `[start, end)` of interval `i` (1-indexed).
    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i - 1], self.boundaries[i])
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        let (a, b) = self.interval(i);
        0.5 * (a + b)
    }

    /// 1-indexed interval containing `time`, or `None` past the cap.
    /// A time exactly on a boundary belongs to the interval starting there.
    pub fn interval_of(&self, time: f64) -> Option<usize> {
        if !(time >= 0.0) || time >= self.cap() {
            return None;
        }
        // partition_point gives the count of boundaries <= time, which is the
        // 1-indexed interval.
        Some(self.boundaries.partition_point(|&b| b <= time))
    }

    /// Width of interval 1; used as the floor for relative errors.
    pub fn first_width(&self) -> f64 {
        self.boundaries[1] - self.boundaries[0]
    }

    /// Short human label, e.g. `156x7d` for uniform grids.
    pub fn describe(&self) -> String {
        let w = self.first_width();
        let uniform = self
            .boundaries
            .windows(2)
            .all(|p| ((p[1] - p[0]) - w).abs() <= 1e-9 * w.max(1.0));
        if uniform {
            format!("{}x{}d", self.len(), w)
        } else {
            format!("{} intervals, cap {}d", self.len(), self.cap())
        }
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = SurvivalError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        TimeGrid::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.boundaries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    /// Days from the origin to death or last follow-up.
    pub time: f64,
    /// `true` when death was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalLabel {
    pub fn event(time: f64) -> Self {
        SurvivalLabel { time, event: true }
    }

    pub fn censored(time: f64) -> Self {
        SurvivalLabel { time, event: false }
    }

    pub fn validate(&self) -> Result<(), SurvivalError> {
        if !self.time.is_finite() {
            return Err(SurvivalError::NonFiniteTime);
        }
        if self.time < 0.0 {
            return Err(SurvivalError::NegativeTime(self.time));
        }
        Ok(())
    }
}

/// Position of a patient's label sequence among the `m + 1` valid ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// Death observed after surviving exactly `k` intervals (`0 <= k <= m`).
    Event { k: usize },
    /// Known alive through the start of interval `last_alive + 1`; every
    /// outcome `k > last_alive` is feasible.
    Censored { last_alive: usize },
}

impl Outcome {
    pub fn is_censored(&self) -> bool {
        matches!(self, Outcome::Censored { .. })
    }

    /// Feasible outcome indices as an inclusive range.
    pub fn feasible(&self, m: usize) -> std::ops::RangeInclusive<usize> {
        match *self {
            Outcome::Event { k } => k..=k,
            Outcome::Censored { last_alive } => (last_alive + 1)..=m,
        }
    }

    pub fn check(&self, m: usize) -> bool {
        match *self {
            Outcome::Event { k } => k <= m,
            Outcome::Censored { last_alive } => last_alive < m,
        }
    }

    /// `y^t` for `t = 1..=m`; `None` marks latent (censored) entries.
    pub fn label_sequence(&self, m: usize) -> Vec<Option<u8>> {
        match *self {
            Outcome::Event { k } => (1..=m).map(|t| Some(u8::from(t > k))).collect(),
            Outcome::Censored { last_alive } => (1..=m)
                .map(|t| if t <= last_alive + 1 { Some(0) } else { None })
                .collect(),
        }
    }
}

/// Convert a label into its outcome on `grid`. Deaths at or beyond the cap
/// become censored at the last interval.
pub fn to_outcome(label: &SurvivalLabel, grid: &TimeGrid) -> Result<Outcome, SurvivalError> {
    label.validate()?;
    let m = grid.len();
    match grid.interval_of(label.time) {
        Some(j) if label.event => Ok(Outcome::Event { k: j - 1 }),
        Some(j) => Ok(Outcome::Censored { last_alive: j - 1 }),
        None => Ok(Outcome::Censored { last_alive: m - 1 }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    Static,
    Series,
}

impl std::fmt::Display for ContextKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContextKind::Static => f.write_str("static"),
            ContextKind::Series => f.write_str("series"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Static(Vec<f64>),
    /// Time steps x variables.
    Series(Vec<Vec<f64>>),
}

impl Context {
    pub fn kind(&self) -> ContextKind {
        match self {
            Context::Static(_) => ContextKind::Static,
            Context::Series(_) => ContextKind::Series,
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            Context::Static(v) => Box::new(v.iter().copied()),
            Context::Series(rows) => Box::new(rows.iter().flatten().copied()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// Interpretable attributes; element 0 is the constant bias 1.
    pub attributes: Vec<f64>,
    pub context: Context,
    pub label: SurvivalLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: TimeGrid,
    pub attribute_names: Vec<String>,
    pub context_names: Vec<String>,
    pub context_kind: ContextKind,
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn d_c(&self) -> usize {
        self.context_names.len()
    }

    /// Same metadata, records picked by index (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            grid: self.grid.clone(),
            attribute_names: self.attribute_names.clone(),
            context_names: self.context_names.clone(),
            context_kind: self.context_kind,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn find(&self, id: &str) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let c = self.records.iter().filter(|r| !r.label.event).count();
        c as f64 / self.records.len() as f64
    }

    pub fn outcomes(&self) -> Result<Vec<Outcome>, SurvivalError> {
        self.records
            .iter()
            .map(|r| to_outcome(&r.label, &self.grid))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for dataset-level problems.
    pub record_id: Option<String>,
    pub rule: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.record_id {
            Some(id) => write!(f, "record {id}: {} ({})", self.rule, self.detail),
            None => write!(f, "dataset: {} ({})", self.rule, self.detail),
        }
    }
}

/// Check every type invariant; an empty result means the dataset is valid.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: Option<&str>, rule: &'static str, detail: String| {
        out.push(Violation {
            record_id: id.map(str::to_owned),
            rule,
            detail,
        })
    };
    if d.attribute_names.first().map(String::as_str) != Some("bias") {
        push(None, "bias-name", "attribute_names[0] must be \"bias\"".into());
    }
    let d_x = d.d_x();
    let d_c = d.d_c();
    let mut seen = std::collections::HashSet::new();
    for r in &d.records {
        let id = Some(r.id.as_str());
        if !seen.insert(r.id.as_str()) {
            push(id, "unique-id", "duplicate record id".into());
        }
        if r.attributes.len() != d_x {
            push(
                id,
                "attribute-dim",
                format!("expected {d_x} attributes, got {}", r.attributes.len()),
            );
        }
        if r.attributes.first() != Some(&1.0) {
            push(
                id,
                "bias-attribute",
                format!("attributes[0] must be 1, got {:?}", r.attributes.first()),
            );
        }
        if r.attributes.iter().any(|v| !v.is_finite()) {
            push(id, "finite-attributes", "non-finite attribute value".into());
        }
        if r.context.kind() != d.context_kind {
            push(
                id,
                "context-kind",
                format!("expected {} context, got {}", d.context_kind, r.context.kind()),
            );
        }
        let dims_ok = match &r.context {
            Context::Static(v) => v.len() == d_c,
            Context::Series(rows) => !rows.is_empty() && rows.iter().all(|row| row.len() == d_c),
        };
        if !dims_ok {
            push(id, "context-dim", format!("context width must be {d_c}"));
        }
        if r.context.values().any(|v| !v.is_finite()) {
            push(id, "finite-context", "non-finite context value".into());
        }
        if let Err(e) = r.label.validate() {
            push(id, "label", e.to_string());
        }
    }
    out
}
