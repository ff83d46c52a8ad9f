//! Line-oriented dataset files: one JSON header line, then one JSON record
//! per line. Floats are written in shortest round-trip form, so finite values
//! survive a write/read cycle bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ContextKind, Dataset, PatientRecord, SurvivalError, TimeGrid};

pub const DATASET_FORMAT: &str = "cen-survival-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub grid: TimeGrid,
    pub attribute_names: Vec<String>,
    pub context_names: Vec<String>,
    pub context_kind: ContextKind,
    pub n_records: usize,
    pub n_censored: usize,
}

impl DatasetHeader {
    pub fn of(d: &Dataset) -> Self {
        DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: 1,
            grid: d.grid.clone(),
            attribute_names: d.attribute_names.clone(),
            context_names: d.context_names.clone(),
            context_kind: d.context_kind,
            n_records: d.records.len(),
            n_censored: d.records.iter().filter(|r| !r.label.event).count(),
        }
    }
}

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<(), SurvivalError> {
    let header = serde_json::to_string(&DatasetHeader::of(d))
        .map_err(|e| SurvivalError::Format(e.to_string()))?;
    writeln!(w, "{header}")?;
    for r in &d.records {
        let line = serde_json::to_string(r).map_err(|e| SurvivalError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset, SurvivalError> {
    let mut lines = r.lines().enumerate();
    let header: DatasetHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?)
            .map_err(|e| SurvivalError::Format(format!("line 1: header: {e}")))?,
        None => return Err(SurvivalError::Format("empty dataset file".into())),
    };
    if header.format != DATASET_FORMAT {
        return Err(SurvivalError::Format(format!(
            "line 1: unexpected format tag {:?}",
            header.format
        )));
    }
    let mut records = Vec::with_capacity(header.n_records);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientRecord = serde_json::from_str(&line)
            .map_err(|e| SurvivalError::Format(format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    if records.len() != header.n_records {
        return Err(SurvivalError::Format(format!(
            "header declares {} records, found {}",
            header.n_records,
            records.len()
        )));
    }
    Ok(Dataset {
        grid: header.grid,
        attribute_names: header.attribute_names,
        context_names: header.context_names,
        context_kind: header.context_kind,
        records,
    })
}
