//! Raw inputs to validated [`Dataset`](crate::survival::Dataset)s:
//! SUPPORT2-style tables, PhysioNet-style ICU series, and synthetic data with
//! known ground truth.

mod physionet;
mod support2;
mod synthetic;

pub use physionet::{ingest_physionet, PhysioNetConfig, PHYSIONET_VARIABLES};
pub use support2::{ingest_support2, split_dataset, IngestConfig, Splits};
pub use synthetic::{gen_synthetic, GeneratorFamily, GroundTruth, SyntheticSpec};

use thiserror::Error;

use crate::survival::{validate_dataset, Dataset, SurvivalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("missing label columns: {}", .0.join(", "))]
    MissingLabelColumns(Vec<String>),
    #[error("unknown column {0:?} in config")]
    UnknownColumn(String),
    #[error("patient {0} has no measurements")]
    EmptyRecord(String),
    #[error("no outcome for patient {0}")]
    MissingOutcome(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: String,
        line: u64,
        detail: String,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error("produced dataset is invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

fn ensure_valid(d: Dataset) -> Result<Dataset, PipelineError> {
    match validate_dataset(&d).first() {
        None => Ok(d),
        Some(v) => Err(PipelineError::Invalid(v.to_string())),
    }
}
