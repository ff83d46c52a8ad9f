//! Single-file artifact: one JSON manifest line followed by the parameter
//! blob in the kernel's little-endian layout.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelArtifact, ModelError, ModelSpec, TrainingMeta};
use crate::kernel::{ParamStore, StoreManifest};
use crate::survival::{ContextKind, TimeGrid};

pub const ARTIFACT_FORMAT: &str = "cen-survival-artifact";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    spec: ModelSpec,
    grid: TimeGrid,
    attribute_names: Vec<String>,
    context_names: Vec<String>,
    context_kind: ContextKind,
    meta: TrainingMeta,
    params: StoreManifest,
}

fn format_err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Format(e.to_string())
}

impl ModelArtifact {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let manifest = Manifest {
            format: ARTIFACT_FORMAT.into(),
            version: 1,
            spec: self.spec.clone(),
            grid: self.grid.clone(),
            attribute_names: self.attribute_names.clone(),
            context_names: self.context_names.clone(),
            context_kind: self.context_kind,
            meta: self.meta.clone(),
            params: self.params.manifest(),
        };
        let line = serde_json::to_string(&manifest).map_err(format_err)?;
        w.write_all(line.as_bytes()).map_err(format_err)?;
        w.write_all(b"\n").map_err(format_err)?;
        w.write_all(&self.params.blob()).map_err(format_err)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self, ModelError> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(format_err)?;
        let m: Manifest = serde_json::from_str(line.trim_end()).map_err(format_err)?;
        if m.format != ARTIFACT_FORMAT {
            return Err(ModelError::Format(format!("not an artifact (format {:?})", m.format)));
        }
        if m.version != 1 {
            return Err(ModelError::Format(format!("unsupported version {}", m.version)));
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob).map_err(format_err)?;
        Ok(ModelArtifact {
            spec: m.spec,
            grid: m.grid,
            attribute_names: m.attribute_names,
            context_names: m.context_names,
            context_kind: m.context_kind,
            params: ParamStore::from_parts(&m.params, &blob)?,
            meta: m.meta,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()?).map_err(format_err)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path).map_err(format_err)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
