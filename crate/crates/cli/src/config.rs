//! Run configuration file (TOML). Every section is optional; command-line
//! flags override file values.
//!
//! ```toml
//! seed = 7
//!
//! [ingest.support2]        # pipelines::IngestConfig
//! cap_days = 1092
//! interval_days = 7
//!
//! [ingest.physionet]       # pipelines::PhysioNetConfig
//! window_hours = 48
//!
//! [ingest.synthetic]       # pipelines::SyntheticSpec
//! n = 1000
//! family = "crf"
//! censoring_rate = 0.3
//!
//! [model]                  # models::ModelSpec
//! family = "mlp-cen"
//! epochs = 100
//! [model.optimizer]
//! lr = 0.01
//!
//! [train]
//! valid_fraction = 0.1
//!
//! [eval]
//! kfold = 5
//!
//! [explain]
//! top_k = 7
//! svg = true
//! ```

use std::path::Path;

use anyhow::Context as _;
use cen_survival::models::ModelSpec;
use cen_survival::pipelines::{IngestConfig, PhysioNetConfig, SyntheticSpec};
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides every section's own seed.
    pub seed: Option<u64>,
    pub ingest: IngestSection,
    /// Kept as a raw table so that `--family` can fill in a missing family
    /// before validation.
    pub model: Option<toml::Table>,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub explain: ExplainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub support2: IngestConfig,
    pub physionet: PhysioNetConfig,
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Share of the training file held out for early stopping when no
    /// validation file is given.
    pub valid_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { valid_fraction: 0.1 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub kfold: Option<usize>,
    pub name: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    pub top_k: Option<usize>,
    pub svg: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    /// The `[model]` section with `family` supplied or replaced by `family`.
    pub fn model_spec(&self, family: Option<&str>) -> anyhow::Result<ModelSpec> {
        let mut table = self.model.clone().unwrap_or_default();
        if let Some(f) = family {
            table.insert("family".into(), toml::Value::String(f.to_owned()));
        }
        if !table.contains_key("family") {
            return Err(UsageError("no model family: pass --family or set model.family".into()).into());
        }
        let spec: ModelSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("[model]: {e}")))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cen_survival::models::Family;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nvalid = 0.2").is_err());
        assert!(toml::from_str::<RunConfig>("[ingest.synthetic]\nrecords = 5").is_err());
        let c: RunConfig = toml::from_str("[model]\nfamily = \"crf\"\nepoch = 3").unwrap();
        assert!(c.model_spec(None).is_err());
    }

    #[test]
    fn flags_fill_and_override_the_family() {
        let c: RunConfig = toml::from_str("seed = 4\n[model]\nepochs = 3\n[model.optimizer]\nlr = 0.5").unwrap();
        assert_eq!(c.seed, Some(4));
        assert!(c.model_spec(None).is_err());
        let s = c.model_spec(Some("mlp-cen")).unwrap();
        assert_eq!((s.family, s.epochs, s.optimizer.lr), (Family::MlpCen, 3, 0.5));
        assert_eq!(s.optimizer.batch_size, 64);
        assert_eq!(RunConfig::default().train.valid_fraction, 0.1);
    }
}
