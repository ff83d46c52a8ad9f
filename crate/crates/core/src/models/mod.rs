//! The seven model families behind one interface: [`fit`], then
//! [`ModelArtifact::predict_survival`] and [`ModelArtifact::explain`].
//!
//! | family     | encoder                   | head                          |
//! |------------|---------------------------|-------------------------------|
//! | `cox`      | none                      | proportional hazards          |
//! | `aalen`    | none                      | additive hazards              |
//! | `crf`      | none                      | global `Θ` on attributes      |
//! | `mlp-crf`  | MLP, output LSTM          | per-interval linear on `h^t`  |
//! | `lstm-crf` | input LSTM, output LSTM   | per-interval linear on `h^t`  |
//! | `mlp-cen`  | MLP, output LSTM          | dictionary attention          |
//! | `lstm-cen` | input LSTM, output LSTM   | dictionary attention          |

mod aalen;
mod artifact;
mod cox;
mod net;
mod train;

pub use aalen::{aalen_fit, aalen_fit_data, AalenFit};
pub use artifact::ARTIFACT_FORMAT;
pub use cox::{cox_fit, cox_fit_data, partial_likelihood, CoxData, CoxFit, PartialLikelihood, SEPARATION_NORM};
pub use net::{cen_forward, CenOutput};
pub use train::{mean_nll, total_nll_with_grads, EpochRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelError, ParamStore, SgdConfig, Tensor};
use crate::likelihood::{ExplanationSet, LikelihoodError, PairwisePotentials};
use crate::survival::{validate_dataset, ContextKind, Dataset, PatientRecord, SurvivalError, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("family {family} needs {needed} context, dataset has {found}")]
    IncompatibleContext {
        family: Family,
        needed: ContextKind,
        found: ContextKind,
    },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("no uncensored events in the training data")]
    NoEvents,
    #[error("family {0} assigns weights to latent features; no attribute-level explanation exists")]
    ExplanationUnavailable(Family),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("artifact: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Cox,
    Aalen,
    Crf,
    MlpCrf,
    LstmCrf,
    MlpCen,
    LstmCen,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Cox,
        Family::Aalen,
        Family::Crf,
        Family::MlpCrf,
        Family::LstmCrf,
        Family::MlpCen,
        Family::LstmCen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cox => "cox",
            Family::Aalen => "aalen",
            Family::Crf => "crf",
            Family::MlpCrf => "mlp-crf",
            Family::LstmCrf => "lstm-crf",
            Family::MlpCen => "mlp-cen",
            Family::LstmCen => "lstm-cen",
        }
    }

    /// Context kind the encoder consumes; `None` for families that only use
    /// attributes.
    pub fn required_context(self) -> Option<ContextKind> {
        match self {
            Family::MlpCrf | Family::MlpCen => Some(ContextKind::Static),
            Family::LstmCrf | Family::LstmCen => Some(ContextKind::Series),
            _ => None,
        }
    }

    pub fn is_cen(self) -> bool {
        matches!(self, Family::MlpCen | Family::LstmCen)
    }

    pub fn is_neural(self) -> bool {
        self.required_context().is_some()
    }

    pub fn is_gradient_trained(self) -> bool {
        !matches!(self, Family::Cox | Family::Aalen)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ModelError::InvalidSpec(format!("unknown family {s:?}")))
    }
}

mod defaults {
    pub fn hidden() -> usize {
        64
    }
    pub fn dict_size() -> usize {
        16
    }
    pub fn l2() -> f64 {
        1e-4
    }
    pub fn epochs() -> usize {
        200
    }
    pub fn patience() -> usize {
        10
    }
}

/// Family plus hyperparameters. Fields irrelevant to a family are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default = "defaults::hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "defaults::hidden")]
    pub lstm_hidden: usize,
    /// Dictionary size `K` (CEN families).
    #[serde(default = "defaults::dict_size")]
    pub dict_size: usize,
    /// Pairwise potentials; unset means off for `crf`, on for neural families.
    #[serde(default)]
    pub pairwise: Option<bool>,
    /// L2 strength, applied as weight decay.
    #[serde(default = "defaults::l2")]
    pub l2: f64,
    #[serde(default)]
    pub optimizer: SgdConfig,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 never stops
    /// early.
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        ModelSpec {
            family,
            mlp_hidden: defaults::hidden(),
            lstm_hidden: defaults::hidden(),
            dict_size: defaults::dict_size(),
            pairwise: None,
            l2: defaults::l2(),
            optimizer: SgdConfig::default(),
            epochs: defaults::epochs(),
            patience: defaults::patience(),
            seed: 0,
        }
    }

    pub fn pairwise_enabled(&self) -> bool {
        self.family.is_gradient_trained() && self.pairwise.unwrap_or(self.family.is_neural())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidSpec(msg.to_owned()));
        if self.family.is_neural() && (self.mlp_hidden == 0 || self.lstm_hidden == 0) {
            return bad("hidden sizes must be >= 1");
        }
        if self.family.is_cen() && self.dict_size == 0 {
            return bad("dict_size must be >= 1");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be finite and >= 0");
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return bad("optimizer.lr must be > 0");
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return bad("optimizer.momentum must be in [0, 1)");
        }
        if o.batch_size == 0 {
            return bad("optimizer.batch_size must be >= 1");
        }
        if o.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return bad("optimizer.clip_norm must be > 0");
        }
        if self.family.is_gradient_trained() && self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        Ok(())
    }
}

/// What happened during `fit`. Contains no timestamps so that artifacts are
/// reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    /// Mean training NLL before the first update.
    pub initial_train_loss: Option<f64>,
    /// Mean training NLL of the returned parameters.
    pub final_train_loss: Option<f64>,
    pub best_valid_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationScope {
    /// The same weights for every patient.
    Global,
    Patient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub set: ExplanationSet,
    /// Per-interval attention over the dictionary (CEN families only).
    pub attention: Option<Vec<Vec<f64>>>,
    pub scope: ExplanationScope,
}

/// Anything that yields a survival curve on a grid, e.g. for metrics.
pub trait SurvivalModel {
    fn grid(&self) -> &TimeGrid;
    fn predict_survival(&self, record: &PatientRecord) -> Result<Vec<f64>, ModelError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub spec: ModelSpec,
    pub grid: TimeGrid,
    pub attribute_names: Vec<String>,
    pub context_names: Vec<String>,
    pub context_kind: ContextKind,
    pub params: ParamStore,
    pub meta: TrainingMeta,
}

pub(crate) mod names {
    pub const CRF_THETA: &str = "crf.theta";
    pub const PAIRWISE: &str = "pairwise";
    pub const MLP_W: &str = "mlp.w";
    pub const MLP_B: &str = "mlp.b";
    pub const ENC_LSTM: [&str; 3] = ["enc_lstm.w_x", "enc_lstm.w_h", "enc_lstm.b"];
    pub const OUT_LSTM: [&str; 3] = ["out_lstm.w_x", "out_lstm.w_h", "out_lstm.b"];
    pub const ATT_W: &str = "att.w";
    pub const DICT: &str = "dict.atoms";
    pub const HEAD_W: &str = "head.w";
    pub const HEAD_B: &str = "head.b";
    pub const COX_BETA: &str = "cox.beta";
    pub const COX_TIMES: &str = "cox.event_times";
    pub const COX_HAZARD: &str = "cox.base_hazard";
    pub const COX_CENTER: &str = "cox.center";
    pub const AALEN_TIMES: &str = "aalen.event_times";
    pub const AALEN_INC: &str = "aalen.increments";
}

fn check_compatible(spec: &ModelSpec, d: &Dataset) -> Result<(), ModelError> {
    if let Some(needed) = spec.family.required_context() {
        if d.context_kind != needed {
            return Err(ModelError::IncompatibleContext {
                family: spec.family,
                needed,
                found: d.context_kind,
            });
        }
    }
    Ok(())
}

fn check_same_schema(a: &Dataset, b: &Dataset) -> Result<(), ModelError> {
    if a.grid != b.grid
        || a.attribute_names != b.attribute_names
        || a.context_names != b.context_names
        || a.context_kind != b.context_kind
    {
        return Err(ModelError::DimMismatch(
            "train and valid datasets differ in grid, names or context kind".into(),
        ));
    }
    Ok(())
}

/// Fit `spec` on `train`, early-stopping on `valid` (which may be empty, in
/// which case the training loss is monitored).
pub fn fit(spec: &ModelSpec, train: &Dataset, valid: &Dataset) -> Result<ModelArtifact, ModelError> {
    spec.validate()?;
    for d in [train, valid] {
        if let Some(v) = validate_dataset(d).into_iter().next() {
            return Err(ModelError::InvalidData(v.to_string()));
        }
    }
    check_compatible(spec, train)?;
    if !valid.is_empty() {
        check_same_schema(train, valid)?;
    }
    let mut artifact = ModelArtifact {
        spec: spec.clone(),
        grid: train.grid.clone(),
        attribute_names: train.attribute_names.clone(),
        context_names: train.context_names.clone(),
        context_kind: train.context_kind,
        params: ParamStore::new(),
        meta: TrainingMeta::default(),
    };
    match spec.family {
        Family::Cox => {
            let f = cox_fit(train)?;
            if f.separation_detected {
                artifact.meta.notes.push(format!(
                    "separation detected: coefficient norm capped at {SEPARATION_NORM}"
                ));
            }
            artifact.meta.notes.push(format!("newton iterations: {}", f.iterations));
            let p = &mut artifact.params;
            p.insert(names::COX_BETA, Tensor::vector(f.beta))?;
            p.insert(names::COX_TIMES, Tensor::vector(f.event_times))?;
            p.insert(names::COX_HAZARD, Tensor::vector(f.hazard))?;
            p.insert(names::COX_CENTER, Tensor::vector(vec![f.center]))?;
        }
        Family::Aalen => {
            let f = aalen_fit(train)?;
            let n = f.event_times.len();
            let d = train.d_x();
            let flat: Vec<f64> = f.increments.into_iter().flatten().collect();
            let p = &mut artifact.params;
            p.insert(names::AALEN_TIMES, Tensor::vector(f.event_times))?;
            p.insert(names::AALEN_INC, Tensor::matrix(n, d, flat)?)?;
        }
        _ => {
            let (params, meta) = train::train(spec, train, valid)?;
            artifact.params = params;
            artifact.meta = meta;
        }
    }
    Ok(artifact)
}

impl ModelArtifact {
    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn d_x(&self) -> usize {
        self.attribute_names.len()
    }

    fn check_record(&self, r: &PatientRecord) -> Result<(), ModelError> {
        if r.attributes.len() != self.d_x() {
            return Err(ModelError::DimMismatch(format!(
                "record {} has {} attributes, model expects {}",
                r.id,
                r.attributes.len(),
                self.d_x()
            )));
        }
        if self.spec.family.is_neural() {
            let ok = match (&r.context, self.context_kind) {
                (crate::survival::Context::Static(c), ContextKind::Static) => {
                    c.len() == self.context_names.len()
                }
                (crate::survival::Context::Series(rows), ContextKind::Series) => {
                    !rows.is_empty() && rows.iter().all(|s| s.len() == self.context_names.len())
                }
                _ => false,
            };
            if !ok {
                return Err(ModelError::DimMismatch(format!(
                    "record {} context does not match the model's {} context of width {}",
                    r.id,
                    self.context_kind,
                    self.context_names.len()
                )));
            }
        }
        Ok(())
    }

    fn vec_param(&self, name: &str) -> Result<&[f64], ModelError> {
        Ok(self.params.get(name)?.data())
    }

    fn cox(&self) -> Result<CoxFit, ModelError> {
        Ok(CoxFit {
            beta: self.vec_param(names::COX_BETA)?.to_vec(),
            event_times: self.vec_param(names::COX_TIMES)?.to_vec(),
            hazard: self.vec_param(names::COX_HAZARD)?.to_vec(),
            center: self.vec_param(names::COX_CENTER)?[0],
            iterations: 0,
            separation_detected: false,
        })
    }

    fn aalen(&self) -> Result<AalenFit, ModelError> {
        let inc = self.params.get(names::AALEN_INC)?;
        Ok(AalenFit {
            event_times: self.vec_param(names::AALEN_TIMES)?.to_vec(),
            increments: (0..inc.rows()).map(|i| inc.row(i).to_vec()).collect(),
        })
    }

    /// `m + 1` values `S[0] = 1 ≥ S[1] ≥ … ≥ S[m]` at the grid boundaries.
    pub fn predict_survival(&self, record: &PatientRecord) -> Result<Vec<f64>, ModelError> {
        self.check_record(record)?;
        let x = &record.attributes;
        let b = self.grid.boundaries();
        match self.spec.family {
            Family::Cox => Ok(self.cox()?.survival_on(&x[1..], b)),
            Family::Aalen => Ok(self.aalen()?.survival_on(x, b)),
            _ => Ok(net::Net::new(&self.spec, &self.params, self.m())?
                .chain(record)?
                .distribution()
                .survival()),
        }
    }

    /// Per-interval linear weights over the attributes.
    pub fn explain(&self, record: &PatientRecord) -> Result<Explanation, ModelError> {
        self.check_record(record)?;
        let m = self.m();
        match self.spec.family {
            Family::MlpCrf | Family::LstmCrf => {
                Err(ModelError::ExplanationUnavailable(self.spec.family))
            }
            Family::Cox => {
                let mut theta = vec![0.0];
                theta.extend(self.cox()?.beta);
                Ok(Explanation {
                    set: ExplanationSet {
                        thetas: vec![theta; m],
                        pairwise: PairwisePotentials::DISABLED,
                    },
                    attention: None,
                    scope: ExplanationScope::Global,
                })
            }
            Family::Aalen => Ok(Explanation {
                set: ExplanationSet {
                    thetas: self.aalen()?.interval_increments(&self.grid, self.d_x()),
                    pairwise: PairwisePotentials::DISABLED,
                },
                attention: None,
                scope: ExplanationScope::Global,
            }),
            Family::Crf => {
                let net = net::Net::new(&self.spec, &self.params, m)?;
                Ok(Explanation {
                    set: net.crf_explanation()?,
                    attention: None,
                    scope: ExplanationScope::Global,
                })
            }
            Family::MlpCen | Family::LstmCen => {
                let net = net::Net::new(&self.spec, &self.params, m)?;
                let out = net.cen(&record.context)?;
                Ok(Explanation {
                    set: ExplanationSet {
                        thetas: out.thetas,
                        pairwise: net.pairwise()?,
                    },
                    attention: Some(out.alphas),
                    scope: ExplanationScope::Patient,
                })
            }
        }
    }

    /// The learned atoms (`K × d_x`) of a CEN artifact.
    pub fn dictionary(&self) -> Option<&Tensor> {
        if self.spec.family.is_cen() {
            self.params.get(names::DICT).ok()
        } else {
            None
        }
    }

    pub fn predicted_event_time(&self, record: &PatientRecord) -> Result<f64, ModelError> {
        let s = self.predict_survival(record)?;
        Ok(crate::likelihood::predicted_event_time(&s, &self.grid))
    }
}

impl SurvivalModel for ModelArtifact {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn predict_survival(&self, record: &PatientRecord) -> Result<Vec<f64>, ModelError> {
        ModelArtifact::predict_survival(self, record)
    }
}
