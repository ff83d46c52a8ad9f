//! Discrete-time survival prediction with contextual explanation networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`survival`]: time grids, labels, outcomes, patient records, datasets.
//! - [`likelihood`]: the exact structured likelihood over the `m + 1` valid
//!   label sequences, its gradients, survival curves and an enumeration oracle.
//! - [`kernel`]: dense/LSTM/attention layers with pullbacks, parameter store,
//!   SGD.
//! - [`models`]: Cox, Aalen, plain CRF, neural CRFs and CENs behind one
//!   interface.
//! - [`pipelines`]: SUPPORT2-style tables, PhysioNet-style ICU series and
//!   synthetic generators.
//! - [`metrics`]: temporal quantiles, Acc@K, RAE and k-fold evaluation.

pub mod kernel;
pub mod likelihood;
pub mod metrics;
pub mod models;
pub mod pipelines;
pub mod survival;
