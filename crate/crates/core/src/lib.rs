//! Heterogeneous continual spatio-temporal graph network for multivariate
//! futures prices.
//!
//! The pipeline learns a cross-sectional graph from each input window by
//! self-attention, extracts features with two spectral spatio-temporal
//! blocks, and trains four task heads (change-point classification, gap
//! regression, moving-average regression, price forecasting) one after the
//! other. Forgetting between tasks is held back by a quadratic consolidation
//! penalty whose per-parameter strengths come from gradients of contrastive
//! mutual-information estimates.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod importance;
pub mod model;
pub mod network;
pub mod panel;
pub mod params;
pub mod pipeline;
pub mod targets;
pub mod task;
pub mod trainer;

#[cfg(test)]
mod gradcheck;

pub use autodiff::{Gradients, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use model::TaskModel;
pub use params::{ImportanceMap, ParamStore};
pub use task::TaskId;
