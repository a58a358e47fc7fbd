//! Sparse binary kernel logistic regression.
//!
//! The dual of the sparsity-regularized KLR problem is solved exactly by an
//! SMO decomposition method with second-order working-set selection. Data
//! points whose dual variable stays at the lower bound drop out of the
//! model, so the trained predictor only keeps a subset of the training set.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dual;
pub mod error;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod subproblem;
pub mod synth;
pub mod tuning;
pub mod wss;

pub use data::{Dataset, LabelColumn, ScalingParams};
pub use dual::{DualState, Hyperparams};
pub use error::{Result, SklrError};
pub use kernel::{KernelCache, KernelSpec};
pub use model::TrainedModel;
pub use solver::{smo_train, SolveReport, SolverOptions, Termination};
pub use wss::WssKind;
