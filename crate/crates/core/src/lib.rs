//! Zero-shot classification with coupled dictionaries.
//!
//! Visual features `X` and semantic attributes `Z` of seen classes are tied
//! through one shared sparse code per sample: `X ≈ D_x·A`, `Z ≈ D_z·A`, while
//! `D_z` also sparsely represents the unseen-class prototypes `Z′ ≈ D_z·B`.
//! At test time an unseen image is sparse-coded against `D_x`, decoded through
//! `D_z`, and labeled either by its nearest prototype or by label propagation
//! over a kNN graph of all predictions and prototypes.
//!
//! Module map:
//! - [`sparse_coding`]: LASSO solvers and a coordinate-descent oracle.
//! - [`dictionary`]: coupled dictionary training.
//! - [`attributes`]: attribute-agnostic and entropy-regularized attribute prediction.
//! - [`labels`]: nearest-prototype assignment, kNN graphs, label propagation.
//! - [`evaluation`]: hit@K, experiment orchestration, sample-complexity bound.
//! - [`io`]: matrix container, manifests, config files, synthetic data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attributes;
pub mod cli;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod labels;
pub mod linalg;
pub mod prox;
pub mod sparse_coding;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Vector};
