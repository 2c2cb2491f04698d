//! Core-elements: deterministic element-wise subset selection for large
//! least-squares problems.
//!
//! Each column of the design keeps its `r` largest-magnitude entries, giving
//! a sparse sketch `X*`, and the coefficients are estimated by
//! `(X*^T X)^{-1} X*^T y`. The crate also provides a median-of-means variant
//! for contaminated data, row-subsampling baselines, bound calculators, a
//! synthetic data generator and an experiment runner.

pub mod baselines;
pub mod bench;
pub mod datagen;
pub mod estimators;
pub mod matrix;
pub mod mom;
pub mod selection;
pub mod theory;

pub use estimators::{core_estimate, ols_full, CoefficientVector};
pub use matrix::{DesignMatrix, SparseColumnMatrix};
pub use selection::{select_core_elements, SketchBudget};
