//! Exact simulation of the herds process on the d-regular tree and of the
//! contact process on a dynamic random regular graph, with Monte Carlo
//! estimators for growth indices, critical values and derivatives.

// Comparisons are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod seeding;
pub mod stats;
pub mod sum_tree;
pub mod tree_shapes;
pub mod herds;
pub mod multitype;
pub mod graph;
pub mod contact;
pub mod exploration;
pub mod coupling;
pub mod estimators;

pub use error::{Error, Result};
