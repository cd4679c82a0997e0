//! Tensor relational algebra engine: logical operators, a physical
//! multi-site algebra, a compiler and rule-based optimizer between them,
//! a transfer cost model and a deterministic parallel runtime.

pub mod compiler;
pub mod cost;
pub mod error;
pub mod format;
pub mod ia;
pub mod kernels;
pub mod keyexpr;
pub mod model;
pub mod ops;
pub mod plan;
pub mod rewrite;
pub mod rng;
pub mod runtime;
pub mod tra;
pub mod workloads;

pub use error::{Error, Result};
pub use kernels::KernelRegistry;
pub use model::{ArrayType, DenseArray, Key, TensorRelation};
