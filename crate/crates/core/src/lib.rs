//! Linear message passing on graphs.
//!
//! Dense reference implementations of spectral graph filters, over-smoothing
//! and rank-collapse diagnostics, Kronecker-structured message-passing
//! operators, multi-relational splits, localized MIMO graph convolutions,
//! and PPRGNN with an analytic backward pass.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod lmgc;
pub mod matrix;
pub mod metrics;
pub mod mrs;
pub mod ops;
pub mod optim;
pub mod pprgnn;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::{AggKind, AggregationMatrix, Graph, LaplacianKind};
pub use matrix::DenseMatrix;
pub use spectral::{FilterSpec, Spectrum};
