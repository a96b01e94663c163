//! Unsupervised joint selection of connected feature subnetworks and
//! representative instances from network-instance data.
//!
//! A dataset is an `n × m` matrix `X` whose rows are instances and whose
//! columns are the nodes of a single graph shared by all instances. The
//! solver learns a nonnegative feature selector `P` (`m × k`) and instance
//! selector `Q` (`k × n`) by minimizing a robust self-representative
//! reconstruction `||X − XP·QX||₂,₁` with row-sparsity penalties on `P` and
//! `Qᵀ`, a graph-smoothness penalty `Tr(PᵀLP)`, and an orthogonality
//! constraint on `QX`. Feature importance is the row norm of `P`; instance
//! importance is the column norm of `Q`.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod numerics;
pub mod selection;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{Laplacian, NetworkStructure};
pub use numerics::{DiagWeights, Matrix};
pub use solver::{fit, FitReport, HyperParams, SolverState};
