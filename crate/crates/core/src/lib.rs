//! Consensus labeling from a classifier ensemble and a cluster ensemble.
//!
//! Averaged class probabilities are combined with a co-association similarity
//! matrix by minimizing a Bregman-divergence objective through alternating
//! closed-form updates of split left/right copies.

pub mod cli;
pub mod datasets;
pub mod diagnostics;
pub mod divergences;
pub mod ensemble;
pub mod error;
pub mod solver;

pub use divergences::{Divergence, DivergenceKind};
pub use ensemble::{
    average_class_probabilities, coassociation_similarity, sparsify, Adjacency, PartitionSet,
    ProbMatrix, SimilarityMatrix,
};
pub use error::{Error, Result};
pub use solver::{Labeling, Solver, SolverConfig, SolverState};
