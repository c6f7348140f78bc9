//! Heterogeneous-graph transformation kernels.
//!
//! This crate implements the algorithmic half of the `mpf` toolkit:
//! row-stochastic sparse linear algebra, soft adjacency selection, explicit
//! (graph-materializing) and implicit (feature-propagating) meta-path
//! transformations, reference GNN forwards, reverse-mode differentiation,
//! Adam training with optional subgraph mini-batching, meta-path
//! interpretation, and seeded synthetic graph generation.
//!
//! The crate is `no_std` (allocation required). Every public operation is a
//! pure function of immutable inputs with a fixed reduction order, so results
//! are bit-deterministic and values can be shared freely across threads.
//! File formats, the CLI, timing, and allocation accounting live in the
//! companion `mpf` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod graph;
pub mod interpret;
pub mod layers;
pub mod model;
pub(crate) mod num;
pub mod sparse;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use sparse::{DenseMatrix, SparseMatrix};
