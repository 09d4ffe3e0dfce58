//! Graph learning with information flow paths.
//!
//! Node features travel along fixed-length biased random walks and are
//! aggregated at every node they pass. Each network layer combines a node's
//! own state with the mean of the flows it conserved.

pub mod dataset;
pub mod error;
pub mod graph;
pub mod influence;
pub mod matrix;
pub mod model;
pub mod propagate;
pub mod walk;

pub use error::{FlowError, Result};
