//! Unsupervised graph mixture of residual experts.
//!
//! A learned edge gate splits the graph into a cohesive and a dispersive
//! view. Each view feeds a sparse top-K bank of parameter-free filter
//! experts (the backbone) whose output is corrected by a dense pool of
//! heterogeneous message-passing experts. A node-wise coefficient fuses both
//! channels into the final embedding. Training alternates between a
//! cross-filter reconstruction loss for the edge gate and a masked feature
//! reconstruction loss (plus load-balancing and CKA diversity terms) for
//! everything else.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod filters;
pub mod fusion;
pub mod graph;
pub mod io;
pub mod loss;
pub mod moe;
pub mod sparse;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};

/// Dense row-major matrix used throughout the crate.
pub type Matrix = ndarray::Array2<f64>;

/// Deterministic generator used by every seeded component.
pub type SessionRng = rand_chacha::ChaCha8Rng;
