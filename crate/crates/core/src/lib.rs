//! Signed bipartite graph recommender: interest embeddings learned on liked
//! interactions, disinterest embeddings learned on disliked ones, and a
//! disinterest-score filter at ranking time.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod rank;
pub mod real;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use graph::{DistortedGraph, Sign, SignedBipartiteGraph, SignedEdge};
pub use matrix::Matrix;
pub use model::{AttentionMode, ModelParams, ParamTensor};
pub use real::Real;
pub use train::{HyperParams, TrainOptions, Variant};
