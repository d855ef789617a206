// NaN-rejecting checks read as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sparsify;
pub mod synth;
pub mod train;
