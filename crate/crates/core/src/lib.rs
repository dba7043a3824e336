//! Image-based visual servoing on dense patch descriptors, with a planar-target
//! camera simulator and a benchmark harness.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod control;
pub mod descriptors;
pub mod geometry;
pub mod matching;
pub mod perturb;
pub mod simenv;
