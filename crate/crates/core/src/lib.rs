//! Keypoint-driven refinement of a parametric hand mesh.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod camera;
pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod observations;
pub mod pipeline;
pub mod rotation;
pub mod synth;
pub mod tailor;

pub use error::{Error, Result};
