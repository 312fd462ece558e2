//! Detailing of sparse, coarsely posed, imprecisely timed blocking poses into
//! dense skeletal motion with diffusion sampling and tolerance-weighted
//! constraint refinement, plus the competing strategies, a synthetic
//! benchmark and its metrics.
//!
//! Everything numeric is generic over [`num::Real`] (`f32` or `f64`). The
//! trained network and its checkpoints are `f64` only.

// `!(x > 0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod detailing;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod motion;
pub mod num;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
pub use num::Real;

pub type Motion64 = motion::Motion<f64>;
pub type Motion32 = motion::Motion<f32>;
pub type BlockingSet64 = motion::BlockingSet<f64>;
pub type BlockingSet32 = motion::BlockingSet<f32>;
pub type Skeleton64 = skeleton::SkeletonSpec<f64>;
pub type Skeleton32 = skeleton::SkeletonSpec<f32>;
pub type Schedule64 = diffusion::NoiseSchedule<f64>;
pub type Schedule32 = diffusion::NoiseSchedule<f32>;
