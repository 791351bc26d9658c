//! Generalizable implicit motion modeling: continuous-time bilateral flow
//! prediction from bidirectional flows, and frame interpolation built on it.

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flow;
pub mod losses;
pub mod model;
pub mod normalization;
pub mod params;
pub mod synth;
pub mod synthesis;
pub mod tensor;
pub mod train;
pub mod warping;

pub use error::{GimmError, Result};
pub use flow::{FlowField, FrameImage};
pub use normalization::{CoordGrid, NormalizedFlow};
pub use synth::{Motion, MotionSample, MotionSpec};
pub use tensor::Tensor;
