//! Sound source localization on a synthetic audio-visual world.
//!
//! The crate carries its own reverse-mode differentiation engine and builds
//! two learning schemes on top of it: negative-free predictive learning with
//! an iterative predictive coding module ([`sspl`], [`pcm`]) and
//! semantic-aware contrastive learning with pseudo-mask feature compaction
//! and false-negative elimination ([`sacl`]). Numeric code is generic over
//! [`Scalar`]; the aliases below fix it to `f64`, the precision used for
//! training and gradient checks.

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod harness;
pub mod imaging;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod pcm;
pub mod rng;
pub mod sacl;
pub mod scalar;
pub mod segmentation;
pub mod sspl;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type ParamStore64 = params::ParamStore<f64>;
