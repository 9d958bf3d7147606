//! Spectral-temporal graph network for multi-agent trajectory prediction.
//!
//! Agents are nodes of two graphs: an inverse-distance graph per observed
//! timestep and an environment graph read from a context image. Histories
//! are filtered in the eigenbasis of each graph's normalized Laplacian,
//! passed through spatio-temporal attention, and decoded by a residual
//! temporal CNN into bivariate Gaussians over future positions.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod attention;
pub mod data;
pub mod decoder;
pub mod diagnostics;
pub mod error;
pub mod graphs;
pub mod model;
pub mod parallel;
pub mod params;
pub mod scene;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Ablation, EnvGrad, Model, ModelConfig, PreparedScene};
pub use parallel::Execution;
pub use scene::{Affine, ContextImage, SceneWindow};
pub use tensor::{Tape, Tensor, Var};
