//! Losses, optimisation, hypothesis sampling, metrics and the training and
//! evaluation loops.

pub mod fit;
pub mod loss;
pub mod metrics;
pub mod sampling;

pub use fit::{evaluate, fit, scene_gradients, EpochLog, TrainConfig};
pub use loss::{gaussian_nll, loss_dist, loss_on_tape, loss_prob, loss_total, LossConfig, LossValues, LossVars};
pub use metrics::{min_ade, min_fde, per_agent_min_errors, scene_metrics, KMetrics, MetricsReport, SceneMetrics};
pub use sampling::{mean_hypothesis, sample_hypotheses};

use crate::error::Result;
use crate::params::ParamStore;

/// `p <- p - lr * g` over every parameter; errors if any gradient is missing.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    params.sgd_step(lr)
}
