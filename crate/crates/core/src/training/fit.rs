//! Mini-batch SGD over scenes and read-only evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_on_tape, LossConfig, LossValues};
use super::metrics::{scene_metrics, MetricsReport};
use super::sampling::sample_hypotheses;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedScene};
use crate::parallel::{map_range, map_slice, Execution};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Rescale the averaged batch gradient to at most this norm.
    pub grad_clip: Option<f64>,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 250,
            batch_size: 8,
            seed: 0,
            loss: LossConfig::default(),
            grad_clip: Some(5.0),
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be a finite value >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.loss.validate()
    }
}

/// Epoch-mean losses over the scenes seen in that epoch, measured before
/// each batch's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub prob: f64,
    pub dist: f64,
    pub total: f64,
}

/// Losses and parameter gradients (store order) for one scene.
pub fn scene_gradients(model: &Model, scene: &PreparedScene, loss: &LossConfig) -> Result<(LossValues, Vec<Tensor>)> {
    let target = scene
        .target
        .as_ref()
        .ok_or_else(|| Error::data(format!("scene {} has no future to train on", scene.scene.scene_id)))?;
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let raw = model.forward(&mut tape, &vars, scene)?;
    let l = loss_on_tape(&mut tape, raw, target, loss)?;
    let grads = tape.backward(l.total)?;
    let values = LossValues {
        prob: tape.value(l.prob).item(),
        dist: tape.value(l.dist).item(),
        total: tape.value(l.total).item(),
    };
    Ok((values, model.params.collect_grads(&vars, &grads)))
}

/// Trains `model` in place. `on_epoch` sees each epoch's log as it completes.
///
/// Scenes are visited in a seeded shuffled order; each batch's per-scene
/// gradients are computed independently (in parallel when enabled), summed
/// in batch order and averaged, so results do not depend on scheduling.
pub fn fit(
    model: &mut Model,
    train: &[PreparedScene],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::data("training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossValues::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &*model;
            let results = map_slice(cfg.exec, batch, |&i| scene_gradients(model_ref, &train[i], &cfg.loss));
            model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for (r, &i) in results.into_iter().zip(batch) {
                let (v, g) = r?;
                if !v.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {b} (scene {})",
                        train[i].scene.scene_id
                    )));
                }
                sum.prob += v.prob;
                sum.dist += v.dist;
                sum.total += v.total;
                model.params.accumulate(&g, scale)?;
            }
            let norm = model.params.grad_norm();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            let lr = match cfg.grad_clip {
                Some(c) if norm > c => cfg.lr * c / norm,
                _ => cfg.lr,
            };
            model.params.sgd_step(lr)?;
        }
        let n = train.len() as f64;
        let entry = EpochLog {
            epoch,
            prob: sum.prob / n,
            dist: sum.dist / n,
            total: sum.total / n,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Seed for the hypotheses of scene `index` under a run seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Best-of-K metrics over `scenes` for every `k` in `k_list`.
///
/// The largest `k` is drawn once per scene and smaller `k` use its prefix,
/// so the reported values are non-increasing in `k`.
pub fn evaluate(
    model: &Model,
    scenes: &[PreparedScene],
    k_list: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<MetricsReport> {
    let k_max = *k_list
        .iter()
        .max()
        .ok_or_else(|| Error::config("k list is empty"))?;
    if k_list.contains(&0) {
        return Err(Error::config("K values must be at least 1"));
    }
    let per_scene = map_range(exec, scenes.len(), |i| {
        let s = &scenes[i];
        let target = s
            .scene
            .future()
            .ok_or_else(|| Error::data(format!("scene {} has no future to evaluate", s.scene.scene_id)))?;
        let track = model.predict(s)?;
        let samples = sample_hypotheses(&track, k_max, scene_seed(seed, i))?;
        scene_metrics(&s.scene.scene_id, &samples, target, k_list)
    });
    let scenes = per_scene.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_scenes(k_list, scenes))
}
