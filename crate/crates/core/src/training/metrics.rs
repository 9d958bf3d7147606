//! Best-of-K displacement errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-agent best-of-K errors: `(ade, fde)` for each agent.
///
/// Uses the first `k` hypotheses of `samples: [K_total, T_f, N, 2]`.
pub fn per_agent_min_errors(samples: &Tensor, target: &Tensor, k: usize) -> Result<Vec<(f64, f64)>> {
    let s = samples.shape();
    if k == 0 {
        return Err(Error::contract("K must be at least 1"));
    }
    if s.len() != 4 || s[3] != 2 || s[1..] != *target.shape() {
        return Err(Error::Dimension {
            op: "min_ade",
            lhs: s.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if k > s[0] {
        return Err(Error::contract(format!("asked for K = {k} but only {} samples", s[0])));
    }
    let (t_f, n) = (s[1], s[2]);
    let sd = samples.data();
    let td = target.data();
    let mut out = vec![(f64::INFINITY, f64::INFINITY); n];
    for h in 0..k {
        for (i, best) in out.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut last = 0.0;
            for t in 0..t_f {
                let o = (t * n + i) * 2;
                let so = h * t_f * n * 2 + o;
                let e = (sd[so] - td[o]).hypot(sd[so + 1] - td[o + 1]);
                sum += e;
                last = e;
            }
            best.0 = best.0.min(sum / t_f as f64);
            best.1 = best.1.min(last);
        }
    }
    Ok(out)
}

/// Agent-averaged minADE over the first `k` hypotheses.
pub fn min_ade(samples: &Tensor, target: &Tensor, k: usize) -> Result<f64> {
    let e = per_agent_min_errors(samples, target, k)?;
    Ok(e.iter().map(|x| x.0).sum::<f64>() / e.len() as f64)
}

/// Agent-averaged minFDE over the first `k` hypotheses.
pub fn min_fde(samples: &Tensor, target: &Tensor, k: usize) -> Result<f64> {
    let e = per_agent_min_errors(samples, target, k)?;
    Ok(e.iter().map(|x| x.1).sum::<f64>() / e.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub num_agents: usize,
    pub by_k: Vec<KMetrics>,
}

/// Per-scene tables and an aggregate weighted by agent count, so every
/// agent in the split counts once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k_list: Vec<usize>,
    pub aggregate: Vec<KMetrics>,
    pub scenes: Vec<SceneMetrics>,
}

impl MetricsReport {
    pub fn from_scenes(k_list: &[usize], scenes: Vec<SceneMetrics>) -> Self {
        let agents: usize = scenes.iter().map(|s| s.num_agents).sum();
        let aggregate = k_list
            .iter()
            .enumerate()
            .map(|(ki, &k)| {
                let (mut ade, mut fde) = (0.0, 0.0);
                for s in &scenes {
                    ade += s.by_k[ki].min_ade * s.num_agents as f64;
                    fde += s.by_k[ki].min_fde * s.num_agents as f64;
                }
                let w = agents.max(1) as f64;
                KMetrics {
                    k,
                    min_ade: ade / w,
                    min_fde: fde / w,
                }
            })
            .collect();
        Self {
            k_list: k_list.to_vec(),
            aggregate,
            scenes,
        }
    }

    pub fn aggregate_for(&self, k: usize) -> Option<KMetrics> {
        self.aggregate.iter().copied().find(|m| m.k == k)
    }
}

/// Metrics of one scene for every `k` in `k_list`.
pub fn scene_metrics(
    scene_id: &str,
    samples: &Tensor,
    target: &Tensor,
    k_list: &[usize],
) -> Result<SceneMetrics> {
    let by_k = k_list
        .iter()
        .map(|&k| {
            let e = per_agent_min_errors(samples, target, k)?;
            let n = e.len() as f64;
            Ok(KMetrics {
                k,
                min_ade: e.iter().map(|x| x.0).sum::<f64>() / n,
                min_fde: e.iter().map(|x| x.1).sum::<f64>() / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneMetrics {
        scene_id: scene_id.to_string(),
        num_agents: target.shape()[1],
        by_k,
    })
}
