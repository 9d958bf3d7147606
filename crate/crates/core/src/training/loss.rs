//! Bivariate Gaussian negative log-likelihood and mean-distance losses.
//!
//! Both losses come in two forms: on a tape, taking the raw decoder output
//! `[T_f, N, 5]`, and as plain `f64` over a [`GaussianTrack`]. The tape form
//! works from the pre-activation `c` of `rho = tanh(c)` and uses
//! `ln(1 - rho^2) = -2 ln cosh(c)`, `1 / (1 - rho^2) = cosh(c)^2`, which stay
//! finite when `tanh` saturates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::decoder::GaussianTrack;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Weight on the distance term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda >= 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)))
        }
    }
}

/// The three loss values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub prob: f64,
    pub dist: f64,
    pub total: f64,
}

fn check_target(target: &Tensor, t_f: usize, n: usize) -> Result<()> {
    if target.shape() != [t_f, n, 2] {
        return Err(Error::Dimension {
            op: "loss",
            lhs: vec![t_f, n, 2],
            rhs: target.shape().to_vec(),
        });
    }
    if let Some(i) = target.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::data(format!(
            "non-finite target at step {}, agent {}",
            i / 2 / n,
            (i / 2) % n
        )));
    }
    Ok(())
}

/// Negative log-density of `(x, y)` under one Gaussian `[mu_x, mu_y, s_x, s_y, rho]`.
pub fn gaussian_nll(g: [f64; 5], x: f64, y: f64) -> f64 {
    let [mx, my, sx, sy, rho] = g;
    let dx = (x - mx) / sx;
    let dy = (y - my) / sy;
    let om = 1.0 - rho * rho;
    let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
    (2.0 * PI).ln() + sx.ln() + sy.ln() + 0.5 * om.ln() + z / (2.0 * om)
}

/// Sum over steps of the agent-averaged negative log-likelihood.
pub fn loss_prob(track: &GaussianTrack, target: &Tensor) -> Result<f64> {
    let (t_f, n) = (track.t_f(), track.num_agents());
    check_target(target, t_f, n)?;
    let mut total = 0.0;
    for t in 0..t_f {
        let mut step = 0.0;
        for i in 0..n {
            step += gaussian_nll(track.at(t, i), target.get(&[t, i, 0]), target.get(&[t, i, 1]));
        }
        total += step / n as f64;
    }
    Ok(total)
}

/// `(1 / T_f) * mean over agents of sum_t |target - mu|^2`.
pub fn loss_dist(track: &GaussianTrack, target: &Tensor) -> Result<f64> {
    let (t_f, n) = (track.t_f(), track.num_agents());
    check_target(target, t_f, n)?;
    let mut total = 0.0;
    for t in 0..t_f {
        for i in 0..n {
            let [mx, my] = track.mean(t, i);
            let dx = target.get(&[t, i, 0]) - mx;
            let dy = target.get(&[t, i, 1]) - my;
            total += dx * dx + dy * dy;
        }
    }
    Ok(total / (t_f * n) as f64)
}

/// `L_prob + lambda * L_dist`.
pub fn loss_total(track: &GaussianTrack, target: &Tensor, cfg: &LossConfig) -> Result<LossValues> {
    cfg.validate()?;
    let prob = loss_prob(track, target)?;
    let dist = loss_dist(track, target)?;
    Ok(LossValues {
        prob,
        dist,
        total: prob + cfg.lambda * dist,
    })
}

/// Tape-recorded losses from raw decoder output `[T_f, N, 5]`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub prob: Var,
    pub dist: Var,
    pub total: Var,
}

pub fn loss_on_tape(tape: &mut Tape, raw: Var, target: &Tensor, cfg: &LossConfig) -> Result<LossVars> {
    cfg.validate()?;
    let rs = tape.shape(raw).to_vec();
    if rs.len() != 3 || rs[2] != 5 {
        return Err(Error::contract(format!("raw output must be [T_f, N, 5], got {rs:?}")));
    }
    let (t_f, n) = (rs[0], rs[1]);
    check_target(target, t_f, n)?;
    let tgt = tape.constant(target.clone());
    let mu = tape.slice(raw, 2, 0, 2)?;
    let log_sigma = tape.slice(raw, 2, 2, 2)?;
    let c = tape.slice(raw, 2, 4, 1)?;

    let d = tape.sub(tgt, mu)?;
    let inv_sigma = tape.neg(log_sigma);
    let inv_sigma = tape.exp(inv_sigma);
    let dn = tape.mul(d, inv_sigma)?;
    let dx = tape.slice(dn, 2, 0, 1)?;
    let dy = tape.slice(dn, 2, 1, 1)?;
    let rho = tape.tanh(c);
    let dx2 = tape.mul(dx, dx)?;
    let dy2 = tape.mul(dy, dy)?;
    let dxy = tape.mul(dx, dy)?;
    let cross = tape.mul(rho, dxy)?;
    let cross = tape.scale(cross, -2.0);
    let z = tape.add(dx2, dy2)?;
    let z = tape.add(z, cross)?;
    let lc = tape.log_cosh(c);
    let cosh2 = tape.scale(lc, 2.0);
    let cosh2 = tape.exp(cosh2);
    let quad = tape.mul(z, cosh2)?;
    let quad = tape.scale(quad, 0.5);

    let sum_log_sigma = tape.sum(log_sigma);
    let sum_lc = tape.sum(lc);
    let sum_quad = tape.sum(quad);
    let nll = tape.sub(sum_log_sigma, sum_lc)?;
    let nll = tape.add(nll, sum_quad)?;
    let nll = tape.add_scalar(nll, (2.0 * PI).ln() * (t_f * n) as f64);
    let prob = tape.scale(nll, 1.0 / n as f64);

    let d2 = tape.mul(d, d)?;
    let d2 = tape.sum(d2);
    let dist = tape.scale(d2, 1.0 / (t_f * n) as f64);
    let weighted = tape.scale(dist, cfg.lambda);
    let total = tape.add(prob, weighted)?;
    Ok(LossVars { prob, dist, total })
}
