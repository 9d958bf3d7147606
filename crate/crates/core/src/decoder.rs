//! Residual temporal convolution decoder and the bivariate Gaussian head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// How the unit output and the attention output are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// `Y + Y_st`.
    #[default]
    Add,
    /// `Y` and `Y_st` stacked along time, giving `2 T_h` input steps.
    Concat,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Self::Add),
            "concat" => Ok(Self::Concat),
            _ => Err(Error::config(format!("fusion_mode must be add|concat, got {s:?}"))),
        }
    }
}

/// A residual layer `x + prelu(conv_time(x, w) + b)`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualVars {
    /// `[L, c, c]`.
    pub weight: Var,
    pub bias: Var,
    pub slope: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderVars {
    /// `[L, T_in, T_f]`: convolves along the feature axis with time as channels.
    pub expand_weight: Var,
    /// `[T_f]`.
    pub expand_bias: Var,
    pub residual: Vec<ResidualVars>,
}

/// Combines `Y` and `Y_st` per `mode`. `y_st` may be absent (no attention).
pub fn fuse(tape: &mut Tape, y: Var, y_st: Option<Var>, mode: FusionMode) -> Result<Var> {
    let Some(s) = y_st else { return Ok(y) };
    if tape.shape(y) != tape.shape(s) {
        return Err(Error::Dimension {
            op: "fuse",
            lhs: tape.shape(y).to_vec(),
            rhs: tape.shape(s).to_vec(),
        });
    }
    match mode {
        FusionMode::Add => tape.add(y, s),
        FusionMode::Concat => tape.concat(&[y, s], 0),
    }
}

/// Maps fused features `[T_in, N, c]` to raw outputs `[T_f, N, c]`.
///
/// The first layer treats the time steps as channels and slides a kernel
/// over the feature axis, which changes the step count from `T_in` to `T_f`.
/// The remaining layers are residual temporal convolutions.
pub fn tcnn_decode(tape: &mut Tape, x: Var, p: &DecoderVars) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ks = tape.shape(p.expand_weight).to_vec();
    if xs.len() != 3 || ks.len() != 3 || ks[1] != xs[0] {
        return Err(Error::Dimension {
            op: "tcnn_decode",
            lhs: xs,
            rhs: ks,
        });
    }
    // [T_in, N, c] -> [c, N, T_in]: feature axis becomes the sliding axis.
    let h = tape.permute(x, &[2, 1, 0])?;
    let h = tape.conv_time(h, p.expand_weight)?;
    let h = tape.add(h, p.expand_bias)?;
    let mut h = tape.permute(h, &[2, 1, 0])?;
    for r in &p.residual {
        let z = tape.conv_time(h, r.weight)?;
        let z = tape.add(z, r.bias)?;
        let z = tape.prelu(z, r.slope)?;
        h = tape.add(h, z)?;
    }
    Ok(h)
}

/// Closest `rho` may get to +-1 in a stored track.
pub const RHO_LIMIT: f64 = 1.0 - 1e-12;

/// Per-agent, per-step bivariate Gaussians, stored as `[T_f, N, 5]` with
/// channels `(mu_x, mu_y, sigma_x, sigma_y, rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrack {
    params: Tensor,
}

impl GaussianTrack {
    /// Validates `sigma > 0` and `|rho| < 1`.
    pub fn new(params: Tensor) -> Result<Self> {
        let s = params.shape();
        if s.len() != 3 || s[2] != 5 {
            return Err(Error::contract(format!("track must be [T_f, N, 5], got {s:?}")));
        }
        for (idx, p) in params.data().chunks(5).enumerate() {
            if !p.iter().all(|v| v.is_finite()) || p[2] <= 0.0 || p[3] <= 0.0 || p[4].abs() >= 1.0 {
                return Err(Error::contract(format!(
                    "invalid Gaussian at step {}, agent {}: {p:?}",
                    idx / s[1],
                    idx % s[1]
                )));
            }
        }
        Ok(Self { params })
    }

    pub fn t_f(&self) -> usize {
        self.params.shape()[0]
    }

    pub fn num_agents(&self) -> usize {
        self.params.shape()[1]
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    /// `[mu_x, mu_y, sigma_x, sigma_y, rho]` at step `t` for `agent`.
    pub fn at(&self, t: usize, agent: usize) -> [f64; 5] {
        let o = (t * self.num_agents() + agent) * 5;
        let d = &self.params.data()[o..o + 5];
        [d[0], d[1], d[2], d[3], d[4]]
    }

    pub fn mean(&self, t: usize, agent: usize) -> [f64; 2] {
        let g = self.at(t, agent);
        [g[0], g[1]]
    }

    /// Adds a per-agent offset to every mean.
    pub fn shifted(&self, offsets: &[[f64; 2]]) -> Self {
        let n = self.num_agents();
        let mut p = self.params.clone();
        for (idx, c) in p.data_mut().chunks_mut(5).enumerate() {
            let o = offsets[idx % n];
            c[0] += o[0];
            c[1] += o[1];
        }
        Self { params: p }
    }
}

/// `mu = raw[..2]`, `sigma = exp(raw[2..4])`, `rho = tanh(raw[4])`.
pub fn gaussian_head(raw: &Tensor) -> Result<GaussianTrack> {
    if raw.ndim() != 3 || raw.shape()[2] != 5 {
        return Err(Error::contract(format!("raw output must be [T_f, N, 5], got {:?}", raw.shape())));
    }
    let mut p = raw.clone();
    for c in p.data_mut().chunks_mut(5) {
        c[2] = c[2].exp().clamp(f64::MIN_POSITIVE, f64::MAX);
        c[3] = c[3].exp().clamp(f64::MIN_POSITIVE, f64::MAX);
        c[4] = c[4].tanh().clamp(-RHO_LIMIT, RHO_LIMIT);
    }
    GaussianTrack::new(p)
}
