//! Multi-head scaled dot-product attention over time and over agents.
//!
//! Each head projects its input with `W_q`, `W_k`, `W_v`, forms
//! `softmax(Q K^T / sqrt(d_k)) V`, and the concatenated heads go through a
//! square mixing matrix `W_h`. Temporal attention runs per agent over the
//! `T` axis, spatial attention per timestep over the `N` axis.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// One head's projections: `W_q, W_k: [c, d_k]`, `W_v: [c, d_out]`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// A multi-head layer; `wh` is `[heads * d_out, heads * d_out]`.
#[derive(Debug, Clone)]
pub struct MultiHeadVars {
    pub heads: Vec<HeadVars>,
    pub wh: Var,
}

/// How the temporal and spatial layers are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StattMode {
    /// `spatial(temporal(Y))`.
    #[default]
    Sequential,
    /// `temporal(Y) + spatial(Y)`.
    Parallel,
}

impl std::str::FromStr for StattMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "parallel" => Ok(Self::Parallel),
            _ => Err(Error::config(format!("statt_mode must be sequential|parallel, got {s:?}"))),
        }
    }
}

/// Full attention module: both layers plus a projection `[heads * d_out, c_out]`
/// back to the unit's channel count so the result can be fused with `Y`.
#[derive(Debug, Clone)]
pub struct StattVars {
    pub temporal: MultiHeadVars,
    pub spatial: MultiHeadVars,
    pub out: Var,
    pub mode: StattMode,
}

/// Attention along axis 1 of `x: [B, S, c]`, batched over axis 0.
fn multi_head(tape: &mut Tape, x: Var, p: &MultiHeadVars) -> Result<Var> {
    if tape.shape(x).len() != 3 || p.heads.is_empty() {
        return Err(Error::contract(format!(
            "attention input must be [B, S, c] with at least one head, got {:?}",
            tape.shape(x)
        )));
    }
    let mut outs = Vec::with_capacity(p.heads.len());
    for h in &p.heads {
        let q = tape.matmul(x, h.wq)?;
        let k = tape.matmul(x, h.wk)?;
        let v = tape.matmul(x, h.wv)?;
        let d_k = tape.shape(h.wq)[1] as f64;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / d_k.sqrt());
        let a = tape.softmax(s, 2)?;
        outs.push(tape.matmul(a, v)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
    tape.matmul(cat, p.wh)
}

/// Per agent, attend over the time axis of `y: [T, N, c]`.
pub fn temporal_attention(tape: &mut Tape, y: Var, p: &MultiHeadVars) -> Result<Var> {
    let yt = tape.permute(y, &[1, 0, 2])?;
    let o = multi_head(tape, yt, p)?;
    tape.permute(o, &[1, 0, 2])
}

/// Per timestep, attend over the agent axis of `y: [T, N, c]`.
pub fn spatial_attention(tape: &mut Tape, y: Var, p: &MultiHeadVars) -> Result<Var> {
    multi_head(tape, y, p)
}

/// Spatio-temporal attention, projected back to `[T, N, c_out]`.
pub fn statt(tape: &mut Tape, y: Var, p: &StattVars) -> Result<Var> {
    let h = match p.mode {
        StattMode::Sequential => {
            let t = temporal_attention(tape, y, &p.temporal)?;
            spatial_attention(tape, t, &p.spatial)?
        }
        StattMode::Parallel => {
            let t = temporal_attention(tape, y, &p.temporal)?;
            let s = spatial_attention(tape, y, &p.spatial)?;
            tape.add(t, s)?
        }
    };
    tape.matmul(h, p.out)
}
