//! Spectral graph convolution, temporal gated convolution and the two-block
//! unit that combines them.
//!
//! A block filters a signal `V: [T, N, c_in]` in the Fourier domain of its
//! graph: `Y = IGFT(SG(V_hat) + TG(V_hat))` with `V_hat = GFT(V)`. The agent
//! block transforms each time slice with that timestep's basis, the
//! environment block uses one basis for the whole window.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::gft::{gft, igft, BasisVars};

/// Gated temporal convolution parameters.
#[derive(Debug, Clone, Copy)]
pub struct TemporalGateVars {
    /// `[1, L, c_in, c_out]`.
    pub signal_weight: Var,
    /// `[c_out]`.
    pub signal_bias: Var,
    pub gate_weight: Var,
    pub gate_bias: Var,
}

/// One spectral block. `theta` is `[T_h, N_max, c_in, c_out]`.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub theta: Var,
    pub temporal: Option<TemporalGateVars>,
}

/// Learned per-mode filter: `Y[t, i, k] = sum_j theta[t, i, j, k] * lambda_i * V_hat[t, i, j]`.
///
/// `theta` is sliced to the first `N` modes; `lambdas` is `[T, N]` or `[N]`.
pub fn sgconv(tape: &mut Tape, v_hat: Var, theta: Var, lambdas: Var) -> Result<Var> {
    let vs = tape.shape(v_hat).to_vec();
    let ts = tape.shape(theta).to_vec();
    let [t, n, c_in] = vs[..] else {
        return Err(Error::contract(format!("spectral signal must be [T, N, c], got {vs:?}")));
    };
    let [tt, n_max, tc, c_out] = ts[..] else {
        return Err(Error::contract(format!("filter must be [T, N_max, c_in, c_out], got {ts:?}")));
    };
    if n > n_max {
        return Err(Error::Capacity { n, n_max });
    }
    if tt != t || tc != c_in {
        return Err(Error::Dimension {
            op: "sgconv",
            lhs: vs,
            rhs: ts,
        });
    }
    let mut lam_shape = tape.shape(lambdas).to_vec();
    lam_shape.push(1);
    let lam = tape.reshape(lambdas, &lam_shape)?;
    let scaled = tape.mul(v_hat, lam)?;
    let scaled = tape.reshape(scaled, &[t, n, 1, c_in])?;
    let theta_n = if n == n_max { theta } else { tape.slice(theta, 1, 0, n)? };
    let y = tape.matmul(scaled, theta_n)?;
    tape.reshape(y, &[t, n, c_out])
}

/// `(conv(V_hat, K_signal) + b_signal) * sigmoid(conv(V_hat, K_gate) + b_gate)`.
pub fn tgconv(tape: &mut Tape, v_hat: Var, p: &TemporalGateVars) -> Result<Var> {
    let a = tape.conv_time(v_hat, p.signal_weight)?;
    let a = tape.add(a, p.signal_bias)?;
    let g = tape.conv_time(v_hat, p.gate_weight)?;
    let g = tape.add(g, p.gate_bias)?;
    let g = tape.sigmoid(g);
    tape.mul(a, g)
}

/// One block: `IGFT(SG(GFT(V)) + TG(GFT(V)))`.
pub fn spectral_block(tape: &mut Tape, v: Var, basis: &BasisVars, p: &BlockVars) -> Result<Var> {
    let v_hat = gft(tape, v, basis)?;
    let mut y = sgconv(tape, v_hat, p.theta, basis.lambdas)?;
    if let Some(tg) = &p.temporal {
        let y_tg = tgconv(tape, v_hat, tg)?;
        y = tape.add(y, y_tg)?;
    }
    igft(tape, y, basis)
}

/// `Y = Y_agent + Y_env`, or the agent block alone when `env` is `None`.
pub fn spectgnn_unit(
    tape: &mut Tape,
    v: Var,
    agent: (&BasisVars, &BlockVars),
    env: Option<(&BasisVars, &BlockVars)>,
) -> Result<Var> {
    let ya = spectral_block(tape, v, agent.0, agent.1)?;
    match env {
        Some((basis, p)) => {
            let ye = spectral_block(tape, v, basis, p)?;
            tape.add(ya, ye)
        }
        None => Ok(ya),
    }
}
