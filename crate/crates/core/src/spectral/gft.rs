//! Graph Fourier transform along the node axis.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

use super::SpectralBasis;

/// An eigenbasis recorded on a tape.
///
/// Either one basis per timestep (`vectors: [T, N, N]`, `lambdas: [T, N]`) or
/// one shared by every timestep (`vectors: [N, N]`, `lambdas: [N]`).
#[derive(Debug, Clone, Copy)]
pub struct BasisVars {
    pub vectors: Var,
    pub lambdas: Var,
}

impl BasisVars {
    /// Stacks per-timestep bases as tape constants.
    pub fn per_timestep(tape: &mut Tape, bases: &[SpectralBasis]) -> Result<Self> {
        let t = bases.len();
        let n = bases.first().map(|b| b.order()).ok_or_else(|| Error::contract("no bases"))?;
        let mut vecs = Vec::with_capacity(t * n * n);
        let mut lams = Vec::with_capacity(t * n);
        for b in bases {
            if b.order() != n {
                return Err(Error::contract("bases of different order"));
            }
            vecs.extend_from_slice(b.vectors().data());
            lams.extend_from_slice(b.lambdas());
        }
        Ok(Self {
            vectors: tape.constant(Tensor::new(vec![t, n, n], vecs)?),
            lambdas: tape.constant(Tensor::new(vec![t, n], lams)?),
        })
    }

    /// One basis shared by all timesteps, as tape constants.
    pub fn shared(tape: &mut Tape, basis: &SpectralBasis) -> Result<Self> {
        let n = basis.order();
        Ok(Self {
            vectors: tape.constant(basis.vectors().clone()),
            lambdas: tape.constant(Tensor::new(vec![n], basis.lambdas().to_vec())?),
        })
    }

    /// Number of nodes.
    pub fn order(&self, tape: &Tape) -> usize {
        *tape.shape(self.lambdas).last().unwrap_or(&0)
    }

    fn check(&self, tape: &Tape, v: Var) -> Result<()> {
        let vs = tape.shape(v);
        let us = tape.shape(self.vectors);
        let n = self.order(tape);
        let ok = vs.len() == 3
            && vs[1] == n
            && (us.len() == 2 || (us.len() == 3 && us[0] == vs[0]));
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "signal of shape {vs:?} does not match basis of shape {us:?}"
            )))
        }
    }
}

/// `V_hat_t = U_t^T V_t` for a signal `[T, N, c]`.
pub fn gft(tape: &mut Tape, v: Var, basis: &BasisVars) -> Result<Var> {
    basis.check(tape, v)?;
    let ut = tape.transpose(basis.vectors)?;
    tape.matmul(ut, v)
}

/// `V_t = U_t V_hat_t`.
pub fn igft(tape: &mut Tape, v_hat: Var, basis: &BasisVars) -> Result<Var> {
    basis.check(tape, v_hat)?;
    tape.matmul(basis.vectors, v_hat)
}
