//! Agent and environment graphs and their normalized Laplacians.

mod agent;
mod environment;
mod laplacian;

pub use agent::{build_agent_graph, DEFAULT_DISTANCE_FLOOR};
pub use environment::{encode_environment, environment_sample_points, ConvLayerVars, EncoderVars};
pub use laplacian::{normalized_laplacian, LaplacianSet};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphRole {
    /// One per observed timestep, from inter-agent distances.
    Agent,
    /// One per scene, from the context image.
    Environment,
}

/// Symmetric, non-negative `N x N` edge weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Tensor,
    role: GraphRole,
}

impl WeightMatrix {
    pub fn new(values: Tensor, role: GraphRole) -> Result<Self> {
        let [n, m] = *values.shape() else {
            return Err(Error::contract(format!("weight matrix must be square, got {:?}", values.shape())));
        };
        if n != m {
            return Err(Error::contract(format!("weight matrix must be square, got {:?}", values.shape())));
        }
        let d = values.data();
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::contract(format!("nonzero diagonal at node {i}")));
            }
            for j in 0..n {
                let w = d[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::contract(format!("invalid weight {w} at ({i}, {j})")));
                }
                if (w - d[j * n + i]).abs() > 1e-12 * w.abs().max(1.0) {
                    return Err(Error::contract(format!("weights not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { values, role })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn role(&self) -> GraphRole {
        self.role
    }

    pub fn order(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.data()[i * self.order() + j]
    }

    /// `P E P^T` where new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.order();
        let values = Tensor::from_fn(&[n, n], |ix| self.get(perm[ix[0]], perm[ix[1]]));
        Self {
            values,
            role: self.role,
        }
    }
}
