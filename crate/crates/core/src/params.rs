//! Named learnable tensors, their gradient accumulators and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// `None` until the first accumulation after a reset.
    pub grad: Option<Tensor>,
}

/// Ordered collection of parameters addressed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl ParamVars {
    /// Pairs names with already-recorded variables, e.g. inputs handed out by
    /// a gradient checker.
    pub fn from_parts(names: &[String], vars: &[Var]) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(Error::contract(format!(
                "{} names for {} variables",
                names.len(),
                vars.len()
            )));
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            vars: vars.to_vec(),
            index,
        })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("no parameter named {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        ParamVars {
            vars,
            index: self.index.clone(),
        }
    }

    /// Gradient of every parameter from one backward pass, zeros where the
    /// parameter did not influence the loss.
    pub fn collect_grads(&self, vars: &ParamVars, grads: &Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&vars.vars)
            .map(|(p, &v)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }

    /// `grad += scale * g` for each parameter, in store order.
    pub fn accumulate(&mut self, grads: &[Tensor], scale: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "accumulate",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            p.grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()))
                .axpy(scale, g);
        }
        Ok(())
    }

    /// Resets every accumulator to zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.fill(0.0),
                None => p.grad = Some(Tensor::zeros(p.value.shape())),
            }
        }
    }

    /// Forgets accumulated gradients entirely.
    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Euclidean norm of all accumulated gradients together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `p <- p - lr * g` for every parameter.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::contract(format!("no gradient accumulated for {}", p.name)));
        }
        for p in &mut self.params {
            let g = p.grad.as_ref().expect("checked above");
            p.value.axpy(-lr, g);
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "spectgnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// JSON container: format tag, version, free-form model metadata, tensors.
#[derive(Serialize, Deserialize)]
struct CheckpointFile<M> {
    format: String,
    version: u32,
    model: M,
    params: Vec<StoredParam>,
}

/// Writes `store` and `model` metadata as JSON.
pub fn save_checkpoint<M: Serialize>(path: &Path, model: &M, store: &ParamStore) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        model,
        params: store
            .iter()
            .map(|p| StoredParam {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<M: for<'de> Deserialize<'de>>(path: &Path) -> Result<(M, ParamStore)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile<M> = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::data(format!("{} is not a checkpoint (format {:?})", path.display(), file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {}", file.version)));
    }
    let mut store = ParamStore::new();
    for p in file.params {
        store.insert(p.name, Tensor::new(p.shape, p.data)?)?;
    }
    Ok((file.model, store))
}
