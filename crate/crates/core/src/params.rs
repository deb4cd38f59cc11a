//! Named parameter collections and their binding onto a tape.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat, ordered mapping from parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Every parameter renamed to `prefix/name`.
    pub fn prefixed(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (format!("{prefix}/{k}"), v.clone()))
                .collect(),
        }
    }

    /// Parameters under `prefix/`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> ParamSet {
        let lead = format!("{prefix}/");
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&lead).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.tensors.extend(other.tensors);
    }

    /// Same names with the same shapes.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::contract(format!(
                "parameter sets differ in size: {} vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb {
                return Err(Error::UnknownParam(kb.clone()));
            }
            if va.shape() != vb.shape() {
                return Err(Error::dim("param_align", va.shape(), vb.shape()));
            }
        }
        Ok(())
    }

    /// Registers every tensor on `tape`; trainable tensors become
    /// differentiable leaves, otherwise constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let nodes = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let id = if trainable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), id)
            })
            .collect();
        Bound { nodes }
    }

    /// Uniform `±bound` initialisation of a fresh tensor.
    pub fn init_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_parts(shape.to_vec(), data));
    }
}

/// Node ids of a [`ParamSet`] registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    nodes: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Pairs existing tape nodes with parameter names.
    pub fn from_nodes(nodes: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        Bound {
            nodes: nodes.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Gradient of every bound parameter.
    pub fn grads(&self, g: &Gradients) -> GradMap {
        self.nodes.iter().map(|(k, &id)| (k.clone(), g.get(id))).collect()
    }
}

pub fn grad_norm(grads: &GradMap) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}
