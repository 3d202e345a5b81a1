use std::collections::BTreeMap;

use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter tensors in a deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Same names and same shapes.
    pub fn is_congruent(&self, other: &Self) -> bool {
        self.check_congruent(other).is_ok()
    }

    pub fn check_congruent(&self, other: &Self) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Incongruent(format!("{} vs {} parameters", self.entries.len(), other.entries.len())));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb {
                return Err(Error::Incongruent(format!("`{na}` vs `{nb}`")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::Incongruent(format!("`{na}`: {:?} vs {:?}", ta.shape(), tb.shape())));
            }
        }
        Ok(())
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self> {
        self.check_congruent(other)?;
        let entries = self
            .entries
            .iter()
            .zip(other.entries.values())
            .map(|((name, a), b)| Ok((name.clone(), a.zip_with(b, |x, y| x + scale * y)?)))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    /// Same names and shapes, all entries zero.
    pub fn zeros_like(other: &Self) -> Self {
        other.iter().map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape()))).collect()
    }

    /// Global L2 norm over every entry.
    pub fn l2_norm(&self) -> f64 {
        self.entries.values().flat_map(|t| t.data().iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_congruent(other)?;
        Ok(self.entries.values().zip(other.entries.values()).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max))
    }

    /// Registers every tensor as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let ids = self.entries.iter().map(|(k, v)| (k.clone(), graph.leaf(v.clone()))).collect();
        BoundParams { ids }
    }

    /// Registers every tensor as a non-trainable constant of `graph`.
    pub fn bind_constant(&self, graph: &mut Graph) -> BoundParams {
        let ids = self.entries.iter().map(|(k, v)| (k.clone(), graph.constant(v.clone()))).collect();
        BoundParams { ids }
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// Parameters living inside one graph: either leaves or adapted copies
/// computed from leaves.
#[derive(Clone, Debug)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids.get(name).copied().ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.ids.values().copied().collect()
    }

    /// Snapshot of the current values.
    pub fn values(&self, graph: &Graph) -> ParamSet {
        self.ids.iter().map(|(k, &v)| (k.clone(), graph.value(v).clone())).collect()
    }

    /// One differentiable SGD step, `theta - lr * grad(loss)`, recorded in `graph`.
    pub fn sgd_step(&self, graph: &mut Graph, loss: NodeId, lr: f64) -> Result<BoundParams> {
        let ids = self.ids();
        let grads = graph.gradients(loss, &ids)?;
        let mut next = BTreeMap::new();
        for ((name, &theta), g) in self.ids.iter().zip(grads) {
            let step = graph.scale(g, -lr)?;
            next.insert(name.clone(), graph.add(theta, step)?);
        }
        Ok(BoundParams { ids: next })
    }
}

fn check_grads_finite(grads: &ParamSet) -> Result<()> {
    // Every tensor constructor already rejects NaN/Inf; this guards the contract.
    if grads.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { op: "grad" });
    }
    Ok(())
}

/// Gradient of `loss` with respect to every bound parameter.
pub fn grad(graph: &mut Graph, loss: NodeId, params: &BoundParams) -> Result<ParamSet> {
    let ids = params.ids();
    let grads = graph.gradients(loss, &ids)?;
    let out: ParamSet = params.ids.keys().zip(grads).map(|(k, g)| (k.clone(), graph.value(g).clone())).collect();
    check_grads_finite(&out)?;
    Ok(out)
}

/// Builds a scalar loss for the given parameters inside a graph.
pub trait LossFn: Fn(&mut Graph, &BoundParams) -> Result<NodeId> {}
impl<F: Fn(&mut Graph, &BoundParams) -> Result<NodeId>> LossFn for F {}

/// Value and gradient of `loss_fn` at `params`.
pub fn value_and_grad(params: &ParamSet, loss_fn: &impl LossFn) -> Result<(f64, ParamSet)> {
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph);
    let loss = loss_fn(&mut graph, &bound)?;
    let value = graph.value(loss).item().ok_or_else(|| Error::NonScalarLoss(graph.shape(loss).to_vec()))?;
    Ok((value, grad(&mut graph, loss, &bound)?))
}

/// `steps` full-batch SGD steps, each on a fresh graph (no second-order terms).
pub fn sgd_adapt(params: &ParamSet, steps: usize, lr: f64, loss_fn: &impl LossFn) -> Result<ParamSet> {
    let mut current = params.clone();
    for _ in 0..steps {
        let (_, g) = value_and_grad(&current, loss_fn)?;
        current = current.add_scaled(&g, -lr)?;
    }
    Ok(current)
}

/// Result of differentiating through an unrolled adaptation.
#[derive(Clone, Debug)]
pub struct MetaGradient {
    /// d outer_loss(T(theta)) / d theta, second-order terms included.
    pub grad: ParamSet,
    pub outer_loss: f64,
    pub adapted: ParamSet,
}

/// Gradient of `outer_loss(theta')` with respect to `theta`, where `theta'` is
/// reached from `theta` by `steps` SGD steps on `inner_loss` with rate `lr`.
/// The inner steps are recorded as graph ops so the result includes the
/// Hessian-vector terms of every step.
pub fn grad_through_adaptation(
    params: &ParamSet,
    inner_loss: &impl LossFn,
    outer_loss: &impl LossFn,
    steps: usize,
    lr: f64,
) -> Result<MetaGradient> {
    let mut graph = Graph::new();
    let theta = params.bind(&mut graph);
    let mut current = theta.clone();
    for _ in 0..steps {
        let loss = inner_loss(&mut graph, &current)?;
        current = current.sgd_step(&mut graph, loss, lr)?;
    }
    let outer = outer_loss(&mut graph, &current)?;
    let outer_value = graph.value(outer).item().ok_or_else(|| Error::NonScalarLoss(graph.shape(outer).to_vec()))?;
    let adapted = current.values(&graph);
    let grad = grad(&mut graph, outer, &theta)?;
    Ok(MetaGradient { grad, outer_loss: outer_value, adapted })
}
