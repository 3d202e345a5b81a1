//! Reverse-mode automatic differentiation over dense tensors.

mod graph;
mod params;

pub use graph::{Graph, NodeId};
pub use params::{
    grad, grad_through_adaptation, sgd_adapt, value_and_grad, BoundParams, LossFn, MetaGradient, ParamSet,
};
