//! Minimal layer-graph engine: NHWC tensors, convolutions, pooling,
//! concatenation and softmax, each with an explicit backward pass.

mod graph;
pub mod ops;

pub use graph::{
    Activation, Activations, BackwardRequest, Gradients, LayerParams, Network, NetworkBuilder, Node, NodeId, Op, Param,
};
