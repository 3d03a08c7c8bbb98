use std::collections::BTreeMap;

use ndarray::{Array1, Array4, ArrayView4, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn is_relu(self) -> bool {
        matches!(self, Activation::Relu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    /// Stride-1, `same`-padded convolution; `param` indexes [`Network::params`].
    Conv2d { param: usize, kernel: usize, activation: Activation },
    ConvTranspose2x2 { param: usize, activation: Activation },
    MaxPool2x2,
    /// Unpool with the argmax indices recorded by the pooling node `pool`.
    MaxUnpool2x2 { pool: NodeId },
    Concat,
    Softmax,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "Input",
            Op::Conv2d { .. } => "Conv2D",
            Op::ConvTranspose2x2 { .. } => "Conv2DTranspose",
            Op::MaxPool2x2 => "MaxPooling2D",
            Op::MaxUnpool2x2 { .. } => "MaxUnpooling2D",
            Op::Concat => "Concatenate",
            Op::Softmax => "Softmax",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Per-image output shape `(height, width, channels)`.
    pub shape: (usize, usize, usize),
}

/// Kernel and bias of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub kernel: Array4<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros_like(&self) -> Self {
        LayerParams {
            kernel: Array4::zeros(self.kernel.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn len(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    /// Owning layer name.
    pub layer: String,
    pub value: LayerParams<T>,
}

/// Incrementally declares a network as a DAG of named layers.
pub struct NetworkBuilder {
    nodes: Vec<Node>,
    /// `(layer, kernel shape, filters, fan_in, fan_out)`
    param_shapes: Vec<(String, [usize; 4], usize, usize, usize)>,
}

impl NetworkBuilder {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        NetworkBuilder {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
                shape: (height, width, channels),
            }],
            param_shapes: vec![],
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize, usize) {
        self.nodes[id].shape
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, shape: (usize, usize, usize)) -> NodeId {
        assert!(
            self.nodes.iter().all(|n| n.name != name),
            "duplicate layer name {name}"
        );
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            shape,
        });
        self.nodes.len() - 1
    }

    pub fn conv2d(&mut self, name: &str, input: NodeId, filters: usize, kernel: usize, activation: Activation) -> NodeId {
        let (h, w, c) = self.nodes[input].shape;
        let param = self.param_shapes.len();
        self.param_shapes.push((
            name.to_string(),
            [kernel, kernel, c, filters],
            filters,
            kernel * kernel * c,
            kernel * kernel * filters,
        ));
        self.push(name, Op::Conv2d { param, kernel, activation }, vec![input], (h, w, filters))
    }

    pub fn conv_transpose2x2(&mut self, name: &str, input: NodeId, filters: usize, activation: Activation) -> NodeId {
        let (h, w, c) = self.nodes[input].shape;
        let param = self.param_shapes.len();
        self.param_shapes.push((name.to_string(), [c, 2, 2, filters], filters, 4 * c, 4 * filters));
        self.push(name, Op::ConvTranspose2x2 { param, activation }, vec![input], (2 * h, 2 * w, filters))
    }

    pub fn max_pool2x2(&mut self, name: &str, input: NodeId) -> NodeId {
        let (h, w, c) = self.nodes[input].shape;
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2x2 on odd spatial size {h}x{w}");
        self.push(name, Op::MaxPool2x2, vec![input], (h / 2, w / 2, c))
    }

    pub fn max_unpool2x2(&mut self, name: &str, input: NodeId, pool: NodeId) -> NodeId {
        assert!(matches!(self.nodes[pool].op, Op::MaxPool2x2));
        let (h, w, c) = self.nodes[input].shape;
        assert_eq!(self.nodes[pool].shape, (h, w, c), "unpool input must match pooled shape");
        self.push(name, Op::MaxUnpool2x2 { pool }, vec![input], (2 * h, 2 * w, c))
    }

    pub fn concat(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        let (h, w, ca) = self.nodes[a].shape;
        let (hb, wb, cb) = self.nodes[b].shape;
        assert_eq!((h, w), (hb, wb), "concat of mismatched spatial sizes");
        self.push(name, Op::Concat, vec![a, b], (h, w, ca + cb))
    }

    pub fn softmax(&mut self, name: &str, input: NodeId) -> NodeId {
        let shape = self.nodes[input].shape;
        self.push(name, Op::Softmax, vec![input], shape)
    }

    /// Glorot-uniform kernels and zero biases, drawn from a ChaCha stream.
    pub fn build<T: Scalar>(self, seed: u64) -> Network<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = self
            .param_shapes
            .into_iter()
            .map(|(layer, shape, filters, fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let kernel = Array4::from_shape_simple_fn((shape[0], shape[1], shape[2], shape[3]), || {
                    T::of(rng.random_range(-limit..limit))
                });
                Param {
                    layer,
                    value: LayerParams {
                        kernel,
                        bias: Array1::zeros(filters),
                    },
                }
            })
            .collect();
        Network { nodes: self.nodes, params }
    }

    pub fn with_params<T: Scalar>(self, params: Vec<LayerParams<T>>) -> Result<Network<T>> {
        if params.len() != self.param_shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter sets, got {}",
                self.param_shapes.len(),
                params.len()
            )));
        }
        let params = self
            .param_shapes
            .into_iter()
            .zip(params)
            .map(|((layer, shape, filters, _, _), value)| {
                let got = value.kernel.shape();
                if got != shape || value.bias.len() != filters {
                    return Err(Error::Shape(format!(
                        "{layer}: expected kernel {shape:?} / bias {filters}, got {got:?} / {}",
                        value.bias.len()
                    )));
                }
                Ok(Param { layer, value })
            })
            .collect::<Result<_>>()?;
        Ok(Network { nodes: self.nodes, params })
    }
}

/// A feed-forward network of named layers with explicit backward passes.
#[derive(Clone, Debug)]
pub struct Network<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
}

/// Every node output of one forward pass (needed by the backward pass).
pub struct Activations<T> {
    pub values: Vec<Array4<T>>,
    pub pool_indices: Vec<Option<Array4<u8>>>,
}

impl<T> Activations<T> {
    pub fn output(&self) -> &Array4<T> {
        self.values.last().expect("network has at least one node")
    }
}

pub struct BackwardRequest<'a> {
    pub param_grads: bool,
    /// Nodes whose output gradient should be returned.
    pub capture: &'a [NodeId],
}

pub struct Gradients<T> {
    pub params: Option<Vec<LayerParams<T>>>,
    pub captured: BTreeMap<NodeId, Array4<T>>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Array4<T>>, g: Array4<T>) {
    match slot {
        Some(acc) => Zip::from(acc).and(&g).for_each(|a, &b| *a += b),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Network<T> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.nodes[0].shape
    }

    pub fn output_node(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.nodes.iter().skip(1).map(|n| n.name.clone()).collect()
    }

    /// Resolve a layer name or fail with the full list of registered layers.
    pub fn require_node(&self, name: &str) -> Result<NodeId> {
        self.node_id(name).filter(|&id| id != 0).ok_or_else(|| Error::UnknownLayer {
            name: name.to_string(),
            available: self.layer_names(),
        })
    }

    pub fn forward(&self, x: ArrayView4<T>) -> Result<Activations<T>> {
        let (_, h, w, c) = x.dim();
        if (h, w, c) != self.nodes[0].shape {
            return Err(Error::Shape(format!(
                "network expects B x {:?}, got {:?}",
                self.nodes[0].shape,
                x.dim()
            )));
        }
        let mut values: Vec<Array4<T>> = Vec::with_capacity(self.nodes.len());
        let mut pool_indices = Vec::<Option<Array4<u8>>>::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut idx = None;
            let out = match &node.op {
                Op::Input => x.as_standard_layout().into_owned(),
                Op::Conv2d { param, activation, .. } => {
                    let p = &self.params[*param].value;
                    ops::conv2d_forward(values[node.inputs[0]].view(), p.kernel.view(), p.bias.view(), activation.is_relu())
                }
                Op::ConvTranspose2x2 { param, activation } => {
                    let p = &self.params[*param].value;
                    ops::conv_transpose2x2_forward(
                        values[node.inputs[0]].view(),
                        p.kernel.view(),
                        p.bias.view(),
                        activation.is_relu(),
                    )
                }
                Op::MaxPool2x2 => {
                    let (out, i) = ops::max_pool2x2_forward(values[node.inputs[0]].view());
                    idx = Some(i);
                    out
                }
                Op::MaxUnpool2x2 { pool } => {
                    let i: &Array4<u8> = pool_indices[*pool].as_ref().expect("pool node records indices");
                    ops::max_unpool2x2(values[node.inputs[0]].view(), i.view())
                }
                Op::Concat => ops::concat_channels(values[node.inputs[0]].view(), values[node.inputs[1]].view()),
                Op::Softmax => ops::softmax_forward(values[node.inputs[0]].view()),
            };
            values.push(out);
            pool_indices.push(idx);
        }
        Ok(Activations { values, pool_indices })
    }

    /// Propagate `seed` (the gradient of some scalar with respect to the
    /// output of node `from`) back through the graph.
    pub fn backward(
        &self,
        acts: &Activations<T>,
        from: NodeId,
        seed: Array4<T>,
        request: &BackwardRequest<'_>,
    ) -> Gradients<T> {
        assert_eq!(seed.dim(), acts.values[from].dim(), "seed shape");
        let mut grads: Vec<Option<Array4<T>>> = vec![None; self.nodes.len()];
        grads[from] = Some(seed);
        let mut param_grads = request
            .param_grads
            .then(|| self.params.iter().map(|p| p.value.zeros_like()).collect::<Vec<_>>());
        let mut captured = BTreeMap::new();
        let lowest_capture = request.capture.iter().copied().min();

        for id in (1..=from).rev() {
            if !request.param_grads && lowest_capture.is_some_and(|low| id < low) {
                break;
            }
            let Some(g) = grads[id].take() else { continue };
            if request.capture.contains(&id) {
                captured.insert(id, g.clone());
            }
            let node = &self.nodes[id];
            // Input gradients are never needed for the image itself.
            let need_dx = |input: NodeId| input != 0;
            match &node.op {
                Op::Input => unreachable!(),
                Op::Conv2d { param, activation, .. } => {
                    let src = node.inputs[0];
                    let p = &self.params[*param].value;
                    let r = ops::conv2d_backward(
                        acts.values[src].view(),
                        p.kernel.view(),
                        acts.values[id].view(),
                        g.view(),
                        activation.is_relu(),
                        need_dx(src),
                        param_grads.is_some(),
                    );
                    if let Some(pg) = param_grads.as_mut() {
                        pg[*param].kernel += &r.dkernel.unwrap();
                        pg[*param].bias += &r.dbias.unwrap();
                    }
                    if let Some(dx) = r.dx {
                        accumulate(&mut grads[src], dx);
                    }
                }
                Op::ConvTranspose2x2 { param, activation } => {
                    let src = node.inputs[0];
                    let p = &self.params[*param].value;
                    let r = ops::conv_transpose2x2_backward(
                        acts.values[src].view(),
                        p.kernel.view(),
                        acts.values[id].view(),
                        g.view(),
                        activation.is_relu(),
                        need_dx(src),
                        param_grads.is_some(),
                    );
                    if let Some(pg) = param_grads.as_mut() {
                        pg[*param].kernel += &r.dkernel.unwrap();
                        pg[*param].bias += &r.dbias.unwrap();
                    }
                    if let Some(dx) = r.dx {
                        accumulate(&mut grads[src], dx);
                    }
                }
                Op::MaxPool2x2 => {
                    let src = node.inputs[0];
                    if need_dx(src) {
                        let i = acts.pool_indices[id].as_ref().unwrap();
                        accumulate(&mut grads[src], ops::max_unpool2x2(g.view(), i.view()));
                    }
                }
                Op::MaxUnpool2x2 { pool } => {
                    let src = node.inputs[0];
                    let i = acts.pool_indices[*pool].as_ref().unwrap();
                    accumulate(&mut grads[src], ops::gather_pool2x2(g.view(), i.view()));
                }
                Op::Concat => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ca = self.nodes[a].shape.2;
                    let ga = g.slice(ndarray::s![.., .., .., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., .., .., ca..]).to_owned();
                    if need_dx(a) {
                        accumulate(&mut grads[a], ga);
                    }
                    if need_dx(b) {
                        accumulate(&mut grads[b], gb);
                    }
                }
                Op::Softmax => {
                    let src = node.inputs[0];
                    accumulate(&mut grads[src], ops::softmax_backward(acts.values[id].view(), g.view()));
                }
            }
        }
        Gradients {
            params: param_grads,
            captured,
        }
    }
}
