//! SegNet-style encoder-decoder for per-pixel layer classification.
//!
//! Layer names follow the Keras auto-naming scheme so a default model
//! registers `conv2d` .. `conv2d_9` in the encoder, `conv2d_10` ..
//! `conv2d_19` in the decoder and `conv2d_20` as the 1x1 output head.

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayView2, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Activations, Network, NetworkBuilder, NodeId, Op};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};

/// Number of 2x poolings in the encoder.
pub const ENCODER_STAGES: usize = 5;
pub const MAX_FILTERS: usize = 512;

/// How the decoder doubles spatial resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// 2x2 stride-2 transposed convolution, then concatenation with the
    /// matching encoder feature map.
    #[default]
    TransposedConvSkip,
    /// Max-unpooling with the encoder's recorded argmax indices, then
    /// concatenation with the matching encoder feature map.
    IndexUnpool,
}

impl FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transposed_conv_skip" => Ok(DecoderMode::TransposedConvSkip),
            "index_unpool" => Ok(DecoderMode::IndexUnpool),
            other => Err(Error::Config(format!(
                "unknown decoder_mode `{other}` (expected transposed_conv_skip or index_unpool)"
            ))),
        }
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::TransposedConvSkip => "transposed_conv_skip",
            DecoderMode::IndexUnpool => "index_unpool",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Same,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// `(height, width, channels)`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_mode: DecoderMode,
    pub kernel_size: usize,
    pub padding: Padding,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            input_shape: [256, 256, 1],
            num_classes: 8,
            encoder_filters: vec![64, 128, 256, 512, 512],
            decoder_mode: DecoderMode::TransposedConvSkip,
            kernel_size: 3,
            padding: Padding::Same,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input_shape;
        if self.encoder_filters.len() != ENCODER_STAGES {
            return Err(Error::Config(format!(
                "encoder_filters must list {ENCODER_STAGES} stages, got {}",
                self.encoder_filters.len()
            )));
        }
        if let Some(&f) = self.encoder_filters.iter().find(|&&f| f == 0 || f > MAX_FILTERS) {
            return Err(Error::Config(format!("filter count {f} outside 1..={MAX_FILTERS}")));
        }
        let div = 1 << ENCODER_STAGES;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a positive multiple of {div} in both dimensions"
            )));
        }
        if c == 0 {
            return Err(Error::Config("input must have at least one channel".into()));
        }
        if self.num_classes < 2 || self.num_classes > u8::MAX as usize {
            return Err(Error::Config(format!("num_classes {} outside 2..=255", self.num_classes)));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size {} must be odd", self.kernel_size)));
        }
        Ok(())
    }

    /// Spatial size after the last pooling stage.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        (
            self.input_shape[0] >> ENCODER_STAGES,
            self.input_shape[1] >> ENCODER_STAGES,
        )
    }

    /// Declare the layer graph without allocating parameters.
    pub fn graph(&self) -> Result<NetworkBuilder> {
        self.validate()?;
        let [h, w, c] = self.input_shape;
        let k = self.kernel_size;
        let f = &self.encoder_filters;
        let mut b = NetworkBuilder::new(h, w, c);
        let mut names = KerasNames::default();

        let mut x = b.input();
        let mut skips = Vec::with_capacity(ENCODER_STAGES);
        let mut pools = Vec::with_capacity(ENCODER_STAGES);
        for &filters in f {
            x = b.conv2d(&names.next("conv2d"), x, filters, k, Activation::Relu);
            x = b.conv2d(&names.next("conv2d"), x, filters, k, Activation::Relu);
            skips.push(x);
            x = b.max_pool2x2(&names.next("max_pooling2d"), x);
            pools.push(x);
        }

        for level in (0..ENCODER_STAGES).rev() {
            let filters = f[level];
            let up = match self.decoder_mode {
                DecoderMode::TransposedConvSkip => {
                    b.conv_transpose2x2(&names.next("conv2d_transpose"), x, filters, Activation::Linear)
                }
                DecoderMode::IndexUnpool => b.max_unpool2x2(&names.next("max_unpooling2d"), x, pools[level]),
            };
            x = b.concat(&names.next("concatenate"), up, skips[level]);
            x = b.conv2d(&names.next("conv2d"), x, filters, k, Activation::Relu);
            // Unpooling needs the channel count of the next (shallower)
            // encoder stage.
            let out = match self.decoder_mode {
                DecoderMode::IndexUnpool if level > 0 => f[level - 1],
                _ => filters,
            };
            x = b.conv2d(&names.next("conv2d"), x, out, k, Activation::Relu);
        }
        let head = b.conv2d(&names.next("conv2d"), x, self.num_classes, 1, Activation::Linear);
        b.softmax("softmax", head);
        Ok(b)
    }
}

#[derive(Default)]
struct KerasNames(BTreeMap<&'static str, usize>);

impl KerasNames {
    fn next(&mut self, prefix: &'static str) -> String {
        let n = self.0.entry(prefix).or_insert(0);
        let name = if *n == 0 {
            prefix.to_string()
        } else {
            format!("{prefix}_{n}")
        };
        *n += 1;
        name
    }
}

/// Argmax positions recorded by one pooling stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingIndices {
    pub layer: String,
    /// Per pooled element, `dy * 2 + dx` inside its 2x2 window.
    pub window_argmax: Array4<u8>,
}

impl PoolingIndices {
    /// Input-grid coordinates `(y, x)` of the maximum that produced pooled
    /// element `(b, y, x, c)`.
    pub fn source_coord(&self, b: usize, y: usize, x: usize, c: usize) -> (usize, usize) {
        let p = self.window_argmax[[b, y, x, c]] as usize;
        (2 * y + (p >> 1), 2 * x + (p & 1))
    }
}

/// Result of a forward pass with optional intermediate captures.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `B x H x W x classes` per-pixel probabilities.
    pub output: Array4<T>,
    pub features: BTreeMap<String, Array4<T>>,
    /// Filled only in [`DecoderMode::IndexUnpool`].
    pub pooling_indices: Vec<PoolingIndices>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub output_shape: [usize; 3],
    pub parameters: usize,
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArchitectureSummary {
    pub config: ArchitectureConfig,
    pub layers: Vec<LayerSummary>,
    pub total_parameters: usize,
}

impl fmt::Display for ArchitectureSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:<16} {:<18} {:>12}", "Layer", "Type", "Output shape", "Params")?;
        for l in &self.layers {
            let shape = format!("({}, {}, {})", l.output_shape[0], l.output_shape[1], l.output_shape[2]);
            writeln!(f, "{:<22} {:<16} {:<18} {:>12}", l.name, l.kind, shape, l.parameters)?;
        }
        write!(f, "Total params: {}", self.total_parameters)
    }
}

/// A built, runnable segmentation network.
#[derive(Clone, Debug)]
pub struct SegmentationModel<T> {
    config: ArchitectureConfig,
    seed: u64,
    network: Network<T>,
}

/// Build a model with seeded Glorot-uniform initialization.
pub fn build_model<T: Scalar>(config: &ArchitectureConfig, seed: u64) -> Result<SegmentationModel<T>> {
    let network = config.graph()?.build(seed);
    Ok(SegmentationModel {
        config: config.clone(),
        seed,
        network,
    })
}

impl<T: Scalar> SegmentationModel<T> {
    pub(crate) fn from_parts(config: ArchitectureConfig, seed: u64, network: Network<T>) -> Self {
        SegmentationModel { config, seed, network }
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.network
    }

    pub fn num_parameters(&self) -> usize {
        self.network.num_parameters()
    }

    /// Registered layer names in execution order.
    pub fn layer_names(&self) -> Vec<String> {
        self.network.layer_names()
    }

    pub fn summary(&self) -> ArchitectureSummary {
        let nodes = self.network.nodes();
        let layers = nodes
            .iter()
            .skip(1)
            .map(|n| {
                let parameters = match n.op {
                    Op::Conv2d { param, .. } | Op::ConvTranspose2x2 { param, .. } => {
                        self.network.params()[param].value.len()
                    }
                    _ => 0,
                };
                LayerSummary {
                    name: n.name.clone(),
                    kind: n.op.kind().to_string(),
                    output_shape: [n.shape.0, n.shape.1, n.shape.2],
                    parameters,
                    inputs: n.inputs.iter().map(|&i| nodes[i].name.clone()).collect(),
                }
            })
            .collect();
        ArchitectureSummary {
            config: self.config.clone(),
            layers,
            total_parameters: self.num_parameters(),
        }
    }

    fn check_input(&self, batch: &ArrayView4<T>) -> Result<()> {
        let [h, w, c] = self.config.input_shape;
        let (n, bh, bw, bc) = batch.dim();
        if n == 0 || (bh, bw, bc) != (h, w, c) {
            return Err(Error::Shape(format!(
                "expected a non-empty batch of {h}x{w}x{c} images, got {n}x{bh}x{bw}x{bc}"
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate (for backpropagation).
    pub fn forward_activations(&self, batch: ArrayView4<T>) -> Result<Activations<T>> {
        self.check_input(&batch)?;
        self.network.forward(batch)
    }

    /// Forward pass returning probabilities plus the requested feature maps.
    pub fn forward(&self, batch: ArrayView4<T>, capture: &[&str]) -> Result<ForwardTrace<T>> {
        let ids: Vec<NodeId> = capture
            .iter()
            .map(|name| self.network.require_node(name))
            .collect::<Result<_>>()?;
        let mut acts = self.forward_activations(batch)?;
        let features = capture
            .iter()
            .zip(&ids)
            .map(|(name, &id)| (name.to_string(), acts.values[id].clone()))
            .collect();
        let pooling_indices = match self.config.decoder_mode {
            DecoderMode::IndexUnpool => self
                .network
                .nodes()
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n.op, Op::MaxPool2x2))
                .map(|(id, n)| PoolingIndices {
                    layer: n.name.clone(),
                    window_argmax: acts.pool_indices[id].clone().expect("pool node records indices"),
                })
                .collect(),
            DecoderMode::TransposedConvSkip => Vec::new(),
        };
        let output = acts.values.pop().expect("non-empty network");
        Ok(ForwardTrace {
            output,
            features,
            pooling_indices,
        })
    }

    /// Label grid for one `H x W` image (single-channel models).
    pub fn predict_mask(&self, image: ArrayView2<T>) -> Result<Array2<u8>> {
        let (h, w) = image.dim();
        let batch = image
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((1, h, w, 1))
            .map_err(|e| Error::Shape(e.to_string()))?;
        let trace = self.forward(batch.view(), &[])?;
        Ok(argmax_mask(trace.output.index_axis(Axis(0), 0)))
    }
}

/// Per-pixel argmax over the class axis; ties go to the lowest class index.
pub fn argmax_mask<T: Scalar>(probs: ArrayView3<T>) -> Array2<u8> {
    let (h, w, _) = probs.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let lane = probs.slice(ndarray::s![y, x, ..]);
        let mut best = 0usize;
        for (c, &v) in lane.iter().enumerate().skip(1) {
            if v > lane[best] {
                best = c;
            }
        }
        best as u8
    })
}
