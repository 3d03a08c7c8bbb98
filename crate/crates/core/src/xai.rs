//! Multi-class Grad-CAM for segmentation networks.
//!
//! The class score `Y^c` is the sum over all pixels of the predicted
//! probability of class `c` (or of its pre-softmax logit, see
//! [`ScoreKind`]). For a chosen layer with activations `A` (`H x W x K`):
//!
//! * `alpha_k = mean_ij dY^c / dA_ijk`
//! * heatmap = `ReLU(sum_k alpha_k A_k)`, bilinearly resized to the input
//!   size and divided by its maximum (all-zero maps stay zero).

use std::fmt::Write as _;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::resize_bilinear;
use crate::error::{Error, Result};
use crate::nn::{BackwardRequest, Network, Op};
use crate::scalar::Scalar;
use crate::segnet::SegmentationModel;
use crate::visual::jet;

/// Heatmap weight in [`overlay`]; the scan keeps the remainder.
pub const OVERLAY_ALPHA: f64 = 0.4;

/// Layers explained by default: the last decoder conv and the output head.
pub const DEFAULT_LAYERS: [&str; 2] = ["conv2d_19", "conv2d_20"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Sum of softmax probabilities.
    #[default]
    Probability,
    /// Sum of the softmax inputs.
    Logit,
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(ScoreKind::Probability),
            "logit" => Ok(ScoreKind::Logit),
            other => Err(Error::Config(format!("unknown score kind `{other}` (probability | logit)"))),
        }
    }
}

/// Which classes to explain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum ClassSelection {
    #[default]
    All,
    Only(Vec<usize>),
}

impl ClassSelection {
    pub fn resolve(&self, num_classes: usize) -> Result<Vec<usize>> {
        match self {
            ClassSelection::All => Ok((0..num_classes).collect()),
            ClassSelection::Only(ids) => {
                if let Some(bad) = ids.iter().find(|&&c| c >= num_classes) {
                    return Err(Error::InvalidArgument(format!("class {bad} outside 0..{num_classes}")));
                }
                Ok(ids.clone())
            }
        }
    }
}

impl FromStr for ClassSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ClassSelection::All);
        }
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad class list `{s}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ClassSelection::Only)
    }
}

/// Grad-CAM output for one class at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCamResult {
    pub class_id: usize,
    pub layer: String,
    /// Per-channel weights of the layer.
    pub alpha: Array1<f64>,
    /// Normalized heatmap at input resolution, values in `[0, 1]`.
    pub heatmap: Array2<f64>,
    /// Maximum of the normalized heatmap: 1, or 0 for an all-zero map.
    pub max_activation: f64,
    pub mean_intensity: f64,
}

impl GradCamResult {
    /// Scalar summary of `alpha`: its mean over channels.
    pub fn feature_importance(&self) -> f64 {
        self.alpha.mean().unwrap_or(0.0)
    }
}

/// `Y^c`: sum of channel `class_id` over every pixel of `output`.
pub fn class_score<T: Scalar>(output: ArrayView4<T>, class_id: usize) -> Result<T> {
    let classes = output.dim().3;
    if class_id >= classes {
        return Err(Error::InvalidArgument(format!("class {class_id} outside 0..{classes}")));
    }
    Ok(output.slice(s![.., .., .., class_id]).sum())
}

/// Global average pooling of `H x W x K` gradients.
pub fn compute_alpha<T: Scalar>(gradients: ArrayView3<T>) -> Result<Array1<T>> {
    let (h, w, _) = gradients.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty feature map".into()));
    }
    Ok(gradients.sum_axis(Axis(0)).sum_axis(Axis(0)) / T::of((h * w) as f64))
}

/// `ReLU(sum_k alpha_k A_k)` at the layer's own resolution.
pub fn weighted_activation_map<T: Scalar>(features: ArrayView3<T>, alpha: ArrayView1<T>) -> Result<Array2<T>> {
    let k = features.dim().2;
    if k != alpha.len() {
        return Err(Error::Shape(format!("{k} feature channels but {} weights", alpha.len())));
    }
    Ok(features.map_axis(Axis(2), |a| a.dot(&alpha).max(T::zero())))
}

/// Divide by the maximum so the peak is exactly 1; all-zero maps are
/// returned unchanged.
pub fn normalize_heatmap(map: Array2<f64>) -> Array2<f64> {
    let max = map.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        map.mapv(|v| v / max)
    } else {
        map
    }
}

/// Full heatmap: weighted map, bilinear resize to `size`, max-normalize.
pub fn compute_heatmap<T: Scalar>(features: ArrayView3<T>, alpha: ArrayView1<T>, size: (usize, usize)) -> Result<Array2<f64>> {
    let raw = weighted_activation_map(features, alpha)?.mapv(T::as_f64);
    let resized = resize_bilinear(raw.view(), size)?;
    // Interpolation of non-negative values stays non-negative.
    Ok(normalize_heatmap(resized.mapv(|v| v.max(0.0))))
}

pub fn mean_intensity(heatmap: ArrayView2<f64>) -> f64 {
    if heatmap.is_empty() {
        return 0.0;
    }
    heatmap.sum() / heatmap.len() as f64
}

/// Node the class score is read from, for the given score kind.
fn score_node<T: Scalar>(network: &Network<T>, score: ScoreKind) -> usize {
    let out = network.output_node();
    match (score, &network.nodes()[out].op) {
        (ScoreKind::Logit, Op::Softmax) => network.nodes()[out].inputs[0],
        _ => out,
    }
}

/// Grad-CAM of `classes` at `layer` for a single-image batch
/// (`1 x H x W x C`), one independent backward pass per class.
pub fn gradcam_network<T: Scalar>(
    network: &Network<T>,
    image: ArrayView4<T>,
    layer: &str,
    classes: &[usize],
    score: ScoreKind,
) -> Result<Vec<GradCamResult>> {
    let layer_id = network.require_node(layer)?;
    if image.dim().0 != 1 {
        return Err(Error::Shape(format!("Grad-CAM takes one image, got a batch of {}", image.dim().0)));
    }
    let from = score_node(network, score);
    if layer_id > from {
        return Err(Error::InvalidArgument(format!("layer `{layer}` does not feed the class score")));
    }
    let (_, h, w, _) = image.dim();
    let acts = network.forward(image)?;
    let scores = &acts.values[from];
    let num_classes = scores.dim().3;
    if let Some(bad) = classes.iter().find(|&&c| c >= num_classes) {
        return Err(Error::InvalidArgument(format!("class {bad} outside 0..{num_classes}")));
    }
    let features = acts.values[layer_id].index_axis(Axis(0), 0);

    classes
        .iter()
        .map(|&class_id| {
            let mut seed = Array4::<T>::zeros(scores.raw_dim());
            seed.slice_mut(s![.., .., .., class_id]).fill(T::one());
            let grads = network.backward(
                &acts,
                from,
                seed,
                &BackwardRequest {
                    param_grads: false,
                    capture: &[layer_id],
                },
            );
            let g = &grads.captured[&layer_id];
            let alpha = compute_alpha(g.index_axis(Axis(0), 0))?;
            let heatmap = compute_heatmap(features.view(), alpha.view(), (h, w))?;
            let max_activation = heatmap.iter().copied().fold(0.0, f64::max);
            Ok(GradCamResult {
                class_id,
                layer: layer.to_string(),
                alpha: alpha.mapv(T::as_f64),
                mean_intensity: mean_intensity(heatmap.view()),
                max_activation,
                heatmap,
            })
        })
        .collect()
}

/// One Grad-CAM result per selected class for a single `H x W` image.
pub fn multi_class_gradcam<T: Scalar>(
    model: &SegmentationModel<T>,
    image: ArrayView2<T>,
    layer: &str,
    classes: &ClassSelection,
    score: ScoreKind,
) -> Result<Vec<GradCamResult>> {
    model.network().require_node(layer)?;
    let classes = classes.resolve(model.config().num_classes)?;
    let (h, w) = image.dim();
    let batch = image
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, h, w, 1))
        .map_err(|e| Error::Shape(e.to_string()))?;
    gradcam_network(model.network(), batch.view(), layer, &classes, score)
}

/// Jet-colored heatmap blended over the grayscale scan.
pub fn overlay(heatmap: ArrayView2<f64>, image: ArrayView2<f32>) -> Result<RgbImage> {
    if heatmap.dim() != image.dim() {
        return Err(Error::Shape(format!(
            "heatmap {:?} vs image {:?}",
            heatmap.dim(),
            image.dim()
        )));
    }
    let (h, w) = image.dim();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let gray = image[[y, x]].clamp(0.0, 1.0) as f64 * 255.0;
        let color = jet(heatmap[[y, x]]);
        Rgb(color.map(|c| ((1.0 - OVERLAY_ALPHA) * gray + OVERLAY_ALPHA * c as f64).round() as u8))
    }))
}

/// File name of one exported overlay.
pub fn overlay_file_name(source_id: &str, class_id: usize, layer: &str) -> String {
    format!("{source_id}_class{class_id}_{layer}.png")
}

/// Statistics table: one row per image, layer and class.
pub fn statistics_csv(rows: &[(&str, &GradCamResult)]) -> String {
    let mut out = String::from("source_id,layer,class,feature_importance,max_activation,mean_intensity\n");
    for (id, r) in rows {
        writeln!(
            out,
            "{id},{},{},{},{},{}",
            r.layer,
            r.class_id,
            r.feature_importance(),
            r.max_activation,
            r.mean_intensity
        )
        .unwrap();
    }
    out
}
