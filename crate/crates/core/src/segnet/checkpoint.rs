//! Checkpoint archive: every layer's `kernel` / `bias` tensor plus a JSON
//! header carrying the architecture, init seed and dtype.

use std::path::Path;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, SegmentationModel};
use crate::archive::{self, Archive, OwnedTensor};
use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "octseg-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub dtype: String,
    pub seed: u64,
    pub config: ArchitectureConfig,
    /// Training epoch (1-based) the weights come from, if any.
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_loss: Option<f64>,
}

pub fn save_checkpoint<T: Scalar>(
    model: &SegmentationModel<T>,
    path: &Path,
    epoch: Option<usize>,
    val_loss: Option<f64>,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        dtype: T::DTYPE.into(),
        seed: model.seed(),
        config: model.config().clone(),
        epoch,
        val_loss,
    };
    let mut tensors = Vec::with_capacity(model.network().params().len() * 2);
    for p in model.network().params() {
        let mut bytes = Vec::new();
        T::extend_le_bytes(p.value.kernel.as_standard_layout().as_slice().unwrap(), &mut bytes);
        tensors.push(OwnedTensor {
            name: format!("{}/kernel", p.layer),
            dtype: T::SAFETENSORS_DTYPE,
            shape: p.value.kernel.shape().to_vec(),
            bytes,
        });
        let mut bytes = Vec::new();
        T::extend_le_bytes(p.value.bias.as_slice().unwrap(), &mut bytes);
        tensors.push(OwnedTensor {
            name: format!("{}/bias", p.layer),
            dtype: T::SAFETENSORS_DTYPE,
            shape: vec![p.value.bias.len()],
            bytes,
        });
    }
    let json = serde_json::to_string(&header).expect("header serializes");
    archive::write(path, &tensors, &json)
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let header: CheckpointHeader = serde_json::from_str(&Archive::open(path)?.header()?)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format `{}`",
            path.display(),
            header.format
        )));
    }
    Ok(header)
}

/// Load a checkpoint. When `expected` is given the stored architecture must
/// match it exactly.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    expected: Option<&ArchitectureConfig>,
) -> Result<(SegmentationModel<T>, CheckpointHeader)> {
    let archive = Archive::open(path)?;
    let header: CheckpointHeader = serde_json::from_str(&archive.header()?)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", header.format)));
    }
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} weights, {} requested",
            header.dtype,
            T::DTYPE
        )));
    }
    if let Some(want) = expected {
        if *want != header.config {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {}, configuration expects {}",
                serde_json::to_string(&header.config).unwrap(),
                serde_json::to_string(want).unwrap()
            )));
        }
    }
    let builder = header.config.graph()?;
    let template: crate::nn::Network<T> = header.config.graph()?.build(0);
    let mut params = Vec::with_capacity(template.params().len());
    for p in template.params() {
        let read = |suffix: &str, want: &[usize]| -> Result<Vec<T>> {
            let name = format!("{}/{suffix}", p.layer);
            let (dtype, shape, bytes) = archive.tensor(&name)?;
            if dtype != T::SAFETENSORS_DTYPE || shape != want {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected {want:?} {}, found {shape:?} {dtype:?}",
                    T::DTYPE
                )));
            }
            Ok(T::from_le_bytes(bytes))
        };
        let kshape = p.value.kernel.shape();
        let kernel = Array4::from_shape_vec((kshape[0], kshape[1], kshape[2], kshape[3]), read("kernel", kshape)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = Array1::from_vec(read("bias", &[p.value.bias.len()])?);
        params.push(LayerParams { kernel, bias });
    }
    let network = builder.with_params(params)?;
    Ok((
        SegmentationModel::from_parts(header.config.clone(), header.seed, network),
        header,
    ))
}
