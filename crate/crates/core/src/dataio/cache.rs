//! Preprocessed dataset cache: one tensor archive holding both split
//! partitions plus their ids and the split parameters. The encoding is a
//! pure function of its inputs, so identical data gives identical bytes.

use std::path::Path;

use ndarray::{Array2, Array3};
use safetensors::Dtype;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, PreprocessedSample};
use crate::archive::{self, Archive, OwnedTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CACHE_FORMAT: &str = "octseg-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format: String,
    pub seed: u64,
    pub ratio: f64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

fn dims(split: &DatasetSplit) -> Result<(usize, usize, usize)> {
    let first = split
        .train
        .iter()
        .chain(&split.validation)
        .next()
        .ok_or_else(|| Error::InvalidArgument("cannot cache an empty split".into()))?;
    let d = first.onehot_mask.dim();
    for s in split.train.iter().chain(&split.validation) {
        if s.onehot_mask.dim() != d || s.image.dim() != (d.0, d.1) {
            return Err(Error::validation(&s.source_id, "samples differ in resolution"));
        }
    }
    Ok(d)
}

fn partition_tensors(prefix: &str, samples: &[PreprocessedSample], out: &mut Vec<OwnedTensor>) {
    if samples.is_empty() {
        return;
    }
    let (h, w, c) = samples[0].onehot_mask.dim();
    let mut images = Vec::with_capacity(samples.len() * h * w * 4);
    let mut masks = Vec::with_capacity(samples.len() * h * w * c);
    for s in samples {
        f32::extend_le_bytes(s.image.as_standard_layout().as_slice().unwrap(), &mut images);
        masks.extend(s.onehot_mask.iter().copied());
    }
    out.push(OwnedTensor {
        name: format!("{prefix}/images"),
        dtype: Dtype::F32,
        shape: vec![samples.len(), h, w],
        bytes: images,
    });
    out.push(OwnedTensor {
        name: format!("{prefix}/masks"),
        dtype: Dtype::U8,
        shape: vec![samples.len(), h, w, c],
        bytes: masks,
    });
}

pub fn write_cache(split: &DatasetSplit, path: &Path) -> Result<()> {
    let (height, width, num_classes) = dims(split)?;
    let header = CacheHeader {
        format: CACHE_FORMAT.into(),
        seed: split.seed,
        ratio: split.ratio,
        height,
        width,
        num_classes,
        train_ids: split.train.iter().map(|s| s.source_id.clone()).collect(),
        validation_ids: split.validation.iter().map(|s| s.source_id.clone()).collect(),
    };
    let mut tensors = Vec::new();
    partition_tensors("train", &split.train, &mut tensors);
    partition_tensors("validation", &split.validation, &mut tensors);
    archive::write(path, &tensors, &serde_json::to_string(&header).expect("header serializes"))
}

fn read_partition(archive: &Archive, path: &Path, prefix: &str, ids: &[String], header: &CacheHeader) -> Result<Vec<PreprocessedSample>> {
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w, c) = (header.height, header.width, header.num_classes);
    let n = ids.len();
    let (dt, shape, images) = archive.tensor(&format!("{prefix}/images"))?;
    if dt != Dtype::F32 || shape != [n, h, w] {
        return Err(Error::format(path, format!("{prefix}/images has shape {shape:?} {dt:?}")));
    }
    let images = <f32 as Scalar>::from_le_bytes(images);
    let (dt, shape, masks) = archive.tensor(&format!("{prefix}/masks"))?;
    if dt != Dtype::U8 || shape != [n, h, w, c] {
        return Err(Error::format(path, format!("{prefix}/masks has shape {shape:?} {dt:?}")));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| PreprocessedSample {
            image: Array2::from_shape_vec((h, w), images[i * h * w..(i + 1) * h * w].to_vec()).unwrap(),
            onehot_mask: Array3::from_shape_vec((h, w, c), masks[i * h * w * c..(i + 1) * h * w * c].to_vec()).unwrap(),
            source_id: id.clone(),
        })
        .collect())
}

pub fn read_cache(path: &Path) -> Result<(DatasetSplit, CacheHeader)> {
    let archive = Archive::open(path)?;
    let header: CacheHeader =
        serde_json::from_str(&archive.header()?).map_err(|e| Error::format(path, format!("bad cache header: {e}")))?;
    if header.format != CACHE_FORMAT {
        return Err(Error::format(path, format!("unsupported cache format `{}`", header.format)));
    }
    let train = read_partition(&archive, path, "train", &header.train_ids, &header)?;
    let validation = read_partition(&archive, path, "validation", &header.validation_ids, &header)?;
    Ok((
        DatasetSplit {
            train,
            validation,
            seed: header.seed,
            ratio: header.ratio,
        },
        header,
    ))
}
