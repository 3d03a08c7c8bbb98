//! Dataset ingest and preprocessing: loading, min-max normalization,
//! resizing, one-hot encoding, seeded splitting and the on-disk cache.
//!
//! Preprocessed images are stored as `f32`; models of either precision
//! convert batches on the fly (see [`batch_images`]).

mod cache;
mod loader;
pub mod synthetic;

use std::collections::BTreeSet;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use cache::{read_cache, write_cache, CacheHeader, CACHE_FORMAT};
pub use loader::{load_dataset, load_dataset_with, write_npy_sample, DatasetFormat, LoaderOptions};

/// Number of retinal layer labels in the masks.
pub const NUM_CLASSES: usize = 8;

/// Spatial size every sample is resized to.
pub const TARGET_SIZE: (usize, usize) = (256, 256);

/// One B-scan as stored on disk, with its layer mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    /// Raw intensities (integral for the supported containers).
    pub image: Array2<f64>,
    pub mask: Array2<u8>,
    pub source_id: String,
}

impl RawSample {
    /// Check the shape and label-range invariants.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.image.is_empty() {
            return Err(Error::validation(&self.source_id, "empty image"));
        }
        if self.image.dim() != self.mask.dim() {
            return Err(Error::validation(
                &self.source_id,
                format!("image is {:?} but mask is {:?}", self.image.dim(), self.mask.dim()),
            ));
        }
        if let Some(((y, x), &v)) = self.mask.indexed_iter().find(|(_, &v)| v as usize >= num_classes) {
            return Err(Error::validation(
                &self.source_id,
                format!("label {v} at ({y}, {x}) outside 0..{num_classes}"),
            ));
        }
        Ok(())
    }
}

/// A normalized, resized sample with a one-hot mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedSample {
    /// Values in `[0, 1]`.
    pub image: Array2<f32>,
    /// `H x W x C`, exactly one 1 per pixel.
    pub onehot_mask: Array3<u8>,
    pub source_id: String,
}

impl PreprocessedSample {
    pub fn mask(&self) -> Array2<u8> {
        decode_one_hot(self.onehot_mask.view())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PreprocessedSample>,
    pub validation: Vec<PreprocessedSample>,
    pub seed: u64,
    pub ratio: f64,
}

/// Min-max scale to `[0, 1]`; a constant image maps to zeros.
pub fn normalize_image(image: ArrayView2<f64>) -> Array2<f32> {
    let (lo, hi) = image
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(image.raw_dim());
    }
    image.mapv(|v| ((v - lo) / range) as f32)
}

fn check_target(target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::InvalidArgument(format!("resize target {target:?} must be positive")));
    }
    Ok(())
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(image: ArrayView2<T>, target: (usize, usize)) -> Result<Array2<T>> {
    check_target(target)?;
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty image".into()));
    }
    if (h, w) == target {
        return Ok(image.to_owned());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, T)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, T::of(s - i0 as f64))
            })
            .collect()
    };
    let ys = taps(h, target.0);
    let xs = taps(w, target.1);
    Ok(Array2::from_shape_fn(target, |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = image[[y0, x0]] * (T::one() - fx) + image[[y0, x1]] * fx;
        let bottom = image[[y1, x0]] * (T::one() - fx) + image[[y1, x1]] * fx;
        top * (T::one() - fy) + bottom * fy
    }))
}

/// Nearest-neighbor resize: output `d` reads input `floor((d + 0.5) * in / out)`.
pub fn resize_nearest<A: Copy>(grid: ArrayView2<A>, target: (usize, usize)) -> Result<Array2<A>> {
    check_target(target)?;
    let (h, w) = grid.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("cannot resize an empty grid".into()));
    }
    let index = |d: usize, n_in: usize, n_out: usize| (((d as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
    Ok(Array2::from_shape_fn(target, |(y, x)| {
        grid[[index(y, h, target.0), index(x, w, target.1)]]
    }))
}

/// Image bilinearly, mask by nearest neighbor.
pub fn resize_sample(sample: &RawSample, target: (usize, usize)) -> Result<(Array2<f64>, Array2<u8>)> {
    Ok((
        resize_bilinear(sample.image.view(), target)?,
        resize_nearest(sample.mask.view(), target)?,
    ))
}

pub fn one_hot_encode(mask: ArrayView2<u8>, num_classes: usize) -> Result<Array3<u8>> {
    let (h, w) = mask.dim();
    let mut out = Array3::zeros((h, w, num_classes));
    for ((y, x), &v) in mask.indexed_iter() {
        if v as usize >= num_classes {
            return Err(Error::validation(
                "mask",
                format!("label {v} at ({y}, {x}) outside 0..{num_classes}"),
            ));
        }
        out[[y, x, v as usize]] = 1;
    }
    Ok(out)
}

/// Inverse of [`one_hot_encode`] (first hot channel wins).
pub fn decode_one_hot(onehot: ArrayView3<u8>) -> Array2<u8> {
    onehot.map_axis(Axis(2), |lane| lane.iter().position(|&v| v != 0).unwrap_or(0) as u8)
}

/// Resize, normalize and one-hot encode a validated sample.
pub fn preprocess_sample(sample: &RawSample, target: (usize, usize), num_classes: usize) -> Result<PreprocessedSample> {
    sample.validate(num_classes)?;
    let (image, mask) = resize_sample(sample, target)?;
    Ok(PreprocessedSample {
        image: normalize_image(image.view()),
        onehot_mask: one_hot_encode(mask.view(), num_classes)
            .map_err(|e| Error::validation(&sample.source_id, e.to_string()))?,
        source_id: sample.source_id.clone(),
    })
}

/// Seeded shuffle of `0..n` split into `round(ratio * n)` training indices
/// and the rest.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * n as f64).round() as usize;
    let validation = order.split_off(n_train);
    Ok((order, validation))
}

pub fn split_dataset(samples: Vec<PreprocessedSample>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let (train_idx, val_idx) = split_indices(samples.len(), ratio, seed)?;
    let mut slots: Vec<Option<PreprocessedSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| idx.iter().map(|&i| slots[i].take().unwrap()).collect::<Vec<_>>();
    let train = take(&train_idx);
    let validation = take(&val_idx);
    Ok(DatasetSplit {
        train,
        validation,
        seed,
        ratio,
    })
}

/// Dataset facts printed by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    /// Distinct `(height, width)` resolutions with their sample counts.
    pub resolutions: Vec<((usize, usize), usize)>,
    pub labels: Vec<u8>,
    pub intensity_range: (f64, f64),
}

pub fn summarize(samples: &[RawSample]) -> DatasetSummary {
    let mut resolutions: Vec<((usize, usize), usize)> = Vec::new();
    let mut labels = BTreeSet::new();
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        match resolutions.iter_mut().find(|(r, _)| *r == s.image.dim()) {
            Some((_, n)) => *n += 1,
            None => resolutions.push((s.image.dim(), 1)),
        }
        labels.extend(s.mask.iter().copied());
        for &v in &s.image {
            range = (range.0.min(v), range.1.max(v));
        }
    }
    resolutions.sort();
    DatasetSummary {
        count: samples.len(),
        resolutions,
        labels: labels.into_iter().collect(),
        intensity_range: range,
    }
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "samples: {}", self.count)?;
        for ((h, w), n) in &self.resolutions {
            writeln!(f, "resolution: {h}x{w} ({n} samples)")?;
        }
        let labels: Vec<String> = self.labels.iter().map(u8::to_string).collect();
        writeln!(f, "unique mask values ({}): {}", self.labels.len(), labels.join(", "))?;
        write!(f, "intensity range: [{}, {}]", self.intensity_range.0, self.intensity_range.1)
    }
}

/// Stack images into a `B x H x W x 1` batch.
pub fn batch_images<'a, T: Scalar>(samples: impl IntoIterator<Item = &'a PreprocessedSample>) -> Array4<T> {
    let samples: Vec<_> = samples.into_iter().collect();
    let (h, w) = samples.first().map_or((0, 0), |s| s.image.dim());
    Array4::from_shape_fn((samples.len(), h, w, 1), |(b, y, x, _)| T::of(samples[b].image[[y, x]] as f64))
}

/// Stack one-hot masks into a `B x H x W x C` batch.
pub fn batch_targets<'a, T: Scalar>(samples: impl IntoIterator<Item = &'a PreprocessedSample>) -> Array4<T> {
    let samples: Vec<_> = samples.into_iter().collect();
    let (h, w, c) = samples.first().map_or((0, 0, 0), |s| s.onehot_mask.dim());
    Array4::from_shape_fn((samples.len(), h, w, c), |(b, y, x, k)| {
        if samples[b].onehot_mask[[y, x, k]] != 0 {
            T::one()
        } else {
            T::zero()
        }
    })
}
