//! Readers for the two accepted on-disk layouts (see `DATA_FORMAT.md`).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use npyz::{DType, NpyFile, Order, TypeChar, WriterBuilder};
use serde::{Deserialize, Serialize};

use super::{RawSample, NUM_CLASSES};
use crate::error::{Error, Result};

/// Tolerance when coercing float mask values to integer labels.
const LABEL_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Pick up every recognised file in the directory.
    #[default]
    Auto,
    /// MATLAB v5 containers with an image stack and manual layer boundaries.
    Mat,
    /// `<id>_img.npy` / `<id>_mask.npy` pairs.
    Npy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoaderOptions {
    pub format: DatasetFormat,
    /// Name of the image stack inside `.mat` files.
    pub image_field: String,
    /// Prefix of the boundary arrays inside `.mat` files; one sample is
    /// produced per matching array (grader) and annotated slice.
    pub layer_field_prefix: String,
    pub num_classes: usize,
}

impl Default for LoaderOptions {
    fn default() -> Self {
        LoaderOptions {
            format: DatasetFormat::Auto,
            image_field: "images".into(),
            layer_field_prefix: "manualLayers".into(),
            num_classes: NUM_CLASSES,
        }
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<RawSample>> {
    load_dataset_with(path, &LoaderOptions::default())
}

/// Load every sample under `path` (a directory or a single file), sorted by
/// `source_id`.
pub fn load_dataset_with(path: &Path, options: &LoaderOptions) -> Result<Vec<RawSample>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(path, e)))
            .collect::<Result<Vec<_>>>()?;
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut samples = Vec::new();
    for file in &files {
        let name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let want_mat = options.format != DatasetFormat::Npy;
        let want_npy = options.format != DatasetFormat::Mat;
        if want_mat && name.to_ascii_lowercase().ends_with(".mat") {
            samples.extend(load_mat(file, options)?);
        } else if want_npy && name.ends_with("_img.npy") {
            samples.extend(load_npy_pair(file, options)?);
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    samples.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    for s in &samples {
        s.validate(options.num_classes)?;
    }
    Ok(samples)
}

/// Row-major array read from a `.npy` file, widened to `f64`.
struct Dense {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn read_npy(path: &Path) -> Result<Dense> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let npy = NpyFile::new(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let order = npy.order();
    let DType::Plain(ts) = npy.dtype() else {
        return Err(Error::format(path, "structured dtypes are not supported"));
    };
    let bad = |e: std::io::Error| Error::format(path, e.to_string());
    let data: Vec<f64> = match (ts.type_char(), ts.size_field()) {
        (TypeChar::Float, 4) => npy.into_vec::<f32>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Float, 8) => npy.into_vec::<f64>().map_err(bad)?,
        (TypeChar::Int, 1) => npy.into_vec::<i8>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 2) => npy.into_vec::<i16>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 4) => npy.into_vec::<i32>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Int, 8) => npy.into_vec::<i64>().map_err(bad)?.into_iter().map(|v| v as f64).collect(),
        (TypeChar::Uint, 1) => npy.into_vec::<u8>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 2) => npy.into_vec::<u16>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 4) => npy.into_vec::<u32>().map_err(bad)?.into_iter().map(f64::from).collect(),
        (TypeChar::Uint, 8) => npy.into_vec::<u64>().map_err(bad)?.into_iter().map(|v| v as f64).collect(),
        (TypeChar::Bool, _) => npy.into_vec::<bool>().map_err(bad)?.into_iter().map(|b| b as u8 as f64).collect(),
        _ => return Err(Error::format(path, format!("unsupported dtype {ts}"))),
    };
    let data = match order {
        Order::C => data,
        Order::Fortran => {
            let reversed: Vec<usize> = shape.iter().rev().copied().collect();
            let arr = ndarray::ArrayD::from_shape_vec(reversed, data).map_err(|e| Error::format(path, e.to_string()))?;
            arr.reversed_axes().as_standard_layout().iter().copied().collect()
        }
    };
    Ok(Dense { shape, data })
}

/// Split a 2-D `(H, W)` or 3-D `(N, H, W)` array into `(suffix, grid)` slices.
fn slices(path: &Path, dense: Dense) -> Result<Vec<(Option<usize>, Array2<f64>)>> {
    match dense.shape[..] {
        [h, w] => Ok(vec![(None, Array2::from_shape_vec((h, w), dense.data).unwrap())]),
        [n, h, w] => Ok(dense
            .data
            .chunks_exact(h * w)
            .take(n)
            .enumerate()
            .map(|(i, c)| (Some(i), Array2::from_shape_vec((h, w), c.to_vec()).unwrap()))
            .collect()),
        _ => Err(Error::format(path, format!("expected 2-D or 3-D array, found shape {:?}", dense.shape))),
    }
}

/// Round float labels to integers; NaN (unannotated) becomes 0.
fn coerce_labels(source_id: &str, grid: &Array2<f64>, num_classes: usize) -> Result<Array2<u8>> {
    let mut out = Array2::zeros(grid.raw_dim());
    for ((y, x), &v) in grid.indexed_iter() {
        if v.is_nan() {
            continue;
        }
        let r = v.round();
        if (v - r).abs() > LABEL_TOLERANCE {
            return Err(Error::validation(source_id, format!("non-integral label {v} at ({y}, {x})")));
        }
        if r < 0.0 || r >= num_classes as f64 {
            return Err(Error::validation(
                source_id,
                format!("label {r} at ({y}, {x}) outside 0..{num_classes}"),
            ));
        }
        out[[y, x]] = r as u8;
    }
    Ok(out)
}

fn check_image(source_id: &str, image: &Array2<f64>) -> Result<()> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(source_id, "image contains non-finite values"));
    }
    Ok(())
}

fn load_npy_pair(image_path: &Path, options: &LoaderOptions) -> Result<Vec<RawSample>> {
    let name = image_path.file_name().unwrap().to_string_lossy();
    let id = name.strip_suffix("_img.npy").unwrap().to_string();
    let mask_path = image_path.with_file_name(format!("{id}_mask.npy"));
    if !mask_path.exists() {
        return Err(Error::validation(&id, format!("missing mask file {}", mask_path.display())));
    }
    let images = read_npy(image_path)?;
    let masks = read_npy(&mask_path)?;
    if images.shape != masks.shape {
        return Err(Error::validation(
            &id,
            format!("image is {:?} but mask is {:?}", images.shape, masks.shape),
        ));
    }
    let images = slices(image_path, images)?;
    let masks = slices(&mask_path, masks)?;
    images
        .into_iter()
        .zip(masks)
        .map(|((k, image), (_, mask))| {
            let source_id = match k {
                Some(k) => format!("{id}_{k:04}"),
                None => id.clone(),
            };
            check_image(&source_id, &image)?;
            let mask = coerce_labels(&source_id, &mask, options.num_classes)?;
            Ok(RawSample { image, mask, source_id })
        })
        .collect()
}

/// Save a sample as an `<id>_img.npy` / `<id>_mask.npy` pair in `dir`.
pub fn write_npy_sample(dir: &Path, sample: &RawSample) -> Result<()> {
    let (h, w) = sample.image.dim();
    let shape = [h as u64, w as u64];
    let img_path = dir.join(format!("{}_img.npy", sample.source_id));
    let mask_path = dir.join(format!("{}_mask.npy", sample.source_id));
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e));

    let mut writer = npyz::WriteOptions::<f64>::new()
        .default_dtype()
        .shape(&shape)
        .writer(open(&img_path)?)
        .begin_nd()
        .map_err(|e| Error::io(&img_path, e))?;
    writer.extend(sample.image.iter().copied()).map_err(|e| Error::io(&img_path, e))?;
    writer.finish().map_err(|e| Error::io(&img_path, e))?;

    let mut writer = npyz::WriteOptions::<u8>::new()
        .default_dtype()
        .shape(&shape)
        .writer(open(&mask_path)?)
        .begin_nd()
        .map_err(|e| Error::io(&mask_path, e))?;
    writer.extend(sample.mask.iter().copied()).map_err(|e| Error::io(&mask_path, e))?;
    writer.finish().map_err(|e| Error::io(&mask_path, e))
}

/// Column-major MAT array widened to `f64`.
fn mat_values(array: &matfile::Array) -> Vec<f64> {
    use matfile::NumericData as N;
    match array.data() {
        N::Int8 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::UInt8 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::Int16 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::UInt16 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::Int32 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::UInt32 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::Int64 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::UInt64 { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::Single { real, .. } => real.iter().map(|&v| v as f64).collect(),
        N::Double { real, .. } => real.clone(),
    }
}

/// Pad a MATLAB size vector to three dimensions (trailing singletons are
/// dropped on save).
fn dims3(size: &[usize]) -> Option<[usize; 3]> {
    match *size {
        [a, b] => Some([a, b, 1]),
        [a, b, c] => Some([a, b, c]),
        _ => None,
    }
}

/// Layer mask for one column-wise boundary set: a pixel's label is the
/// number of (1-based) boundaries at or above its row, and rows below the
/// last boundary return to 0. Columns with any missing boundary stay 0.
pub(crate) fn mask_from_boundaries(height: usize, boundaries: &Array2<f64>) -> Array2<u8> {
    let (layers, width) = boundaries.dim();
    let mut mask = Array2::zeros((height, width));
    for x in 0..width {
        let col = boundaries.column(x);
        if col.iter().any(|b| !b.is_finite()) {
            continue;
        }
        for y in 0..height {
            let row = (y + 1) as f64;
            let count = col.iter().filter(|&&b| b.round() <= row).count();
            mask[[y, x]] = if count >= layers { 0 } else { count as u8 };
        }
    }
    mask
}

fn load_mat(path: &Path, options: &LoaderOptions) -> Result<Vec<RawSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mat = matfile::MatFile::parse(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
    let stem = path.file_stem().unwrap().to_string_lossy().to_string();

    let images = mat
        .find_by_name(&options.image_field)
        .ok_or_else(|| Error::format(path, format!("no `{}` array", options.image_field)))?;
    let [h, w, n] = dims3(images.size())
        .ok_or_else(|| Error::format(path, format!("`{}` must be 2-D or 3-D", options.image_field)))?;
    let image_values = mat_values(images);

    let mut graders: Vec<&matfile::Array> = mat
        .arrays()
        .iter()
        .filter(|a| a.name().starts_with(&options.layer_field_prefix))
        .collect();
    graders.sort_by(|a, b| a.name().cmp(b.name()));
    if graders.is_empty() {
        return Err(Error::format(
            path,
            format!("no `{}*` boundary arrays", options.layer_field_prefix),
        ));
    }

    let mut samples = Vec::new();
    for grader in graders {
        let source = format!("{stem}_{}", grader.name());
        let [layers, bw, bn] = dims3(grader.size())
            .ok_or_else(|| Error::format(path, format!("`{}` must be 2-D or 3-D", grader.name())))?;
        if bw != w || bn != n {
            return Err(Error::validation(
                &source,
                format!("boundaries are {layers}x{bw}x{bn} but images are {h}x{w}x{n}"),
            ));
        }
        let values = mat_values(grader);
        for k in 0..n {
            // Column-major: (l, x, k) -> l + layers * (x + w * k)
            let boundaries = Array2::from_shape_fn((layers, w), |(l, x)| values[l + layers * (x + w * k)]);
            if boundaries.iter().all(|b| b.is_nan()) {
                continue;
            }
            let source_id = format!("{source}_{k:03}");
            let image = Array2::from_shape_fn((h, w), |(y, x)| image_values[y + h * (x + w * k)]);
            check_image(&source_id, &image)?;
            samples.push(RawSample {
                image,
                mask: mask_from_boundaries(h, &boundaries),
                source_id,
            });
        }
    }
    Ok(samples)
}
