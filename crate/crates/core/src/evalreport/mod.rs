//! Quantitative evaluation and the report artifacts built on it.
//!
//! Metrics are micro-aggregated: pixel counts are pooled over all samples
//! before any ratio is taken. The reported loss is the mean of per-sample
//! hybrid losses.

mod plots;

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::Serialize;

use crate::dataio::{batch_images, batch_targets, PreprocessedSample};
use crate::error::{Error, Result};
use crate::objectives::{comparison_csv, hybrid_loss, ClassCounts, LossConfig, MetricsReport};
use crate::scalar::Scalar;
use crate::segnet::{argmax_mask, SegmentationModel};
use crate::trainer::EpochLog;
use crate::visual::{grayscale, label_image, save_png};

pub use plots::{curve_families, plot_training_curves, CurveFamily};

/// Batch size used by [`evaluate`].
pub const EVAL_BATCH: usize = 8;

/// Per-sample prediction and statistics.
#[derive(Clone, Debug)]
pub struct SampleResult {
    pub source_id: String,
    pub loss: f64,
    pub prediction: Array2<u8>,
    pub counts: ClassCounts,
}

pub fn predict_samples<T: Scalar>(
    model: &SegmentationModel<T>,
    samples: &[PreprocessedSample],
    loss: &LossConfig,
    batch_size: usize,
) -> Result<Vec<SampleResult>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let num_classes = model.config().num_classes;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let x = batch_images::<T>(chunk);
        let y = batch_targets::<T>(chunk);
        let probs = model.forward(x.view(), &[])?.output;
        for (b, sample) in chunk.iter().enumerate() {
            let p = probs.index_axis(Axis(0), b);
            let sample_loss = hybrid_loss(y.index_axis(Axis(0), b), p.view(), loss)?.as_f64();
            let prediction = argmax_mask(p);
            let mut counts = ClassCounts::new(num_classes);
            counts.update(sample.mask().view(), prediction.view())?;
            out.push(SampleResult {
                source_id: sample.source_id.clone(),
                loss: sample_loss,
                prediction,
                counts,
            });
        }
    }
    Ok(out)
}

/// Pool per-sample results into one report.
pub fn aggregate(results: &[SampleResult]) -> Result<MetricsReport> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to aggregate".into()))?;
    let mut counts = ClassCounts::new(first.counts.num_classes());
    for r in results {
        counts.merge(&r.counts);
    }
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
    Ok(MetricsReport::from_counts(&counts, loss))
}

pub fn evaluate<T: Scalar>(model: &SegmentationModel<T>, samples: &[PreprocessedSample], loss: &LossConfig) -> Result<MetricsReport> {
    evaluate_batched(model, samples, loss, EVAL_BATCH)
}

pub fn evaluate_batched<T: Scalar>(
    model: &SegmentationModel<T>,
    samples: &[PreprocessedSample],
    loss: &LossConfig,
    batch_size: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty sample set".into()));
    }
    aggregate(&predict_samples(model, samples, loss, batch_size)?)
}

/// Pixels where the labels differ, plus `confusion[[true, predicted]]`
/// counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Misclassification {
    /// 1 where the prediction is wrong.
    pub errors: Array2<u8>,
    pub confusion: Array2<u64>,
}

impl Misclassification {
    pub fn error_count(&self) -> usize {
        self.errors.iter().filter(|&&e| e != 0).count()
    }

    /// White error pixels on black.
    pub fn to_image(&self) -> RgbImage {
        let (h, w) = self.errors.dim();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let v = if self.errors[[y as usize, x as usize]] != 0 { 255 } else { 0 };
            Rgb([v, v, v])
        })
    }
}

pub fn misclassification_map(gt: ArrayView2<u8>, pred: ArrayView2<u8>, num_classes: usize) -> Result<Misclassification> {
    if gt.dim() != pred.dim() {
        return Err(Error::Shape(format!("masks differ: {:?} vs {:?}", gt.dim(), pred.dim())));
    }
    let mut confusion = Array2::zeros((num_classes, num_classes));
    let mut errors = Array2::zeros(gt.raw_dim());
    for ((&t, &p), e) in gt.iter().zip(pred.iter()).zip(errors.iter_mut()) {
        if t as usize >= num_classes || p as usize >= num_classes {
            return Err(Error::InvalidArgument(format!("label outside 0..{num_classes}")));
        }
        confusion[[t as usize, p as usize]] += 1;
        *e = (t != p) as u8;
    }
    Ok(Misclassification { errors, confusion })
}

/// Gap between triptych panels, in pixels.
const PANEL_GAP: u32 = 4;

/// Input | ground truth | prediction, masks colored with one shared palette.
pub fn comparison_image(image: ArrayView2<f32>, gt: ArrayView2<u8>, pred: ArrayView2<u8>, num_classes: usize) -> Result<RgbImage> {
    if image.dim() != gt.dim() || gt.dim() != pred.dim() {
        return Err(Error::Shape(format!(
            "image {:?}, ground truth {:?}, prediction {:?}",
            image.dim(),
            gt.dim(),
            pred.dim()
        )));
    }
    let (h, w) = (image.nrows() as u32, image.ncols() as u32);
    let mut canvas = RgbImage::from_pixel(3 * w + 2 * PANEL_GAP, h, Rgb([255, 255, 255]));
    let panels = [grayscale(image), label_image(gt, num_classes), label_image(pred, num_classes)];
    for (i, panel) in panels.iter().enumerate() {
        image::imageops::replace(&mut canvas, panel, (i as u32 * (w + PANEL_GAP)) as i64, 0);
    }
    Ok(canvas)
}

pub fn render_comparison(sample: &PreprocessedSample, prediction: ArrayView2<u8>, num_classes: usize, path: &Path) -> Result<RgbImage> {
    let img = comparison_image(sample.image.view(), sample.mask().view(), prediction, num_classes)?;
    save_png(&img, path)?;
    Ok(img)
}

/// Files written by [`write_reports`].
#[derive(Clone, Debug, Serialize)]
pub struct EvaluationArtifacts {
    pub metrics: MetricsReport,
    pub metrics_json: PathBuf,
    pub classwise_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub confusion_csv: PathBuf,
    pub curves: Vec<PathBuf>,
    pub comparisons: Vec<PathBuf>,
    pub error_maps: Vec<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn confusion_csv(confusion: &Array2<u64>) -> String {
    let n = confusion.nrows();
    let mut out = String::from("true\\predicted");
    for c in 0..n {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    for t in 0..n {
        out.push_str(&t.to_string());
        for p in 0..n {
            out.push_str(&format!(",{}", confusion[[t, p]]));
        }
        out.push('\n');
    }
    out
}

/// Evaluate `samples` and write the report tree under `root`:
/// `metrics.json`, `summary.csv`, `classwise.csv`, `confusion.csv`,
/// `curves/*.png` (when a history is given), `compare/<id>.png` and
/// `errors/<id>.png`.
pub fn write_reports<T: Scalar>(
    root: &Path,
    model: &SegmentationModel<T>,
    samples: &[PreprocessedSample],
    loss: &LossConfig,
    history: Option<&[EpochLog]>,
    batch_size: usize,
) -> Result<EvaluationArtifacts> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty sample set".into()));
    }
    let num_classes = model.config().num_classes;
    let results = predict_samples(model, samples, loss, batch_size)?;
    let metrics = aggregate(&results)?;
    for sub in ["compare", "errors"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut confusion = Array2::<u64>::zeros((num_classes, num_classes));
    let mut comparisons = Vec::new();
    let mut error_maps = Vec::new();
    for (sample, result) in samples.iter().zip(&results) {
        let path = root.join("compare").join(format!("{}.png", sample.source_id));
        render_comparison(sample, result.prediction.view(), num_classes, &path)?;
        comparisons.push(path);
        let mis = misclassification_map(sample.mask().view(), result.prediction.view(), num_classes)?;
        Zip::from(&mut confusion).and(&mis.confusion).for_each(|a, &b| *a += b);
        let path = root.join("errors").join(format!("{}.png", sample.source_id));
        save_png(&mis.to_image(), &path)?;
        error_maps.push(path);
    }

    let curves = match history {
        Some(h) if !h.is_empty() => plot_training_curves(h, &root.join("curves"))?,
        _ => Vec::new(),
    };
    let artifacts = EvaluationArtifacts {
        metrics_json: root.join("metrics.json"),
        classwise_csv: root.join("classwise.csv"),
        summary_csv: root.join("summary.csv"),
        confusion_csv: root.join("confusion.csv"),
        curves,
        comparisons,
        error_maps,
        metrics,
    };
    write_text(
        &artifacts.metrics_json,
        &serde_json::to_string_pretty(&artifacts.metrics).expect("metrics serialize"),
    )?;
    write_text(&artifacts.classwise_csv, &artifacts.metrics.classwise_csv())?;
    write_text(&artifacts.summary_csv, &artifacts.metrics.summary_csv())?;
    write_text(&artifacts.confusion_csv, &confusion_csv(&confusion))?;
    Ok(artifacts)
}

/// Side-by-side table of several evaluated sets, e.g. training and
/// validation.
pub fn write_comparison_table(path: &Path, sets: &[(&str, &MetricsReport)]) -> Result<()> {
    write_text(path, &comparison_csv(sets))
}
