//! Hybrid cross-entropy + Dice objective and hard-mask evaluation metrics.
//!
//! Soft tensors are laid out with the class axis last (`... x C`), so the
//! same functions serve a single pixel, one image or a whole batch. Losses
//! average over every non-class position ("pixel").
//!
//! Training uses the soft (probability) Dice inside [`hybrid_loss`];
//! evaluation uses hard Dice / IoU on argmax label grids via
//! [`ClassCounts`].

use std::fmt::Write as _;

use ndarray::{Array, ArrayView, Axis, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceReduction {
    /// One Dice ratio over all classes pooled together.
    Global,
    /// Unweighted mean of per-class Dice ratios.
    #[default]
    MeanOverClasses,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the `(1 - Dice)` term.
    pub dice_weight: f64,
    /// Dice smoothing and log clip floor.
    pub smoothing: f64,
    pub dice_reduction: DiceReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            dice_weight: 0.5,
            smoothing: 1e-6,
            dice_reduction: DiceReduction::MeanOverClasses,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dice_weight >= 0.0) {
            return Err(Error::Config(format!("dice_weight {} must be >= 0", self.dice_weight)));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config(format!("smoothing {} must be > 0", self.smoothing)));
        }
        Ok(())
    }
}

fn check_shapes<D: Dimension, T>(y_true: &ArrayView<T, D>, y_pred: &ArrayView<T, D>) -> Result<()> {
    if y_true.shape() != y_pred.shape() {
        return Err(Error::Shape(format!(
            "y_true {:?} vs y_pred {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    if y_true.ndim() == 0 || y_true.is_empty() {
        return Err(Error::Shape("empty tensors".into()));
    }
    Ok(())
}

fn class_axis<D: Dimension>(ndim: usize) -> Axis {
    Axis(ndim - 1)
}

/// Mean over pixels of `-sum_c y log(clip(p, eps, 1))`.
pub fn cce_loss<T: Scalar, D: Dimension>(y_true: ArrayView<T, D>, y_pred: ArrayView<T, D>, eps: f64) -> Result<T> {
    check_shapes(&y_true, &y_pred)?;
    let eps = T::of(eps);
    let classes = y_true.shape()[y_true.ndim() - 1];
    let pixels = T::of((y_true.len() / classes) as f64);
    let mut total = T::zero();
    Zip::from(&y_true).and(&y_pred).for_each(|&y, &p| {
        if y != T::zero() {
            total -= y * p.max(eps).min(T::one()).ln();
        }
    });
    Ok(total / pixels)
}

struct DiceTerms<T> {
    /// Per reduction group: `(2 * intersection + eps, sum_true + sum_pred + eps)`.
    groups: Vec<(T, T)>,
}

fn dice_terms<T: Scalar, D: Dimension>(y_true: &ArrayView<T, D>, y_pred: &ArrayView<T, D>, eps: T, reduction: DiceReduction) -> DiceTerms<T> {
    let axis = class_axis::<D>(y_true.ndim());
    let classes = y_true.len_of(axis);
    let mut inter = vec![T::zero(); classes];
    let mut sums = vec![T::zero(); classes];
    for (yl, pl) in y_true.lanes(axis).into_iter().zip(y_pred.lanes(axis)) {
        for c in 0..classes {
            inter[c] += yl[c] * pl[c];
            sums[c] += yl[c] + pl[c];
        }
    }
    let two = T::of(2.0);
    let groups = match reduction {
        DiceReduction::MeanOverClasses => inter
            .iter()
            .zip(&sums)
            .map(|(&i, &s)| (two * i + eps, s + eps))
            .collect(),
        DiceReduction::Global => {
            let i: T = inter.iter().copied().sum();
            let s: T = sums.iter().copied().sum();
            vec![(two * i + eps, s + eps)]
        }
    };
    DiceTerms { groups }
}

impl<T: Scalar> DiceTerms<T> {
    fn value(&self) -> T {
        let n = T::of(self.groups.len() as f64);
        self.groups.iter().map(|&(num, den)| num / den).sum::<T>() / n
    }
}

/// Soft Dice `(2 sum(y p) + eps) / (sum y + sum p + eps)`, reduced per
/// `reduction`.
pub fn dice_coefficient<T: Scalar, D: Dimension>(
    y_true: ArrayView<T, D>,
    y_pred: ArrayView<T, D>,
    eps: f64,
    reduction: DiceReduction,
) -> Result<T> {
    check_shapes(&y_true, &y_pred)?;
    Ok(dice_terms(&y_true, &y_pred, T::of(eps), reduction).value())
}

/// `CCE + dice_weight * (1 - Dice)`.
pub fn hybrid_loss<T: Scalar, D: Dimension>(y_true: ArrayView<T, D>, y_pred: ArrayView<T, D>, config: &LossConfig) -> Result<T> {
    let cce = cce_loss(y_true.view(), y_pred.view(), config.smoothing)?;
    let dice = dice_coefficient(y_true, y_pred, config.smoothing, config.dice_reduction)?;
    Ok(cce + T::of(config.dice_weight) * (T::one() - dice))
}

/// [`hybrid_loss`] together with its gradient with respect to `y_pred`.
pub fn hybrid_loss_with_grad<T: Scalar, D: Dimension>(
    y_true: ArrayView<T, D>,
    y_pred: ArrayView<T, D>,
    config: &LossConfig,
) -> Result<(T, Array<T, D>)> {
    check_shapes(&y_true, &y_pred)?;
    let eps = T::of(config.smoothing);
    let lambda = T::of(config.dice_weight);
    let axis = class_axis::<D>(y_true.ndim());
    let classes = y_true.len_of(axis);
    let pixels = T::of((y_true.len() / classes) as f64);
    let terms = dice_terms(&y_true, &y_pred, eps, config.dice_reduction);
    let loss = cce_loss(y_true.view(), y_pred.view(), config.smoothing)? + lambda * (T::one() - terms.value());

    let two = T::of(2.0);
    let n_groups = T::of(terms.groups.len() as f64);
    let mut grad = Array::<T, D>::zeros(y_true.raw_dim());
    for ((mut gl, yl), pl) in grad
        .lanes_mut(axis)
        .into_iter()
        .zip(y_true.lanes(axis))
        .zip(y_pred.lanes(axis))
    {
        for c in 0..classes {
            let (y, p) = (yl[c], pl[c]);
            let mut g = T::zero();
            if y != T::zero() && p >= eps && p <= T::one() {
                g -= y / (pixels * p);
            }
            let (num, den) = terms.groups[match config.dice_reduction {
                DiceReduction::MeanOverClasses => c,
                DiceReduction::Global => 0,
            }];
            let d_dice = (two * y * den - num) / (den * den) / n_groups;
            g -= lambda * d_dice;
            gl[c] = g;
        }
    }
    Ok((loss, grad))
}

fn check_masks<D: Dimension>(y_true: &ArrayView<u8, D>, y_pred: &ArrayView<u8, D>, num_classes: usize) -> Result<()> {
    if y_true.shape() != y_pred.shape() {
        return Err(Error::Shape(format!(
            "masks differ in shape: {:?} vs {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred.iter()).find(|&&v| v as usize >= num_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{num_classes}")));
    }
    Ok(())
}

/// Fraction of pixels whose labels agree.
pub fn accuracy<D: Dimension>(y_true: ArrayView<u8, D>, y_pred: ArrayView<u8, D>) -> Result<f64> {
    check_masks(&y_true, &y_pred, 256)?;
    if y_true.is_empty() {
        return Err(Error::Shape("empty masks".into()));
    }
    let correct = Zip::from(&y_true).and(&y_pred).fold(0usize, |acc, a, b| acc + (a == b) as usize);
    Ok(correct as f64 / y_true.len() as f64)
}

/// A per-class score; `absent` marks classes missing from both masks, whose
/// score is reported as 1.0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub value: f64,
    pub absent: bool,
}

/// Running per-class pixel counts over one or more mask pairs
/// (micro-aggregation).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub intersection: Vec<u64>,
    pub true_pixels: Vec<u64>,
    pub pred_pixels: Vec<u64>,
    pub correct: u64,
    pub total: u64,
}

impl ClassCounts {
    pub fn new(num_classes: usize) -> Self {
        ClassCounts {
            intersection: vec![0; num_classes],
            true_pixels: vec![0; num_classes],
            pred_pixels: vec![0; num_classes],
            correct: 0,
            total: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.intersection.len()
    }

    pub fn update<D: Dimension>(&mut self, y_true: ArrayView<u8, D>, y_pred: ArrayView<u8, D>) -> Result<()> {
        check_masks(&y_true, &y_pred, self.num_classes())?;
        Zip::from(&y_true).and(&y_pred).for_each(|&t, &p| {
            self.true_pixels[t as usize] += 1;
            self.pred_pixels[p as usize] += 1;
            if t == p {
                self.intersection[t as usize] += 1;
                self.correct += 1;
            }
        });
        self.total += y_true.len() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        for c in 0..self.num_classes() {
            self.intersection[c] += other.intersection[c];
            self.true_pixels[c] += other.true_pixels[c];
            self.pred_pixels[c] += other.pred_pixels[c];
        }
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.correct as f64 / self.total as f64
    }

    fn present(&self, c: usize) -> bool {
        self.true_pixels[c] + self.pred_pixels[c] > 0
    }

    pub fn iou(&self, c: usize) -> ClassScore {
        if !self.present(c) {
            return ClassScore { value: 1.0, absent: true };
        }
        let union = self.true_pixels[c] + self.pred_pixels[c] - self.intersection[c];
        ClassScore {
            value: self.intersection[c] as f64 / union as f64,
            absent: false,
        }
    }

    pub fn dice(&self, c: usize) -> ClassScore {
        if !self.present(c) {
            return ClassScore { value: 1.0, absent: true };
        }
        ClassScore {
            value: 2.0 * self.intersection[c] as f64 / (self.true_pixels[c] + self.pred_pixels[c]) as f64,
            absent: false,
        }
    }

    /// Correct pixels of class `c` over ground-truth pixels of class `c`.
    /// A class missing from the ground truth scores 1.0 if also never
    /// predicted, else 0.0.
    pub fn recall(&self, c: usize) -> ClassScore {
        match (self.true_pixels[c], self.pred_pixels[c]) {
            (0, 0) => ClassScore { value: 1.0, absent: true },
            (0, _) => ClassScore { value: 0.0, absent: false },
            (t, _) => ClassScore {
                value: self.intersection[c] as f64 / t as f64,
                absent: false,
            },
        }
    }

    fn mean_present(&self, f: impl Fn(usize) -> ClassScore) -> f64 {
        let scores: Vec<f64> = (0..self.num_classes())
            .map(&f)
            .filter(|s| !s.absent)
            .map(|s| s.value)
            .collect();
        if scores.is_empty() {
            1.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }

    /// Unweighted mean IoU over classes present in either mask.
    pub fn mean_iou(&self) -> f64 {
        self.mean_present(|c| self.iou(c))
    }

    pub fn mean_dice(&self) -> f64 {
        self.mean_present(|c| self.dice(c))
    }
}

/// IoU of one class on hard masks.
pub fn iou<D: Dimension>(y_true: ArrayView<u8, D>, y_pred: ArrayView<u8, D>, class_id: usize, num_classes: usize) -> Result<ClassScore> {
    if class_id >= num_classes {
        return Err(Error::InvalidArgument(format!("class {class_id} outside 0..{num_classes}")));
    }
    let mut counts = ClassCounts::new(num_classes);
    counts.update(y_true, y_pred)?;
    Ok(counts.iou(class_id))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClasswiseReport {
    pub iou: Vec<ClassScore>,
    pub dice: Vec<ClassScore>,
    pub accuracy: Vec<ClassScore>,
}

pub fn classwise_report<D: Dimension>(y_true: ArrayView<u8, D>, y_pred: ArrayView<u8, D>, num_classes: usize) -> Result<ClasswiseReport> {
    let mut counts = ClassCounts::new(num_classes);
    counts.update(y_true, y_pred)?;
    Ok(ClasswiseReport::from_counts(&counts))
}

impl ClasswiseReport {
    pub fn from_counts(counts: &ClassCounts) -> Self {
        let n = counts.num_classes();
        ClasswiseReport {
            iou: (0..n).map(|c| counts.iou(c)).collect(),
            dice: (0..n).map(|c| counts.dice(c)).collect(),
            accuracy: (0..n).map(|c| counts.recall(c)).collect(),
        }
    }
}

/// Global and class-wise quantitative results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "Dice Coefficient")]
    pub dice: f64,
    #[serde(rename = "Jaccard Index (IoU)")]
    pub iou: f64,
    #[serde(rename = "Loss")]
    pub loss: f64,
    pub per_class_iou: Vec<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_dice: Vec<f64>,
    /// Classes absent from both ground truth and prediction (scores
    /// reported as 1.0).
    pub absent_classes: Vec<usize>,
}

impl MetricsReport {
    pub fn from_counts(counts: &ClassCounts, loss: f64) -> Self {
        let r = ClasswiseReport::from_counts(counts);
        MetricsReport {
            accuracy: counts.accuracy(),
            dice: counts.mean_dice(),
            iou: counts.mean_iou(),
            loss,
            per_class_iou: r.iou.iter().map(|s| s.value).collect(),
            per_class_accuracy: r.accuracy.iter().map(|s| s.value).collect(),
            per_class_dice: r.dice.iter().map(|s| s.value).collect(),
            absent_classes: r.iou.iter().enumerate().filter(|(_, s)| s.absent).map(|(c, _)| c).collect(),
        }
    }

    /// Two-column `Metric,Value` table of the headline numbers.
    pub fn summary_csv(&self) -> String {
        format!(
            "Metric,Value\nAccuracy,{}\nDice Coefficient,{}\nJaccard Index (IoU),{}\nLoss,{}\n",
            self.accuracy, self.dice, self.iou, self.loss
        )
    }

    /// Class-wise table: one column per class, IoU and accuracy (%) rows.
    pub fn classwise_csv(&self) -> String {
        let mut out = String::from("Segmentation Class");
        for c in 0..self.per_class_iou.len() {
            write!(out, ",{c}").unwrap();
        }
        out.push_str("\nIoU Score");
        for v in &self.per_class_iou {
            write!(out, ",{v}").unwrap();
        }
        out.push_str("\nSegmentation Accuracy (%)");
        for v in &self.per_class_accuracy {
            write!(out, ",{}", v * 100.0).unwrap();
        }
        out.push('\n');
        out
    }
}

/// Table with one column per evaluated set (e.g. training / validation).
pub fn comparison_csv(sets: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::from("Metric");
    for (name, _) in sets {
        write!(out, ",{name}").unwrap();
    }
    let rows: [(&str, fn(&MetricsReport) -> f64); 4] = [
        ("Accuracy", |m| m.accuracy),
        ("Dice Coefficient", |m| m.dice),
        ("Jaccard Index (IoU)", |m| m.iou),
        ("Loss", |m| m.loss),
    ];
    for (label, get) in rows {
        write!(out, "\n{label}").unwrap();
        for (_, m) in sets {
            write!(out, ",{}", get(m)).unwrap();
        }
    }
    out.push('\n');
    out
}
