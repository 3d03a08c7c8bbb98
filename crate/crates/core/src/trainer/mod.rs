//! Mini-batch Adam training on the hybrid loss with plateau LR reduction,
//! early stopping, best-weights checkpointing and a CSV epoch log.

mod callbacks;
mod log;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{batch_images, batch_targets, DatasetSplit};
use crate::error::{Error, Result};
use crate::evalreport::evaluate_batched;
use crate::nn::{BackwardRequest, LayerParams, Param};
use crate::objectives::{hybrid_loss_with_grad, ClassCounts, LossConfig};
use crate::scalar::Scalar;
use crate::segnet::{argmax_mask, save_checkpoint, SegmentationModel};

pub use callbacks::{
    CheckpointBest, EarlyStopConfig, EarlyStopping, ReduceLrConfig, ReduceLrOnPlateau, StopDecision,
};
pub use log::{csv_log, read_csv_log, CsvLogger, EpochLog, CSV_HEADER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Adam denominator stabilizer.
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch batch shuffling.
    pub seed: u64,
    pub reduce_lr: ReduceLrConfig,
    pub early_stop: EarlyStopConfig,
    /// Best-weights archive; not written when `None`.
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            reduce_lr: ReduceLrConfig::default(),
            early_stop: EarlyStopConfig::default(),
            checkpoint_path: None,
            log_path: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.reduce_lr.validate()?;
        self.early_stop.validate()
    }
}

/// Adam with bias correction folded into the step size.
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    epsilon: T,
    step: i32,
    m: Vec<LayerParams<T>>,
    v: Vec<LayerParams<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Param<T>], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<LayerParams<T>> = params.iter().map(|p| p.value.zeros_like()).collect();
        Adam {
            beta1,
            beta2,
            epsilon: T::of(epsilon),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Param<T>], grads: &[LayerParams<T>], lr: f64) {
        self.step += 1;
        let lr_t = T::of(lr * (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step)));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let eps = self.epsilon;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let apply = |p: &mut T, g: T, m: &mut T, v: &mut T| {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps);
            };
            ndarray::Zip::from(&mut p.value.kernel)
                .and(&g.kernel)
                .and(&mut m.kernel)
                .and(&mut v.kernel)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            ndarray::Zip::from(&mut p.value.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

pub struct TrainingOutcome<T> {
    /// Weights after the last completed epoch.
    pub model: SegmentationModel<T>,
    pub history: Vec<EpochLog>,
    /// `(epoch, monitored loss)` of the best epoch.
    pub best: Option<(usize, f64)>,
    /// Epoch at which early stopping fired.
    pub stopped_at: Option<usize>,
}

fn probe_writable(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut probe = path.as_os_str().to_owned();
    probe.push(".probe");
    fs::write(&probe, b"").map_err(|e| Error::io(path, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(path, e))
}

/// Train `model` on `split.train`, validating on `split.validation` after
/// every epoch. Callbacks run in the order reduce-LR, early-stop,
/// checkpoint, log; a stopping epoch is still checkpointed and logged.
///
/// When the validation partition is empty the training loss is monitored
/// instead.
pub fn train<T: Scalar>(
    mut model: SegmentationModel<T>,
    split: &DatasetSplit,
    config: &TrainingConfig,
    loss_config: &LossConfig,
) -> Result<TrainingOutcome<T>> {
    config.validate()?;
    loss_config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(p) = &config.checkpoint_path {
        probe_writable(p)?;
    }
    let mut logger = match &config.log_path {
        Some(p) => {
            probe_writable(p)?;
            Some(CsvLogger::create(p)?)
        }
        None => None,
    };
    if split.validation.is_empty() && config.epochs > 0 {
        ::log::warn!("no validation samples; callbacks monitor the training loss");
    }

    let num_classes = model.config().num_classes;
    let output = model.network().output_node();
    let mut adam = Adam::new(model.network().params(), config.beta1, config.beta2, config.epsilon);
    let mut reduce = ReduceLrOnPlateau::new(config.reduce_lr, config.learning_rate);
    let mut stopper = EarlyStopping::new(config.early_stop);
    let mut best = CheckpointBest::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_at = None;

    for epoch in 1..=config.epochs {
        let lr = reduce.lr();
        order.shuffle(&mut rng);
        let mut counts = ClassCounts::new(num_classes);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let samples = chunk.iter().map(|&i| &split.train[i]);
            let x = batch_images::<T>(samples.clone());
            let y = batch_targets::<T>(samples.clone());
            let acts = model.forward_activations(x.view())?;
            let probs = acts.output();
            let (loss, dprobs) = hybrid_loss_with_grad(y.view(), probs.view(), loss_config)?;
            loss_sum += loss.as_f64() * chunk.len() as f64;
            for (b, s) in samples.enumerate() {
                counts.update(s.mask().view(), argmax_mask(probs.index_axis(Axis(0), b)).view())?;
            }
            let grads = model.network().backward(
                &acts,
                output,
                dprobs,
                &BackwardRequest {
                    param_grads: true,
                    capture: &[],
                },
            );
            adam.update(model.network_mut().params_mut(), &grads.params.expect("requested"), lr);
        }
        let train_loss = loss_sum / split.train.len() as f64;

        let (val_loss, val_accuracy, val_dice, val_iou) = if split.validation.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let r = evaluate_batched(&model, &split.validation, loss_config, config.batch_size)?;
            (r.loss, r.accuracy, r.dice, r.iou)
        };
        let monitored = if split.validation.is_empty() { train_loss } else { val_loss };
        let entry = EpochLog {
            epoch,
            loss: train_loss,
            accuracy: counts.accuracy(),
            dice: counts.mean_dice(),
            iou: counts.mean_iou(),
            val_loss,
            val_accuracy,
            val_dice,
            val_iou,
            learning_rate: lr,
        };

        reduce.step(monitored);
        let decision = stopper.step(monitored);
        if best.step(epoch, monitored) {
            if let Some(p) = &config.checkpoint_path {
                save_checkpoint(&model, p, Some(epoch), Some(monitored))?;
            }
        }
        if let Some(l) = logger.as_mut() {
            l.append(&entry)?;
        }
        ::log::info!(
            "epoch {epoch}: loss {:.4} dice {:.4} val_loss {:.4} val_dice {:.4} lr {:.2e}",
            entry.loss,
            entry.dice,
            entry.val_loss,
            entry.val_dice,
            lr
        );
        history.push(entry);
        if decision == StopDecision::Stop {
            ::log::info!("early stopping after epoch {epoch}");
            stopped_at = Some(epoch);
            break;
        }
    }

    Ok(TrainingOutcome {
        model,
        history,
        best: best.best(),
        stopped_at,
    })
}
