//! Epoch-boundary controllers driven by the monitored validation loss.
//! All three use the same strict rule: an epoch improves only when
//! `loss < best - min_delta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceLrConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
}

impl Default for ReduceLrConfig {
    fn default() -> Self {
        ReduceLrConfig {
            patience: 5,
            factor: 0.5,
            min_lr: 1e-6,
            min_delta: 0.0,
        }
    }
}

impl ReduceLrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("reduce_lr.patience must be >= 1".into()));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("reduce_lr.factor {} outside (0, 1)", self.factor)));
        }
        if !(self.min_lr >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Config("reduce_lr.min_lr and min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 10,
            min_delta: 0.0,
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("early_stop.patience must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("early_stop.min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Halves (by `factor`) the learning rate after `patience` epochs without
/// improvement, never going below `min_lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceLrOnPlateau {
    config: ReduceLrConfig,
    best: f64,
    wait: usize,
    lr: f64,
}

impl ReduceLrOnPlateau {
    pub fn new(config: ReduceLrConfig, initial_lr: f64) -> Self {
        ReduceLrOnPlateau {
            config,
            best: f64::INFINITY,
            wait: 0,
            lr: initial_lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn wait(&self) -> usize {
        self.wait
    }

    /// Feed one epoch's monitored loss; returns the learning rate for the
    /// next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.config.min_delta {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    config: EarlyStopConfig,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(config: EarlyStopConfig) -> Self {
        EarlyStopping {
            config,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn wait(&self) -> usize {
        self.wait
    }

    pub fn step(&mut self, loss: f64) -> StopDecision {
        if loss < self.best - self.config.min_delta {
            self.best = loss;
            self.wait = 0;
            return StopDecision::Continue;
        }
        self.wait += 1;
        if self.wait >= self.config.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

/// Tracks the best monitored loss; `step` says whether this epoch's
/// weights should overwrite the checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBest {
    best: f64,
    best_epoch: Option<usize>,
}

impl Default for CheckpointBest {
    fn default() -> Self {
        CheckpointBest {
            best: f64::INFINITY,
            best_epoch: None,
        }
    }
}

impl CheckpointBest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }

    pub fn step(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best || (self.best_epoch.is_none() && !loss.is_nan()) {
            self.best = loss;
            self.best_epoch = Some(epoch);
            true
        } else {
            false
        }
    }
}
