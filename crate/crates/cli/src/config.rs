//! TOML run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. `OCTSEG_DATA_DIR`, when set, replaces `data.path`.

use std::path::{Path, PathBuf};

use octseg::dataio::{DatasetFormat, LoaderOptions, NUM_CLASSES};
use octseg::objectives::LossConfig;
use octseg::segnet::ArchitectureConfig;
use octseg::trainer::{EarlyStopConfig, ReduceLrConfig, TrainingConfig};
use octseg::xai::{ClassSelection, ScoreKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ExitCode};

pub const DATA_DIR_ENV: &str = "OCTSEG_DATA_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub format: DatasetFormat,
    pub split_ratio: f64,
    /// Preprocessed dataset archive; defaults to `<output_root>/dataset.safetensors`.
    pub cache: Option<PathBuf>,
    pub image_field: String,
    pub layer_field_prefix: String,
}

impl Default for DataSection {
    fn default() -> Self {
        let loader = LoaderOptions::default();
        DataSection {
            path: PathBuf::from("data"),
            format: loader.format,
            split_ratio: 0.8,
            cache: None,
            image_field: loader.image_field,
            layer_field_prefix: loader.layer_field_prefix,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub precision: Precision,
    #[serde(flatten)]
    pub architecture: ArchitectureConfig,
}

/// Optimizer and callback settings; the seed, checkpoint and log paths
/// come from the run itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub reduce_lr: ReduceLrConfig,
    pub early_stop: EarlyStopConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainingSection {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            reduce_lr: t.reduce_lr,
            early_stop: t.early_stop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassesSetting {
    Named(String),
    List(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XaiSection {
    pub layers: Vec<String>,
    /// `"all"` or a list of class ids.
    pub classes: ClassesSetting,
    pub score: ScoreKind,
}

impl Default for XaiSection {
    fn default() -> Self {
        XaiSection {
            layers: octseg::xai::DEFAULT_LAYERS.iter().map(|s| s.to_string()).collect(),
            classes: ClassesSetting::Named("all".into()),
            score: ScoreKind::Probability,
        }
    }
}

impl XaiSection {
    pub fn selection(&self) -> Result<ClassSelection, CliError> {
        match &self.classes {
            ClassesSetting::Named(s) => s.parse().map_err(|e| CliError::new(ExitCode::Usage, e)),
            ClassesSetting::List(v) => Ok(ClassSelection::Only(v.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness: split, weight init and batch order.
    pub seed: u64,
    pub output_root: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub loss: LossConfig,
    pub xai: XaiSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_root: PathBuf::from("runs"),
            data: DataSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            loss: LossConfig::default(),
            xai: XaiSection::default(),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::new(ExitCode::Usage, e)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))
    }

    /// Read, resolve paths, apply the environment override and validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base, std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path, data_override: Option<PathBuf>) {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if let Some(dir) = data_override {
            self.data.path = dir;
        }
        self.data.path = resolve(&self.data.path);
        self.output_root = resolve(&self.output_root);
        self.data.cache = self.data.cache.as_deref().map(resolve);
    }

    /// Check every section against its module invariants.
    pub fn validate(&self) -> Result<(), CliError> {
        let arch = &self.model.architecture;
        arch.validate().map_err(usage)?;
        if arch.input_shape[2] != 1 {
            return Err(usage("model.input_shape must have one channel (grayscale scans)"));
        }
        if arch.num_classes != NUM_CLASSES {
            return Err(usage(format!("model.num_classes must be {NUM_CLASSES} to match the layer masks")));
        }
        if !(self.data.split_ratio > 0.0 && self.data.split_ratio <= 1.0) {
            return Err(usage(format!("data.split_ratio {} outside (0, 1]", self.data.split_ratio)));
        }
        self.training_config().validate().map_err(usage)?;
        self.loss.validate().map_err(usage)?;
        if self.xai.layers.is_empty() {
            return Err(usage("xai.layers must name at least one layer"));
        }
        self.xai.selection()?.resolve(arch.num_classes).map_err(usage)?;
        Ok(())
    }

    pub fn loader_options(&self) -> LoaderOptions {
        LoaderOptions {
            format: self.data.format,
            image_field: self.data.image_field.clone(),
            layer_field_prefix: self.data.layer_field_prefix.clone(),
            num_classes: self.model.architecture.num_classes,
        }
    }

    pub fn target_size(&self) -> (usize, usize) {
        let [h, w, _] = self.model.architecture.input_shape;
        (h, w)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.data
            .cache
            .clone()
            .unwrap_or_else(|| self.output_root.join("dataset.safetensors"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_root.join("checkpoint.safetensors")
    }

    pub fn log_path(&self) -> PathBuf {
        self.output_root.join("training_log.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_root.join("manifest.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_root.join("reports")
    }

    pub fn xai_dir(&self) -> PathBuf {
        self.output_root.join("xai")
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: self.seed,
            reduce_lr: t.reduce_lr,
            early_stop: t.early_stop,
            checkpoint_path: Some(self.checkpoint_path()),
            log_path: Some(self.log_path()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_sections() {
        let c = RunConfig::parse(
            r#"
seed = 7
output_root = "out"
[data]
path = "d"
split_ratio = 0.5
[model]
precision = "f64"
encoder_filters = [8, 16, 16, 16, 16]
input_shape = [32, 32, 1]
decoder_mode = "index_unpool"
[training]
epochs = 3
[training.reduce_lr]
patience = 2
[xai]
classes = [0, 3]
"#,
        )
        .unwrap();
        assert_eq!(c.model.precision, Precision::F64);
        assert_eq!(c.training.reduce_lr.patience, 2);
        assert_eq!(c.training.reduce_lr.factor, 0.5);
        assert_eq!(c.xai.selection().unwrap(), ClassSelection::Only(vec![0, 3]));
        c.validate().unwrap();
        assert_eq!(c.training_config().seed, 7);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        let mut c = RunConfig::default();
        c.training.batch_size = 0;
        assert_eq!(c.validate().unwrap_err().code, ExitCode::Usage);
        let mut c = RunConfig::default();
        c.model.architecture.encoder_filters = vec![64, 128];
        assert!(c.validate().is_err());
        let c = RunConfig::parse("[model]\ndecoder_mode = \"bilinear\"");
        assert!(c.is_err());
        assert!(RunConfig::parse("[model]\nbogus = 1").is_err());
    }

    #[test]
    fn env_override_and_relative_paths() {
        let mut c = RunConfig::default();
        c.resolve_paths(Path::new("/cfg"), Some(PathBuf::from("/data/duke")));
        assert_eq!(c.data.path, PathBuf::from("/data/duke"));
        assert_eq!(c.output_root, PathBuf::from("/cfg/runs"));
        assert_eq!(c.cache_path(), PathBuf::from("/cfg/runs/dataset.safetensors"));
    }

    #[test]
    fn shipped_config_spells_out_the_defaults() {
        let text = include_str!("../../../configs/duke.toml");
        let c = RunConfig::parse(text).unwrap();
        c.validate().unwrap();
        let mut defaults = RunConfig::default();
        defaults.output_root = PathBuf::from("../runs/duke");
        defaults.data.path = PathBuf::from("../data/duke");
        assert_eq!(c, defaults);
    }
}
