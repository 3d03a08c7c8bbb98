#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use octseg::dataio::synthetic::layered_samples;
use octseg::dataio::write_npy_sample;

pub const BIN: &str = env!("CARGO_BIN_EXE_octseg");

/// Eight synthetic scans at a non-square raw resolution.
pub fn write_fixture(dir: &Path, n: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for s in layered_samples(n, 40, 52, seed) {
        write_npy_sample(dir, &s).unwrap();
    }
}

/// Small-model config rooted at `root`, reading data from `root/data`.
pub fn write_config(root: &Path, epochs: usize, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 3
output_root = "out"

[data]
path = "data"
split_ratio = 0.75

[model]
input_shape = [32, 32, 1]
encoder_filters = [4, 8, 8, 8, 8]

[training]
epochs = {epochs}
batch_size = 4
learning_rate = 0.01

[xai]
layers = ["conv2d_19", "conv2d_20"]
classes = "all"
{extra}"#
    );
    let path = root.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn octseg(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("OCTSEG_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn with_config(cmd: &str, config: &Path, rest: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(rest);
    octseg(&args)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
