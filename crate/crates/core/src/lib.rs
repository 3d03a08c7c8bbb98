//! OCT retinal-layer segmentation: data ingest, a SegNet-style
//! encoder-decoder, the hybrid CCE + Dice objective, callback-driven
//! training, multi-class Grad-CAM and report generation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

mod archive;
pub mod dataio;
pub mod error;
pub mod evalreport;
pub mod nn;
pub mod objectives;
pub mod scalar;
pub mod segnet;
pub mod trainer;
pub mod visual;
pub mod xai;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SegmentationModelF32 = segnet::SegmentationModel<f32>;
pub type SegmentationModelF64 = segnet::SegmentationModel<f64>;
pub type TrainingOutcomeF32 = trainer::TrainingOutcome<f32>;
pub type TrainingOutcomeF64 = trainer::TrainingOutcome<f64>;
