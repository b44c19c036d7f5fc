//! Dog identification pipeline.
//!
//! An input image goes through a pluggable detector, the primary dog
//! detection is split into three square overlapping windows along its
//! longer side, each window is classified against an enrolled identity
//! registry, and the three score vectors are fused by majority vote with a
//! strongest-activation fallback.
//!
//! Around that runtime path the crate also provides manifest handling with
//! stratified k-fold partitioning, offline window augmentation, a
//! cross-validation harness and a synthetic fixture generator used by the
//! test suites.

pub mod augmentation;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod detection;
mod error;
pub mod evaluation;
pub mod fixtures;
pub mod identification;
pub mod imaging;
pub mod inference;
mod seeding;
pub mod windowing;

pub use error::{Error, Result, Stage};

pub use augmentation::{AugmentationSpec, FillMode, LabeledWindow};
pub use config::PipelineConfig;
pub use dataset::{DatasetManifest, FoldAssignment, IdentityId, LabeledImage, Registry};
pub use detection::{BoundingBox, Detection, DetectorBackend, RawDetection};
pub use identification::{
    DecisionRule, IdentifyConfig, IdentifyOutcome, IdentityPrediction, Pipeline, VotingVariant,
};
pub use imaging::SourceImage;
pub use inference::{ClassifierBackend, ScoreVector};
pub use windowing::Window;
