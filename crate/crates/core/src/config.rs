//! The single configuration surface shared by every command.
//!
//! Stored as TOML. Unknown keys are rejected. Relative paths in a file are
//! resolved against the directory holding that file.
//!
//! ```toml
//! detector_backend = "scripted"
//! detector_fixture_path = "fixtures/detections.csv"
//! classifier_backend = "mock"
//! classifier_fixture_path = "fixtures/scores.csv"
//! min_confidence = 0.5
//! input_side = 299
//! cv_k = 10
//! seed = 7
//!
//! [augmentation]
//! flip_probability = 0.5
//! zoom_range = [0.9, 1.1]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::{self, AugmentationSpec};
use crate::detection;
use crate::evaluation::Protocol;
use crate::identification::{IdentifyConfig, VotingVariant};
use crate::windowing;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// ONNX SSD-style detector plus label map.
    #[default]
    Onnx,
    /// Pre-recorded detections from a CSV table.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// ONNX classifier plus JSON sidecar.
    #[default]
    Onnx,
    /// Scripted score table.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector_backend: DetectorKind,
    pub detector_model_path: Option<PathBuf>,
    pub label_map_path: Option<PathBuf>,
    pub detector_fixture_path: Option<PathBuf>,
    pub classifier_backend: ClassifierKind,
    /// For `evaluate`, may contain `{fold}` to load one model per fold.
    pub classifier_model_path: Option<PathBuf>,
    pub classifier_fixture_path: Option<PathBuf>,
    pub dog_class: String,
    pub min_confidence: f64,
    pub input_side: u32,
    /// Identify every dog detection instead of the primary one only.
    pub all_dogs: bool,
    pub voting_variant: VotingVariant,
    pub augmentation: AugmentationSpec,
    /// Output size over input size for `augment`.
    pub augmentation_factor: usize,
    /// Count the factor as variants on top of the original (17× for 16).
    pub factor_excludes_original: bool,
    pub protocol: Protocol,
    pub cv_k: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector_backend: DetectorKind::Onnx,
            detector_model_path: None,
            label_map_path: None,
            detector_fixture_path: None,
            classifier_backend: ClassifierKind::Onnx,
            classifier_model_path: None,
            classifier_fixture_path: None,
            dog_class: detection::DOG_CLASS.into(),
            min_confidence: detection::DEFAULT_MIN_CONFIDENCE,
            input_side: windowing::DEFAULT_INPUT_SIDE,
            all_dogs: false,
            voting_variant: VotingVariant::MaxSingle,
            augmentation: AugmentationSpec::default(),
            augmentation_factor: augmentation::DEFAULT_FACTOR,
            factor_excludes_original: false,
            protocol: Protocol::CrossValidation,
            cv_k: 10,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.detector_model_path,
            &mut self.label_map_path,
            &mut self.detector_fixture_path,
            &mut self.classifier_model_path,
            &mut self.classifier_fixture_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config(format!(
                "min_confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        if self.input_side == 0 {
            return Err(Error::Config("input_side must be >= 1".into()));
        }
        if self.cv_k < 2 {
            return Err(Error::Config(format!("cv_k {} must be >= 2", self.cv_k)));
        }
        if self.augmentation_factor < 1 {
            return Err(Error::Config("augmentation_factor must be >= 1".into()));
        }
        if self.dog_class.is_empty() {
            return Err(Error::Config("dog_class must be non-empty".into()));
        }
        self.augmentation
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Output windows per input window for `augment`.
    pub fn effective_factor(&self) -> usize {
        if self.factor_excludes_original {
            self.augmentation_factor + 1
        } else {
            self.augmentation_factor
        }
    }

    pub fn identify_config(&self) -> IdentifyConfig {
        IdentifyConfig {
            min_confidence: self.min_confidence,
            input_side: self.input_side,
            dog_class: self.dog_class.clone(),
            voting_variant: self.voting_variant,
        }
    }

    /// JSON form embedded in every output document.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Fails for seeds above `i64::MAX`, which TOML integers cannot hold.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::FillMode;

    #[test]
    fn defaults() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c.min_confidence, 0.5);
        assert_eq!(c.input_side, 299);
        assert_eq!(c.cv_k, 10);
        assert_eq!(c.augmentation_factor, 16);
        assert_eq!(c.effective_factor(), 16);
        assert_eq!(c.voting_variant, VotingVariant::MaxSingle);
        assert_eq!(c.augmentation.zoom_range, (0.9, 1.1));
        assert_eq!(c.augmentation.fill_mode, FillMode::Nearest);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("colour = 3").is_err());
        assert!(PipelineConfig::from_toml_str("[augmentation]\nrotation = 5").is_err());
    }

    #[test]
    fn ranges_are_checked() {
        assert!(PipelineConfig::from_toml_str("min_confidence = 1.5").is_err());
        assert!(PipelineConfig::from_toml_str("cv_k = 1").is_err());
        assert!(PipelineConfig::from_toml_str("input_side = 0").is_err());
        assert!(PipelineConfig::from_toml_str("[augmentation]\nzoom_range = [1.2, 1.0]").is_err());
    }

    #[test]
    fn parses_full_document() {
        let c = PipelineConfig::from_toml_str(
            r#"
            detector_backend = "scripted"
            classifier_backend = "mock"
            voting_variant = "sum_scores"
            protocol = "holdout"
            factor_excludes_original = true
            seed = 9
            [augmentation]
            fill_mode = "reflect"
            zoom_range = [0.8, 1.2]
            "#,
        )
        .unwrap();
        assert_eq!(c.detector_backend, DetectorKind::Scripted);
        assert_eq!(c.classifier_backend, ClassifierKind::Mock);
        assert_eq!(c.voting_variant, VotingVariant::SumScores);
        assert_eq!(c.protocol, Protocol::Holdout);
        assert_eq!(c.effective_factor(), 17);
        assert_eq!(c.augmentation.fill_mode, FillMode::Reflect);
    }

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig {
            detector_fixture_path: Some("det.csv".into()),
            seed: 3,
            ..PipelineConfig::default()
        };
        let p = dir.path().join("cfg.toml");
        fs::write(&p, c.to_toml().unwrap()).unwrap();
        let back = PipelineConfig::load(&p).unwrap();
        assert_eq!(back.detector_fixture_path, Some(dir.path().join("det.csv")));
        assert_eq!(back.seed, 3);
    }
}
