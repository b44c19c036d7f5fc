//! ONNX classifier backend (tract).
//!
//! The model takes one `1×S×S×3` (NHWC) or `1×3×S×S` (NCHW) float tensor and
//! returns a length-K probability vector. A JSON sidecar next to the model
//! (`classifier.onnx` → `classifier.json`) records the layout, input side,
//! pixel scaling and the identity for each output index.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;
use tract_onnx::tract_hir::internal::DimLike;

use crate::dataset::IdentityId;
use crate::inference::ClassifierBackend;
use crate::windowing::Window;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    #[default]
    Nhwc,
    Nchw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `v / 127.5 - 1`, range [-1, 1].
    #[default]
    Inception,
    /// `v / 255`, range [0, 1].
    Unit,
    /// Raw 0..=255.
    Raw,
}

impl Scaling {
    pub fn apply(self, v: u8) -> f32 {
        match self {
            Scaling::Inception => v as f32 / 127.5 - 1.0,
            Scaling::Unit => v as f32 / 255.0,
            Scaling::Raw => v as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierMetadata {
    #[serde(default)]
    pub input_layout: InputLayout,
    pub input_side: u32,
    #[serde(default)]
    pub scaling: Scaling,
    pub identities: Vec<IdentityId>,
}

impl ClassifierMetadata {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Model {
            path: path.to_path_buf(),
            message: format!("cannot read metadata sidecar: {e}"),
        })?;
        let meta: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if meta.input_side == 0 {
            return Err(model_err(path, "input_side must be positive"));
        }
        if meta.identities.is_empty() {
            return Err(model_err(path, "metadata lists no identities"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = meta.identities.iter().find(|id| !seen.insert(*id)) {
            return Err(model_err(path, &format!("duplicate identity {dup}")));
        }
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metadata serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn model_err(path: &Path, message: &str) -> Error {
    Error::Model {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Sidecar path for a model file.
pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

pub struct OnnxClassifier {
    plan: TypedSimplePlan<TypedModel>,
    meta: ClassifierMetadata,
}

impl std::fmt::Debug for OnnxClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxClassifier").field("meta", &self.meta).finish()
    }
}

impl OnnxClassifier {
    /// Loads `model` and its sidecar from [`sidecar_path`].
    pub fn load(model: &Path) -> Result<Self> {
        Self::load_with_metadata(model, &sidecar_path(model))
    }

    pub fn load_with_metadata(model: &Path, sidecar: &Path) -> Result<Self> {
        if !model.is_file() {
            return Err(model_err(model, "model file not found"));
        }
        if !sidecar.is_file() {
            return Err(model_err(
                model,
                &format!("metadata sidecar {} not found", sidecar.display()),
            ));
        }
        let meta = ClassifierMetadata::read(sidecar)?;
        let s = meta.input_side as usize;
        let shape = match meta.input_layout {
            InputLayout::Nhwc => [1, s, s, 3],
            InputLayout::Nchw => [1, 3, s, s],
        };
        let tract_err = |e: TractError| model_err(model, &format!("{e:#}"));
        let plan = tract_onnx::onnx()
            .model_for_path(model)
            .and_then(|m| m.with_input_fact(0, f32::fact(shape).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(tract_err)?;
        let out_fact = plan.model().output_fact(0).map_err(tract_err)?;
        let width = out_fact.shape.iter().last().and_then(|d| d.to_usize().ok());
        let volume = out_fact.shape.as_concrete().map(|d| d.iter().product::<usize>());
        if let (Some(w), Some(v)) = (width, volume) {
            if w != meta.identities.len() || v != w {
                return Err(model_err(
                    model,
                    &format!(
                        "model output shape {:?} does not match {} identities in metadata",
                        out_fact.shape,
                        meta.identities.len()
                    ),
                ));
            }
        }
        Ok(Self { plan, meta })
    }

    pub fn metadata(&self) -> &ClassifierMetadata {
        &self.meta
    }

    fn input_tensor(&self, window: &Window) -> Tensor {
        let s = self.meta.input_side as usize;
        let px = &window.pixels;
        let scale = self.meta.scaling;
        match self.meta.input_layout {
            InputLayout::Nhwc => {
                tract_ndarray::Array4::from_shape_fn((1, s, s, 3), |(_, y, x, c)| {
                    scale.apply(px.get_pixel(x as u32, y as u32)[c])
                })
                .into()
            }
            InputLayout::Nchw => {
                tract_ndarray::Array4::from_shape_fn((1, 3, s, s), |(_, c, y, x)| {
                    scale.apply(px.get_pixel(x as u32, y as u32)[c])
                })
                .into()
            }
        }
    }
}

impl ClassifierBackend for OnnxClassifier {
    fn input_side(&self) -> u32 {
        self.meta.input_side
    }

    fn identities(&self) -> &[IdentityId] {
        &self.meta.identities
    }

    fn scores(&self, window: &Window) -> Result<Vec<f64>> {
        let input = self.input_tensor(window);
        let out = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| Error::Classifier(format!("{e:#}")))?;
        let t = out[0]
            .cast_to::<f32>()
            .map_err(|e| Error::Classifier(format!("{e:#}")))?;
        let view = t
            .as_slice::<f32>()
            .map_err(|e| Error::Classifier(format!("{e:#}")))?;
        Ok(view.iter().map(|&v| v as f64).collect())
    }
}
