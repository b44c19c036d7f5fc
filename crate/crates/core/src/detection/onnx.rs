//! ONNX SSD-style detector backend (tract).
//!
//! The model takes one `1×H×W×3` image tensor (uint8, or float holding raw
//! 0..=255 values) and returns boxes `[1, N, 4]` as normalized
//! `(ymin, xmin, ymax, xmax)`, class ids `[1, N]`, scores `[1, N]` and
//! optionally a detection count `[1]`. Outputs are matched by name
//! (`box`, `class`, `score`, `num`), falling back to that order.
//!
//! Class ids are mapped to names through a text label map with one
//! `<index> <name>` pair per line; `#` starts a comment.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use crate::detection::{DetectorBackend, RawDetection};
use crate::imaging::SourceImage;
use crate::{Error, Result};

pub fn read_label_map(path: &Path) -> Result<HashMap<i64, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::InvalidArgument(format!("{}:{}: expected `<index> <name>`", path.display(), n + 1));
        let (idx, name) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
        let idx: i64 = idx.trim_end_matches(':').parse().map_err(|_| bad())?;
        let name = name.trim();
        if name.is_empty() {
            return Err(bad());
        }
        map.insert(idx, name.to_string());
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Boxes,
    Classes,
    Scores,
    Count,
}

type Plan = TypedSimplePlan<TypedModel>;

pub struct OnnxDetector {
    path: PathBuf,
    model: InferenceModel,
    input_type: DatumType,
    roles: Vec<Role>,
    labels: HashMap<i64, String>,
    plans: Mutex<HashMap<(u32, u32), Arc<Plan>>>,
}

impl std::fmt::Debug for OnnxDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxDetector").field("path", &self.path).finish()
    }
}

impl OnnxDetector {
    pub fn load(model: &Path, label_map: &Path) -> Result<Self> {
        let model_err = |m: String| Error::Model {
            path: model.to_path_buf(),
            message: m,
        };
        if !model.is_file() {
            return Err(model_err("model file not found".into()));
        }
        let labels = read_label_map(label_map)?;
        let inference = tract_onnx::onnx()
            .model_for_path(model)
            .map_err(|e| model_err(format!("{e:#}")))?;
        let input_type = inference
            .input_fact(0)
            .ok()
            .and_then(|f| f.datum_type.concretize())
            .unwrap_or(DatumType::U8);
        if input_type != DatumType::U8 && input_type != DatumType::F32 {
            return Err(model_err(format!("unsupported input type {input_type:?}")));
        }
        let names: Vec<String> = inference
            .output_outlets()
            .map_err(|e| model_err(format!("{e:#}")))?
            .iter()
            .map(|o| {
                inference
                    .outlet_label(*o)
                    .map(str::to_string)
                    .unwrap_or_else(|| inference.node(o.node).name.clone())
            })
            .collect();
        let roles = assign_roles(&names).map_err(model_err)?;
        Ok(Self {
            path: model.to_path_buf(),
            model: inference,
            input_type,
            roles,
            labels,
            plans: Mutex::new(HashMap::new()),
        })
    }

    fn plan_for(&self, width: u32, height: u32) -> Result<Arc<Plan>> {
        let mut plans = self.plans.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(p) = plans.get(&(width, height)) {
            return Ok(p.clone());
        }
        let shape = [1, height as usize, width as usize, 3];
        let fact = InferenceFact::dt_shape(self.input_type, shape);
        let plan = self
            .model
            .clone()
            .with_input_fact(0, fact)
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::Model {
                path: self.path.clone(),
                message: format!("{e:#}"),
            })?;
        let plan = Arc::new(plan);
        plans.insert((width, height), plan.clone());
        Ok(plan)
    }

    fn label(&self, class: i64) -> String {
        self.labels
            .get(&class)
            .cloned()
            .unwrap_or_else(|| format!("class_{class}"))
    }
}

fn assign_roles(names: &[String]) -> std::result::Result<Vec<Role>, String> {
    if names.len() < 3 || names.len() > 4 {
        return Err(format!("expected 3 or 4 outputs, found {}", names.len()));
    }
    let by_name: Vec<Option<Role>> = names
        .iter()
        .map(|n| {
            let n = n.to_lowercase();
            if n.contains("box") {
                Some(Role::Boxes)
            } else if n.contains("class") {
                Some(Role::Classes)
            } else if n.contains("score") {
                Some(Role::Scores)
            } else if n.contains("num") {
                Some(Role::Count)
            } else {
                None
            }
        })
        .collect();
    let mut roles: Vec<Role> = by_name.iter().flatten().copied().collect();
    roles.sort_by_key(|r| *r as u8);
    roles.dedup();
    if by_name.iter().all(Option::is_some) && roles.len() == names.len() {
        return Ok(by_name.into_iter().flatten().collect());
    }
    Ok([Role::Boxes, Role::Classes, Role::Scores, Role::Count][..names.len()].to_vec())
}

fn to_f32(v: &TValue) -> Result<Vec<f32>> {
    let t = v.cast_to::<f32>().map_err(|e| Error::Detector(format!("{e:#}")))?;
    Ok(t.as_slice::<f32>()
        .map_err(|e| Error::Detector(format!("{e:#}")))?
        .to_vec())
}

impl DetectorBackend for OnnxDetector {
    fn detect_raw(&self, image: &SourceImage) -> Result<Vec<RawDetection>> {
        let (w, h) = (image.width(), image.height());
        let plan = self.plan_for(w, h)?;
        let px = &image.pixels;
        let input: Tensor = match self.input_type {
            DatumType::F32 => tract_ndarray::Array4::from_shape_fn((1, h as usize, w as usize, 3), |(_, y, x, c)| {
                px.get_pixel(x as u32, y as u32)[c] as f32
            })
            .into(),
            _ => tract_ndarray::Array4::from_shape_fn((1, h as usize, w as usize, 3), |(_, y, x, c)| {
                px.get_pixel(x as u32, y as u32)[c]
            })
            .into(),
        };
        let outputs = plan
            .run(tvec!(input.into()))
            .map_err(|e| Error::Detector(format!("{e:#}")))?;
        let mut boxes = Vec::new();
        let mut classes = Vec::new();
        let mut scores = Vec::new();
        let mut count = None;
        for (role, value) in self.roles.iter().zip(outputs.iter()) {
            let data = to_f32(value)?;
            match role {
                Role::Boxes => boxes = data,
                Role::Classes => classes = data,
                Role::Scores => scores = data,
                Role::Count => count = data.first().map(|c| c.max(0.0) as usize),
            }
        }
        let n = scores.len();
        if classes.len() != n || boxes.len() != 4 * n {
            return Err(Error::Detector(format!(
                "inconsistent outputs: {} boxes values, {} classes, {} scores",
                boxes.len(),
                classes.len(),
                n
            )));
        }
        let n = count.map_or(n, |c| c.min(n));
        let (wf, hf) = (w as f64, h as f64);
        Ok((0..n)
            .map(|i| {
                let b = &boxes[4 * i..4 * i + 4];
                let (y0, x0) = ((b[0] as f64 * hf).round(), (b[1] as f64 * wf).round());
                let (y1, x1) = ((b[2] as f64 * hf).round(), (b[3] as f64 * wf).round());
                RawDetection {
                    x: x0 as i64,
                    y: y0 as i64,
                    w: (x1 - x0) as i64,
                    h: (y1 - y0) as i64,
                    class_label: self.label(classes[i].round() as i64),
                    confidence: scores[i] as f64,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        fs::write(&p, "# coco subset\n1 person\n18: dog\n\n17 cat # comment\n").unwrap();
        let m = read_label_map(&p).unwrap();
        assert_eq!(m[&1], "person");
        assert_eq!(m[&18], "dog");
        assert_eq!(m[&17], "cat");
        fs::write(&p, "dog\n").unwrap();
        assert!(read_label_map(&p).is_err());
    }

    #[test]
    fn roles_by_name_or_position() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            assign_roles(&s(&["detection_scores", "detection_boxes", "num_detections", "detection_classes"])).unwrap(),
            vec![Role::Scores, Role::Boxes, Role::Count, Role::Classes]
        );
        assert_eq!(
            assign_roles(&s(&["a", "b", "c"])).unwrap(),
            vec![Role::Boxes, Role::Classes, Role::Scores]
        );
        assert!(assign_roles(&s(&["a", "b"])).is_err());
    }
}
