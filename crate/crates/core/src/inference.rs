//! Window classification through pluggable backends.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::IdentityId;
use crate::windowing::Window;
use crate::{Error, Result};

#[cfg(feature = "onnx")]
mod onnx;
#[cfg(feature = "onnx")]
pub use onnx::{ClassifierMetadata, InputLayout, OnnxClassifier, Scaling};

/// Sums within this distance of 1 are accepted as-is.
pub const SUM_TOLERANCE: f64 = 1e-5;
/// Sums within this distance of 1 are renormalized with a warning.
pub const RENORMALIZE_TOLERANCE: f64 = 0.01;

/// Per-identity probabilities for one window, indexed like the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    /// Accepts only non-negative finite scores summing to 1 within
    /// [`SUM_TOLERANCE`].
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        let sum = check_entries(&scores)?;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Normalization(format!("scores sum to {sum}")));
        }
        Ok(Self(scores))
    }

    /// Validates raw backend output of expected length `k`, renormalizing
    /// slightly-off sums.
    pub fn from_backend(scores: Vec<f64>, k: usize) -> Result<Self> {
        if scores.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                actual: scores.len(),
            });
        }
        let sum = check_entries(&scores)?;
        let err = (sum - 1.0).abs();
        if err <= SUM_TOLERANCE {
            Ok(Self(scores))
        } else if err <= RENORMALIZE_TOLERANCE {
            log::warn!("renormalizing classifier output that sums to {sum}");
            Ok(Self(scores.into_iter().map(|s| s / sum).collect()))
        } else {
            Err(Error::Normalization(format!("scores sum to {sum}")))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest score, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// The `n` best `(class, score)` pairs, best first.
    pub fn top(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|i| (i, self.0[i])).collect()
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(s: ScoreVector) -> Self {
        s.0
    }
}

fn check_entries(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Normalization("empty score vector".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Normalization(format!("invalid score {s}")));
    }
    Ok(scores.iter().sum())
}

/// Lowest index among the maxima.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub trait ClassifierBackend: Send + Sync {
    fn input_side(&self) -> u32;

    /// Identities in class-index order.
    fn identities(&self) -> &[IdentityId];

    fn num_classes(&self) -> usize {
        self.identities().len()
    }

    /// Raw output for one window; validated by [`classify`].
    fn scores(&self, window: &Window) -> Result<Vec<f64>>;

    /// Whether `scores` may run on several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

pub fn classify(window: &Window, backend: &dyn ClassifierBackend) -> Result<ScoreVector> {
    let side = window.pixels.width();
    if side != backend.input_side() || window.pixels.height() != backend.input_side() {
        return Err(Error::SideMismatch {
            expected: backend.input_side(),
            actual: side,
        });
    }
    let raw = backend.scores(window)?;
    ScoreVector::from_backend(raw, backend.num_classes())
}

/// `classify` over every window, in order; errors carry the window index.
pub fn classify_batch(windows: &[Window], backend: &dyn ClassifierBackend) -> Result<Vec<ScoreVector>> {
    windows
        .iter()
        .enumerate()
        .map(|(index, w)| {
            classify(w, backend).map_err(|e| Error::BatchItem {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Lookup key for scripted scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MockKey {
    /// Source image key plus window ordinal.
    Source(String, usize),
    /// [`Window::fingerprint`] of the pixel buffer.
    Fingerprint(String),
}

/// Returns scripted vectors; the primary test vehicle.
///
/// Lookup order: `(source, ordinal)`, then pixel fingerprint, then the
/// fallback vector if one is set. Scripted vectors are returned verbatim so
/// contract violations reach [`classify`].
#[derive(Debug, Clone)]
pub struct MockBackend {
    input_side: u32,
    identities: Vec<IdentityId>,
    table: HashMap<MockKey, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

impl MockBackend {
    pub fn new(identities: Vec<IdentityId>, input_side: u32) -> Self {
        Self {
            input_side,
            identities,
            table: HashMap::new(),
            fallback: None,
        }
    }

    pub fn insert(&mut self, key: MockKey, scores: Vec<f64>) {
        self.table.insert(key, scores);
    }

    pub fn with_fallback(mut self, scores: Vec<f64>) -> Self {
        self.fallback = Some(scores);
        self
    }

    pub fn set_input_side(&mut self, side: u32) {
        self.input_side = side;
    }

    pub fn get(&self, key: &MockKey) -> Option<&Vec<f64>> {
        self.table.get(key)
    }

    /// Reads a score table with header
    /// `image_path,window_ordinal,<identity 0>,...,<identity K-1>`.
    pub fn from_csv(path: &Path, input_side: u32) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "image_path" || &headers[1] != "window_ordinal" {
            return Err(Error::InvalidArgument(format!(
                "{}: expected header image_path,window_ordinal,<identities...>",
                path.display()
            )));
        }
        let identities = headers
            .iter()
            .skip(2)
            .map(IdentityId::new)
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(identities, input_side);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| {
                Error::InvalidArgument(format!("{}: row {}: {m}", path.display(), i + 1))
            };
            let ordinal: usize = rec[1].parse().map_err(|_| bad(format!("bad ordinal {:?}", &rec[1])))?;
            let scores = rec
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad score {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            out.insert(MockKey::Source(rec[0].to_string(), ordinal), scores);
        }
        Ok(out)
    }

    /// Writes the `(source, ordinal)` entries, sorted by key.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["image_path".to_string(), "window_ordinal".to_string()];
        header.extend(self.identities.iter().map(|i| i.to_string()));
        w.write_record(&header)?;
        let mut keys: Vec<(&String, usize)> = self
            .table
            .keys()
            .filter_map(|k| match k {
                MockKey::Source(s, o) => Some((s, *o)),
                MockKey::Fingerprint(_) => None,
            })
            .collect();
        keys.sort();
        for (src, ord) in keys {
            let scores = &self.table[&MockKey::Source(src.clone(), ord)];
            let mut rec = vec![src.clone(), ord.to_string()];
            rec.extend(scores.iter().map(|s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

impl ClassifierBackend for MockBackend {
    fn input_side(&self) -> u32 {
        self.input_side
    }

    fn identities(&self) -> &[IdentityId] {
        &self.identities
    }

    fn scores(&self, window: &Window) -> Result<Vec<f64>> {
        if let Some(src) = &window.source {
            if let Some(s) = self.table.get(&MockKey::Source(src.clone(), window.ordinal)) {
                return Ok(s.clone());
            }
        }
        if let Some(s) = self.table.get(&MockKey::Fingerprint(window.fingerprint())) {
            return Ok(s.clone());
        }
        self.fallback.clone().ok_or_else(|| {
            Error::Classifier(format!(
                "no scripted scores for window {} of {}",
                window.ordinal,
                window.source.as_deref().unwrap_or("<unkeyed>")
            ))
        })
    }
}
