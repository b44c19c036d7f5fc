//! Cross-validation of the full pipeline and the JSON report it produces.
//!
//! Every manifest entry is identified exactly once, in the fold that holds
//! it out. An entry for which no dog passes the detector filter counts as an
//! error: it is recorded with its reason and tallied in `unpredicted`, so
//! that for each identity the confusion row sum plus the unpredicted count
//! equals the number of entries of that identity.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, FoldAssignment, IdentityId};
use crate::detection::DetectorBackend;
use crate::identification::{DecisionRule, IdentifyConfig, IdentifyOutcome, NoPrediction, Pipeline};
use crate::imaging::SourceImage;
use crate::inference::ClassifierBackend;
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "petident-report/1";

/// Fraction of positions where prediction equals truth.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty list".into()));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Yields the classifier to use when a given fold is held out.
pub trait ClassifierFactory: Send + Sync {
    fn classifier_for_fold(&self, fold: usize, train: &[usize]) -> Result<Arc<dyn ClassifierBackend>>;
}

/// The same classifier for every fold; "training" is a no-op. This is how
/// scripted backends are evaluated.
pub struct SharedClassifier(pub Arc<dyn ClassifierBackend>);

impl ClassifierFactory for SharedClassifier {
    fn classifier_for_fold(&self, _fold: usize, _train: &[usize]) -> Result<Arc<dyn ClassifierBackend>> {
        Ok(self.0.clone())
    }
}

/// Loads one ONNX classifier per fold from a path pattern containing
/// `{fold}`, e.g. `models/fold{fold}.onnx`.
#[cfg(feature = "onnx")]
pub struct PerFoldModelFiles {
    pub pattern: String,
}

#[cfg(feature = "onnx")]
impl PerFoldModelFiles {
    pub fn path_for(&self, fold: usize) -> std::path::PathBuf {
        std::path::PathBuf::from(self.pattern.replace("{fold}", &fold.to_string()))
    }
}

#[cfg(feature = "onnx")]
impl ClassifierFactory for PerFoldModelFiles {
    fn classifier_for_fold(&self, fold: usize, _train: &[usize]) -> Result<Arc<dyn ClassifierBackend>> {
        let path = self.path_for(fold);
        if !path.is_file() {
            return Err(Error::Model {
                path,
                message: format!("missing model file for fold {fold}"),
            });
        }
        Ok(Arc::new(crate::inference::OnnxClassifier::load(&path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// k-fold cross-validation.
    #[default]
    CrossValidation,
    /// One split: entries whose `split` is `test` are evaluated, the rest train.
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_path: String,
    pub fold: usize,
    pub truth: IdentityId,
    pub truth_index: usize,
    pub prediction: Option<IdentityId>,
    pub prediction_index: Option<usize>,
    pub decision_rule: Option<DecisionRule>,
    pub confidence: Option<f64>,
    pub correct: bool,
    pub reason: Option<NoPrediction>,
    /// Window votes equal to the truth (0..=3).
    pub windows_correct: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub protocol: Protocol,
    pub k: usize,
    pub seed: u64,
    pub identities: Vec<IdentityId>,
    pub per_fold_accuracy: Vec<f64>,
    pub fold_sizes: Vec<usize>,
    /// Unweighted mean of `per_fold_accuracy`.
    pub mean_accuracy: f64,
    /// Correct entries over evaluated entries.
    pub overall_accuracy: f64,
    /// Auxiliary window-level accuracy over identified entries.
    pub window_accuracy: Option<f64>,
    /// Rows are truth, columns prediction; row-major.
    pub confusion: Vec<Vec<u64>>,
    /// Per truth identity, entries with no prediction.
    pub unpredicted: Vec<u64>,
    pub per_image_records: Vec<ImageRecord>,
    pub config_echo: serde_json::Value,
}

impl EvaluationReport {
    pub fn evaluated(&self) -> usize {
        self.per_image_records.len()
    }

    pub fn confusion_trace(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Internal accounting checks; used by tests and after loading.
    pub fn check_consistency(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(format!("inconsistent report: {m}")));
        let k = self.identities.len();
        if self.confusion.len() != k || self.confusion.iter().any(|r| r.len() != k) {
            return fail("confusion matrix shape".into());
        }
        if self.unpredicted.len() != k {
            return fail("unpredicted length".into());
        }
        let mut per_truth = vec![0u64; k];
        for r in &self.per_image_records {
            per_truth[r.truth_index] += 1;
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.iter().sum::<u64>() + self.unpredicted[i] != per_truth[i] {
                return fail(format!("row {i} does not account for its entries"));
            }
        }
        if !self.per_fold_accuracy.is_empty() {
            let mean = self.per_fold_accuracy.iter().sum::<f64>() / self.per_fold_accuracy.len() as f64;
            if (mean - self.mean_accuracy).abs() > 1e-12 {
                return fail("mean accuracy".into());
            }
        }
        let total = self.evaluated() as f64;
        if total > 0.0 && (self.confusion_trace() as f64 / total - self.overall_accuracy).abs() > 1e-12 {
            return fail("overall accuracy vs confusion trace".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub identify: IdentifyConfig,
    /// Worker threads for per-image identification; 0 or 1 runs inline.
    pub jobs: usize,
    pub config_echo: serde_json::Value,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            identify: IdentifyConfig::default(),
            jobs: 1,
            config_echo: serde_json::Value::Null,
        }
    }
}

/// k-fold evaluation over `folds`.
pub fn evaluate(
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    detector: Arc<dyn DetectorBackend>,
    factory: &dyn ClassifierFactory,
    options: &EvaluateOptions,
) -> Result<EvaluationReport> {
    folds.check_against(manifest)?;
    let partitions: Vec<Vec<usize>> = (0..folds.k).map(|f| folds.test_indices(f)).collect();
    run(
        manifest,
        Protocol::CrossValidation,
        folds.k,
        folds.seed,
        &partitions,
        detector,
        factory,
        options,
    )
}

/// Single train/test split driven by the manifest's `split` column.
pub fn evaluate_holdout(
    manifest: &DatasetManifest,
    detector: Arc<dyn DetectorBackend>,
    factory: &dyn ClassifierFactory,
    options: &EvaluateOptions,
) -> Result<EvaluationReport> {
    let test: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.entries()[i].split.as_deref() == Some("test"))
        .collect();
    if test.is_empty() {
        return Err(Error::InvalidArgument(
            "holdout protocol needs manifest rows with split=test".into(),
        ));
    }
    run(
        manifest,
        Protocol::Holdout,
        1,
        0,
        &[test],
        detector,
        factory,
        options,
    )
}

#[allow(clippy::too_many_arguments)]
fn run(
    manifest: &DatasetManifest,
    protocol: Protocol,
    k: usize,
    seed: u64,
    partitions: &[Vec<usize>],
    detector: Arc<dyn DetectorBackend>,
    factory: &dyn ClassifierFactory,
    options: &EvaluateOptions,
) -> Result<EvaluationReport> {
    let registry = manifest.registry();
    let n_ids = registry.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut records: Vec<ImageRecord> = Vec::with_capacity(manifest.len());
    let mut per_fold_accuracy = Vec::with_capacity(partitions.len());
    let mut fold_sizes = Vec::with_capacity(partitions.len());

    for (fold, test) in partitions.iter().enumerate() {
        let train: Vec<usize> = {
            let mut held = vec![false; manifest.len()];
            for &i in test {
                held[i] = true;
            }
            (0..manifest.len()).filter(|&i| !held[i]).collect()
        };
        let classifier = factory.classifier_for_fold(fold, &train)?;
        if let Some(id) = classifier
            .identities()
            .iter()
            .find(|id| registry.index_of(id).is_none())
        {
            return Err(Error::Config(format!(
                "classifier identity {id} is not in the manifest registry"
            )));
        }
        let pipeline = Pipeline::new(detector.clone(), classifier, options.identify.clone())?;

        let evaluate_one = |&i: &usize| -> Result<ImageRecord> {
            let entry = &manifest.entries()[i];
            let wrap = |e: Error| Error::Entry {
                image_path: entry.image_path.clone(),
                source: Box::new(e),
            };
            let image = SourceImage::open(&manifest.resolve(i), entry.image_path.clone()).map_err(wrap)?;
            let outcome = pipeline.identify(&image).map_err(wrap)?;
            Ok(record_for(manifest, i, fold, &outcome, pipeline.identities()))
        };
        let fold_records: Vec<ImageRecord> = if options.jobs > 1 {
            pool.install(|| test.par_iter().map(evaluate_one).collect::<Result<Vec<_>>>())?
        } else {
            test.iter().map(evaluate_one).collect::<Result<Vec<_>>>()?
        };

        let correct = fold_records.iter().filter(|r| r.correct).count();
        fold_sizes.push(fold_records.len());
        per_fold_accuracy.push(if fold_records.is_empty() {
            0.0
        } else {
            correct as f64 / fold_records.len() as f64
        });
        records.extend(fold_records);
    }

    let mut confusion = vec![vec![0u64; n_ids]; n_ids];
    let mut unpredicted = vec![0u64; n_ids];
    let mut window_hits = 0usize;
    let mut identified = 0usize;
    for r in &records {
        match r.prediction_index {
            Some(p) => {
                confusion[r.truth_index][p] += 1;
                window_hits += r.windows_correct as usize;
                identified += 1;
            }
            None => unpredicted[r.truth_index] += 1,
        }
    }
    let total_correct = records.iter().filter(|r| r.correct).count();
    let mean_accuracy = per_fold_accuracy.iter().sum::<f64>() / per_fold_accuracy.len().max(1) as f64;
    let overall_accuracy = if records.is_empty() {
        0.0
    } else {
        total_correct as f64 / records.len() as f64
    };
    Ok(EvaluationReport {
        schema: REPORT_SCHEMA.into(),
        protocol,
        k,
        seed,
        identities: registry.ids().to_vec(),
        per_fold_accuracy,
        fold_sizes,
        mean_accuracy,
        overall_accuracy,
        window_accuracy: (identified > 0).then(|| window_hits as f64 / (3 * identified) as f64),
        confusion,
        unpredicted,
        per_image_records: records,
        config_echo: options.config_echo.clone(),
    })
}

fn record_for(
    manifest: &DatasetManifest,
    i: usize,
    fold: usize,
    outcome: &IdentifyOutcome,
    classifier_ids: &[IdentityId],
) -> ImageRecord {
    let entry = &manifest.entries()[i];
    let truth_index = manifest.class_of(i);
    let base = ImageRecord {
        image_path: entry.image_path.clone(),
        fold,
        truth: entry.identity.clone(),
        truth_index,
        prediction: None,
        prediction_index: None,
        decision_rule: None,
        confidence: None,
        correct: false,
        reason: None,
        windows_correct: 0,
    };
    match outcome {
        IdentifyOutcome::NotIdentified { reason } => ImageRecord {
            reason: Some(*reason),
            ..base
        },
        IdentifyOutcome::Identified { prediction } => {
            // classifier identities were checked against the registry
            let index = manifest
                .registry()
                .index_of(&prediction.identity)
                .expect("classifier identity enrolled");
            let windows_correct = prediction
                .window_labels
                .iter()
                .filter(|&&l| classifier_ids.get(l) == Some(&entry.identity))
                .count() as u8;
            ImageRecord {
                prediction: Some(prediction.identity.clone()),
                prediction_index: Some(index),
                decision_rule: Some(prediction.decision_rule),
                confidence: Some(prediction.confidence),
                correct: index == truth_index,
                windows_correct,
                ..base
            }
        }
    }
}

pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvaluationReport = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::InvalidArgument(format!(
            "unsupported report schema {:?}",
            report.schema
        )));
    }
    Ok(report)
}
