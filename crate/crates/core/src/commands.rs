//! The operations behind each `petident` subcommand.
//!
//! Every command takes a [`PipelineConfig`] and echoes it into the documents
//! it writes. Commands over many inputs run them on a bounded thread pool
//! and return results in input order. A failure that prevents the command
//! from running at all (bad config, missing model) is returned as `Err`;
//! failures of individual inputs are collected in [`Batch::failures`].
//!
//! Scripted backends are keyed by image path. A path given on the command
//! line is made relative to the directory of the scripted table when it lies
//! under it, so `fixtures/images/a.png` finds the key `images/a.png` in
//! `fixtures/detections.csv`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation;
use crate::config::{ClassifierKind, DetectorKind, PipelineConfig};
use crate::dataset::{self, DatasetManifest, FoldsDocument, IdentityId, LabeledImage};
use crate::detection::{self, BoundingBox, Detection, DetectorBackend, ScriptedDetector};
use crate::evaluation::{self, ClassifierFactory, EvaluateOptions, EvaluationReport, Protocol, SharedClassifier};
use crate::fixtures::{self, FixtureOptions, FixtureSet};
use crate::identification::{IdentifyOutcome, NoPrediction, Pipeline, PredictionDocument};
use crate::imaging::{self, SourceImage};
use crate::inference::{ClassifierBackend, MockBackend};
use crate::windowing::{self, WindowRecord};
use crate::{Error, Result, Stage};

pub const DETECTIONS_SCHEMA: &str = "petident-detections/1";
pub const WINDOWS_SCHEMA: &str = "petident-windows/1";
pub const AUGMENT_SCHEMA: &str = "petident-augment/1";
pub const PREDICTION_SCHEMA: &str = "petident-prediction/1";

/// Exit status for a run with per-item failures.
pub const EXIT_PARTIAL: i32 = 2;
/// Exit status for a run that could not start or complete.
pub const EXIT_FATAL: i32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub index: usize,
    pub input: String,
    pub stage: Option<Stage>,
    pub message: String,
}

impl ItemFailure {
    fn new(index: usize, input: impl Into<String>, error: &Error) -> Self {
        Self {
            index,
            input: input.into(),
            stage: error.stage(),
            message: error.to_string(),
        }
    }
}

/// Per-input results of a command, both in input order.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub documents: Vec<T>,
    pub failures: Vec<ItemFailure>,
}

impl<T> Batch<T> {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            EXIT_PARTIAL
        }
    }
}

fn run_batch<I, T, F>(inputs: &[I], jobs: usize, label: impl Fn(&I) -> String, f: F) -> Result<Batch<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| inputs.par_iter().map(&f).collect())
    } else {
        inputs.iter().map(&f).collect()
    };
    let mut batch = Batch {
        documents: Vec::with_capacity(inputs.len()),
        failures: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(doc) => batch.documents.push(doc),
            Err(e) => {
                log::error!("{}: {e}", label(&inputs[i]));
                batch.failures.push(ItemFailure::new(i, label(&inputs[i]), &e));
            }
        }
    }
    Ok(batch)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str, backend: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("{backend} backend needs `{key}`")))
}

pub fn build_detector(config: &PipelineConfig) -> Result<Arc<dyn DetectorBackend>> {
    let backend: Arc<dyn DetectorBackend> = match config.detector_backend {
        DetectorKind::Scripted => {
            let path = required(&config.detector_fixture_path, "detector_fixture_path", "scripted detector")?;
            Arc::new(ScriptedDetector::from_csv(path).map_err(|e| e.at_stage(Stage::Detect))?)
        }
        #[cfg(feature = "onnx")]
        DetectorKind::Onnx => {
            let model = required(&config.detector_model_path, "detector_model_path", "onnx detector")?;
            let labels = required(&config.label_map_path, "label_map_path", "onnx detector")?;
            Arc::new(detection::OnnxDetector::load(model, labels).map_err(|e| e.at_stage(Stage::Detect))?)
        }
        #[cfg(not(feature = "onnx"))]
        DetectorKind::Onnx => return Err(Error::Config("built without the `onnx` feature".into())),
    };
    Ok(backend)
}

pub fn build_classifier(config: &PipelineConfig) -> Result<Arc<dyn ClassifierBackend>> {
    let backend: Arc<dyn ClassifierBackend> = match config.classifier_backend {
        ClassifierKind::Mock => {
            let path = required(&config.classifier_fixture_path, "classifier_fixture_path", "mock classifier")?;
            Arc::new(MockBackend::from_csv(path, config.input_side).map_err(|e| e.at_stage(Stage::Classify))?)
        }
        #[cfg(feature = "onnx")]
        ClassifierKind::Onnx => {
            let model = required(&config.classifier_model_path, "classifier_model_path", "onnx classifier")?;
            Arc::new(crate::inference::OnnxClassifier::load(model).map_err(|e| e.at_stage(Stage::Classify))?)
        }
        #[cfg(not(feature = "onnx"))]
        ClassifierKind::Onnx => return Err(Error::Config("built without the `onnx` feature".into())),
    };
    Ok(backend)
}

/// One classifier per fold when the model path contains `{fold}`, otherwise
/// the same classifier for every fold.
pub fn build_classifier_factory(config: &PipelineConfig) -> Result<Box<dyn ClassifierFactory>> {
    #[cfg(feature = "onnx")]
    if config.classifier_backend == ClassifierKind::Onnx {
        if let Some(p) = &config.classifier_model_path {
            let pattern = p.to_string_lossy().into_owned();
            if pattern.contains("{fold}") {
                return Ok(Box::new(evaluation::PerFoldModelFiles { pattern }));
            }
        }
    }
    Ok(Box::new(SharedClassifier(build_classifier(config)?)))
}

pub fn build_pipeline(config: &PipelineConfig) -> Result<Pipeline> {
    Pipeline::new(build_detector(config)?, build_classifier(config)?, config.identify_config())
}

fn scripted_root(config: &PipelineConfig) -> Option<&Path> {
    let table = match (config.detector_backend, config.classifier_backend) {
        (DetectorKind::Scripted, _) => config.detector_fixture_path.as_deref(),
        (_, ClassifierKind::Mock) => config.classifier_fixture_path.as_deref(),
        _ => None,
    };
    table.and_then(Path::parent)
}

/// Key under which scripted backends look up `path`.
pub fn image_key(path: &Path, config: &PipelineConfig) -> String {
    let rel = scripted_root(config).and_then(|root| {
        path.strip_prefix(root).ok().map(Path::to_path_buf).or_else(|| {
            let (p, r) = (path.canonicalize().ok()?, root.canonicalize().ok()?);
            p.strip_prefix(r).ok().map(Path::to_path_buf)
        })
    });
    let key = rel.unwrap_or_else(|| path.to_path_buf());
    key.to_string_lossy().replace('\\', "/")
}

/// File stem per path; paths whose stem is shared with another input use
/// their whole path with separators replaced instead.
pub fn unique_stems(paths: &[String]) -> Vec<String> {
    let stem = |p: &str| {
        Path::new(p)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into())
    };
    let mut counts: HashMap<String, usize> = HashMap::new();
    for p in paths {
        *counts.entry(stem(p)).or_default() += 1;
    }
    paths
        .iter()
        .map(|p| {
            let s = stem(p);
            if counts[&s] == 1 {
                s
            } else {
                let no_ext = Path::new(p).with_extension("");
                no_ext
                    .to_string_lossy()
                    .trim_start_matches(['/', '.'])
                    .replace(['/', '\\', ':'], "__")
            }
        })
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("documents serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn open_image(path: &Path, config: &PipelineConfig) -> Result<SourceImage> {
    SourceImage::open(path, image_key(path, config)).map_err(|e| e.at_stage(Stage::Load))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDocument {
    pub schema: String,
    pub image_path: String,
    pub width: u32,
    pub height: u32,
    /// All detections, descending confidence, before class filtering.
    pub detections: Vec<Detection>,
    pub config: serde_json::Value,
}

pub fn cmd_detect(images: &[PathBuf], config: &PipelineConfig, jobs: usize) -> Result<Batch<DetectionDocument>> {
    if images.is_empty() {
        return Ok(Batch {
            documents: Vec::new(),
            failures: Vec::new(),
        });
    }
    let detector = build_pipeline_detector(config)?;
    let echo = config.echo();
    run_batch(images, jobs, |p| p.display().to_string(), |path| {
        let image = open_image(path, config)?;
        let detections = detector.detect(&image).map_err(|e| e.at_stage(Stage::Detect))?;
        Ok(DetectionDocument {
            schema: DETECTIONS_SCHEMA.into(),
            image_path: path.display().to_string(),
            width: image.width(),
            height: image.height(),
            detections,
            config: echo.clone(),
        })
    })
}

/// Detector wrapped so non-concurrent backends are serialized.
struct DetectOnly(Arc<dyn DetectorBackend>, std::sync::Mutex<()>);

impl DetectOnly {
    fn detect(&self, image: &SourceImage) -> Result<Vec<Detection>> {
        if self.0.concurrent() {
            detection::detect(image, self.0.as_ref())
        } else {
            let _g = self.1.lock().unwrap_or_else(|p| p.into_inner());
            detection::detect(image, self.0.as_ref())
        }
    }
}

fn build_pipeline_detector(config: &PipelineConfig) -> Result<DetectOnly> {
    Ok(DetectOnly(build_detector(config)?, std::sync::Mutex::new(())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsDocument {
    pub schema: String,
    pub image_path: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub input_side: u32,
    pub windows: Vec<WindowRecord>,
    pub config: serde_json::Value,
}

fn write_windows(
    image: &SourceImage,
    image_path: &str,
    bbox: &BoundingBox,
    stem: &str,
    out_dir: &Path,
    config: &PipelineConfig,
) -> Result<WindowsDocument> {
    let windows = windowing::extract_windows(&image.pixels, bbox, config.input_side)
        .map_err(|e| e.at_stage(Stage::Window))?;
    let mut records = Vec::with_capacity(3);
    for w in &windows {
        let file = format!("{stem}_w{}.png", w.ordinal);
        imaging::save_png(&w.pixels, &out_dir.join(&file))?;
        records.push(WindowRecord::new(w, bbox, file));
    }
    Ok(WindowsDocument {
        schema: WINDOWS_SCHEMA.into(),
        image_path: image_path.into(),
        bbox: *bbox,
        input_side: config.input_side,
        windows: records,
        config: config.echo(),
    })
}

/// Writes `<stem>_w0.png`, `<stem>_w1.png`, `<stem>_w2.png` and
/// `<stem>_windows.json` for one image and box.
pub fn cmd_windows(image: &Path, bbox: &BoundingBox, config: &PipelineConfig, out_dir: &Path) -> Result<WindowsDocument> {
    create_dir(out_dir)?;
    let src = SourceImage::open(image, image.display().to_string())?;
    let stem = unique_stems(&[image.display().to_string()]).remove(0);
    let doc = write_windows(&src, &image.display().to_string(), bbox, &stem, out_dir, config)?;
    write_json(&doc, &out_dir.join(format!("{stem}_windows.json")))?;
    Ok(doc)
}

pub const WINDOWS_INDEX_FILE: &str = "windows.json";

/// Windows for every manifest entry, cut from its primary dog detection.
///
/// Writes the window files, `manifest.csv` (one row per window, carrying
/// the entry's identity and split) and `windows.json` with the offsets.
pub fn cmd_windows_manifest(
    manifest_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<Batch<WindowsDocument>> {
    let manifest = dataset::load_manifest(manifest_path)?;
    create_dir(out_dir)?;
    let detector = build_pipeline_detector(config)?;
    let paths: Vec<String> = manifest.entries().iter().map(|e| e.image_path.clone()).collect();
    let stems = unique_stems(&paths);
    let indices: Vec<usize> = (0..manifest.len()).collect();
    let batch = run_batch(&indices, jobs, |&i| paths[i].clone(), |&i| {
        let image = SourceImage::open(&manifest.resolve(i), paths[i].clone()).map_err(|e| e.at_stage(Stage::Load))?;
        let dets = detector.detect(&image).map_err(|e| e.at_stage(Stage::Detect))?;
        let dogs = detection::filter_class(&dets, &config.dog_class, config.min_confidence);
        let primary = detection::select_primary(&dogs)
            .ok_or_else(|| Error::InvalidArgument("no dog detected".into()).at_stage(Stage::Detect))?;
        write_windows(&image, &paths[i], &primary.bbox, &stems[i], out_dir, config)
    })?;
    let by_path: HashMap<&str, usize> = paths.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let rows: Vec<LabeledImage> = batch
        .documents
        .iter()
        .flat_map(|doc| {
            let entry = &manifest.entries()[by_path[doc.image_path.as_str()]];
            doc.windows.iter().map(move |w| LabeledImage {
                image_path: w.file.clone(),
                identity: entry.identity.clone(),
                split: entry.split.clone(),
            })
        })
        .collect();
    if !rows.is_empty() {
        dataset::write_entries(&out_dir.join(fixtures::MANIFEST_FILE), &rows)?;
    }
    write_json(&batch.documents, &out_dir.join(WINDOWS_INDEX_FILE))?;
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentItem {
    pub source: String,
    pub identity: IdentityId,
    /// Variant 0 is the unmodified input.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentDocument {
    pub schema: String,
    pub factor: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub items: Vec<AugmentItem>,
    pub failures: Vec<ItemFailure>,
    pub config: serde_json::Value,
}

pub const AUGMENT_INDEX_FILE: &str = "augment.json";

/// Expands every manifest image into `factor` PNG files
/// `<stem>_aug<k>.png`, `k = 0` being the original, and writes
/// `manifest.csv` and `augment.json` into `out_dir`.
///
/// Variant `k` of input `i` uses draw index `i * factor + k`, the same
/// numbering as [`augmentation::expand_dataset`].
pub fn cmd_augment(
    manifest_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<Batch<AugmentItem>> {
    let manifest = dataset::load_manifest(manifest_path)?;
    config.augmentation.validate()?;
    create_dir(out_dir)?;
    let factor = config.effective_factor();
    let paths: Vec<String> = manifest.entries().iter().map(|e| e.image_path.clone()).collect();
    let stems = unique_stems(&paths);
    let indices: Vec<usize> = (0..manifest.len()).collect();
    let batch = run_batch(&indices, jobs, |&i| paths[i].clone(), |&i| {
        let src = imaging::load_rgb(&manifest.resolve(i))?;
        let mut files = Vec::with_capacity(factor);
        for v in 0..factor {
            let out = if v == 0 {
                src.clone()
            } else {
                augmentation::augment_image(&src, &config.augmentation, augmentation::draw_index(i, v, factor))
            };
            let file = format!("{}_aug{v}.png", stems[i]);
            imaging::save_png(&out, &out_dir.join(&file))?;
            files.push(file);
        }
        Ok(AugmentItem {
            source: paths[i].clone(),
            identity: manifest.entries()[i].identity.clone(),
            files,
        })
    })?;
    let split_of: HashMap<&str, Option<String>> = manifest
        .entries()
        .iter()
        .map(|e| (e.image_path.as_str(), e.split.clone()))
        .collect();
    let rows: Vec<LabeledImage> = batch
        .documents
        .iter()
        .flat_map(|item| {
            let split = split_of[item.source.as_str()].clone();
            item.files.iter().map(move |f| LabeledImage {
                image_path: f.clone(),
                identity: item.identity.clone(),
                split: split.clone(),
            })
        })
        .collect();
    if !rows.is_empty() {
        dataset::write_entries(&out_dir.join(fixtures::MANIFEST_FILE), &rows)?;
    }
    let doc = AugmentDocument {
        schema: AUGMENT_SCHEMA.into(),
        factor,
        inputs: manifest.len(),
        outputs: rows.len(),
        items: batch.documents.clone(),
        failures: batch.failures.clone(),
        config: config.echo(),
    };
    write_json(&doc, &out_dir.join(AUGMENT_INDEX_FILE))?;
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Identified,
    NotIdentified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyDocument {
    pub schema: String,
    pub image_path: String,
    pub status: Status,
    pub reason: Option<NoPrediction>,
    /// The primary dog only, or every dog when `all_dogs` is set.
    pub predictions: Vec<PredictionDocument>,
    pub config: serde_json::Value,
}

pub fn cmd_identify(images: &[PathBuf], config: &PipelineConfig, jobs: usize) -> Result<Batch<IdentifyDocument>> {
    let pipeline = build_pipeline(config)?;
    let echo = config.echo();
    run_batch(images, jobs, |p| p.display().to_string(), |path| {
        let image = open_image(path, config)?;
        let predictions = if config.all_dogs {
            pipeline.identify_all(&image)?
        } else {
            match pipeline.identify(&image)? {
                IdentifyOutcome::Identified { prediction } => vec![*prediction],
                IdentifyOutcome::NotIdentified { .. } => Vec::new(),
            }
        };
        let ids = pipeline.identities();
        Ok(IdentifyDocument {
            schema: PREDICTION_SCHEMA.into(),
            image_path: path.display().to_string(),
            status: if predictions.is_empty() {
                Status::NotIdentified
            } else {
                Status::Identified
            },
            reason: predictions.is_empty().then_some(NoPrediction::NoDogDetected),
            predictions: predictions.iter().map(|p| PredictionDocument::new(p, ids)).collect(),
            config: echo.clone(),
        })
    })
}

fn load_checked_manifest(manifest_path: &Path) -> Result<DatasetManifest> {
    let manifest = dataset::load_manifest(manifest_path)?;
    let report = dataset::validate_manifest(&manifest, dataset::DEFAULT_MIN_IMAGES);
    for d in &report.deficient {
        log::warn!(
            "identity {} has {} images, fewer than {}",
            d.identity,
            d.count,
            report.min_images
        );
    }
    Ok(manifest)
}

/// Writes a folds file for the manifest using `cv_k` and `seed`.
pub fn cmd_folds(manifest_path: &Path, config: &PipelineConfig, out: &Path) -> Result<FoldsDocument> {
    let manifest = load_checked_manifest(manifest_path)?;
    let folds = dataset::make_folds(&manifest, config.cv_k, config.seed)?;
    let doc = FoldsDocument::new(&manifest, &folds);
    doc.write(out)?;
    Ok(doc)
}

/// Evaluates the manifest under the configured protocol and, when `report`
/// is given, writes the report there. A folds file, if given, replaces the
/// folds derived from `cv_k` and `seed`.
pub fn cmd_evaluate(
    manifest_path: &Path,
    config: &PipelineConfig,
    folds_path: Option<&Path>,
    jobs: usize,
    report: Option<&Path>,
) -> Result<EvaluationReport> {
    let manifest = load_checked_manifest(manifest_path)?;
    let detector = build_detector(config)?;
    let factory = build_classifier_factory(config)?;
    let options = EvaluateOptions {
        identify: config.identify_config(),
        jobs,
        config_echo: config.echo(),
    };
    let result = match config.protocol {
        Protocol::CrossValidation => {
            let folds = match folds_path {
                Some(p) => FoldsDocument::read(p)?.to_assignment(&manifest)?,
                None => dataset::make_folds(&manifest, config.cv_k, config.seed)?,
            };
            evaluation::evaluate(&manifest, &folds, detector, factory.as_ref(), &options)?
        }
        Protocol::Holdout => evaluation::evaluate_holdout(&manifest, detector, factory.as_ref(), &options)?,
    };
    if let Some(path) = report {
        evaluation::write_report(&result, path)?;
    }
    Ok(result)
}

pub const CONFIG_FILE: &str = "config.toml";

/// Generates a fixture set and a `config.toml` beside it that runs the
/// pipeline on its scripted tables.
pub fn cmd_fixtures(
    num_identities: usize,
    images_per_identity: usize,
    seed: u64,
    options: &FixtureOptions,
    out_dir: &Path,
) -> Result<FixtureSet> {
    let set = fixtures::generate_fixture_set(num_identities, images_per_identity, seed, options, out_dir)?;
    let config = PipelineConfig {
        detector_fixture_path: Some(fixtures::DETECTIONS_FILE.into()),
        classifier_fixture_path: Some(fixtures::SCORES_FILE.into()),
        seed,
        ..set.config()
    };
    fs::write(out_dir.join(CONFIG_FILE), config.to_toml()?).map_err(|e| Error::io(out_dir.join(CONFIG_FILE), e))?;
    Ok(set)
}
