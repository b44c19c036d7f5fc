use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use petident::dataset::make_folds;
use petident::detection::ScriptedDetector;
use petident::evaluation::{evaluate, EvaluateOptions, SharedClassifier};
use petident::fixtures::{generate_fixture_set, FixtureOptions, FixtureSet};
use petident::identification::NoPrediction;
use petident::inference::MockBackend;
use petident::{ClassifierBackend, DetectorBackend, IdentifyConfig, IdentityId, Result, Window};

fn fixture(dir: &Path, ids: usize, per: usize) -> FixtureSet {
    generate_fixture_set(ids, per, 21, &FixtureOptions::default(), dir).unwrap()
}

fn options(jobs: usize) -> EvaluateOptions {
    EvaluateOptions {
        identify: IdentifyConfig::default(),
        jobs,
        config_echo: serde_json::json!({"run": "pipeline-test"}),
    }
}

#[test]
fn perfect_mock_gives_diagonal_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let set = fixture(dir.path(), 5, 5);
    let folds = make_folds(&set.manifest, 5, 3).unwrap();
    let report = evaluate(
        &set.manifest,
        &folds,
        Arc::new(set.detections.clone()),
        &SharedClassifier(Arc::new(set.scores.clone())),
        &options(1),
    )
    .unwrap();
    assert_eq!(report.per_fold_accuracy, vec![1.0; 5]);
    assert_eq!(report.mean_accuracy, 1.0);
    for (i, row) in report.confusion.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            assert_eq!(c, if i == j { 5 } else { 0 });
        }
    }
    assert_eq!(report.evaluated(), 25);
    report.check_consistency().unwrap();
}

#[test]
fn constant_predictor_on_balanced_set() {
    let dir = tempfile::tempdir().unwrap();
    let set = fixture(dir.path(), 4, 4);
    let ids: Vec<IdentityId> = set.manifest.registry().ids().to_vec();
    let constant = MockBackend::new(ids, 299).with_fallback(vec![0.7, 0.1, 0.1, 0.1]);
    let folds = make_folds(&set.manifest, 4, 0).unwrap();
    let report = evaluate(
        &set.manifest,
        &folds,
        Arc::new(set.detections.clone()),
        &SharedClassifier(Arc::new(constant)),
        &options(2),
    )
    .unwrap();
    assert!((report.mean_accuracy - 0.25).abs() < 1e-12);
    assert!((report.overall_accuracy - 0.25).abs() < 1e-12);
    for row in &report.confusion {
        assert_eq!(row, &vec![4, 0, 0, 0]);
    }
}

#[test]
fn image_without_dog_counts_as_error() {
    let dir = tempfile::tempdir().unwrap();
    let set = fixture(dir.path(), 3, 5);
    let dropped = set.manifest.entries()[4].image_path.clone();
    let mut detector = ScriptedDetector::new();
    for e in set.manifest.entries() {
        if e.image_path != dropped {
            for d in set.detections.get(&e.image_path) {
                detector.insert(e.image_path.clone(), d.clone());
            }
        }
    }
    let folds = make_folds(&set.manifest, 5, 1).unwrap();
    let report = evaluate(
        &set.manifest,
        &folds,
        Arc::new(detector),
        &SharedClassifier(Arc::new(set.scores.clone())),
        &options(1),
    )
    .unwrap();
    let rec = report
        .per_image_records
        .iter()
        .find(|r| r.image_path == dropped)
        .unwrap();
    assert!(!rec.correct);
    assert_eq!(rec.reason, Some(NoPrediction::NoDogDetected));
    let truth = rec.truth_index;
    assert_eq!(report.unpredicted[truth], 1);
    let total: u64 = report.confusion.iter().flatten().sum::<u64>() + report.unpredicted.iter().sum::<u64>();
    assert_eq!(total as usize, set.manifest.len());
    assert!((report.overall_accuracy - 14.0 / 15.0).abs() < 1e-12);
    report.check_consistency().unwrap();
}

#[test]
fn report_is_independent_of_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let set = generate_fixture_set(
        6,
        5,
        4,
        &FixtureOptions {
            correct_fraction: 0.6,
            ..FixtureOptions::default()
        },
        dir.path(),
    )
    .unwrap();
    let folds = make_folds(&set.manifest, 5, 9).unwrap();
    let run = |jobs| {
        evaluate(
            &set.manifest,
            &folds,
            Arc::new(set.detections.clone()),
            &SharedClassifier(Arc::new(set.scores.clone())),
            &options(jobs),
        )
        .unwrap()
    };
    let serial = run(1);
    assert_eq!(serial, run(8));
    assert_eq!(serial.config_echo["run"], "pipeline-test");
}

/// Fails the test if two calls ever overlap.
struct Exclusive {
    inner: MockBackend,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl ClassifierBackend for Exclusive {
    fn input_side(&self) -> u32 {
        self.inner.input_side()
    }

    fn identities(&self) -> &[IdentityId] {
        self.inner.identities()
    }

    fn scores(&self, window: &Window) -> Result<Vec<f64>> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(std::time::Duration::from_micros(200));
        let out = self.inner.scores(window);
        self.active.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn concurrent(&self) -> bool {
        false
    }
}

#[test]
fn non_concurrent_backend_is_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let set = fixture(dir.path(), 4, 5);
    let backend = Arc::new(Exclusive {
        inner: set.scores.clone(),
        active: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let folds = make_folds(&set.manifest, 5, 0).unwrap();
    let detector: Arc<dyn DetectorBackend> = Arc::new(set.detections.clone());
    let report = evaluate(
        &set.manifest,
        &folds,
        detector,
        &SharedClassifier(backend.clone()),
        &options(8),
    )
    .unwrap();
    assert_eq!(report.mean_accuracy, 1.0);
    assert_eq!(backend.peak.load(Ordering::SeqCst), 1);
}
