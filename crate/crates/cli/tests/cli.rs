use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn petident(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petident"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A 4×5 fixture set in `<dir>/fx` with its generated `config.toml`.
fn fixtures(dir: &Path, fraction: &str) -> PathBuf {
    let o = petident(
        dir,
        &[
            "fixtures",
            "--identities",
            "4",
            "--per-identity",
            "5",
            "--correct-fraction",
            fraction,
            "--seed",
            "3",
            "--out",
            "fx",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("fx")
}

fn manifest_images(fx: &Path) -> Vec<String> {
    fs::read_to_string(fx.join("manifest.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| format!("fx/{}", l.split(',').next().unwrap()))
        .collect()
}

#[test]
fn evaluate_perfect_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "1.0");
    let o = petident(
        dir.path(),
        &["--config", "fx/config.toml", "--cv-k", "5", "evaluate", "fx/manifest.csv", "--out", "report.json"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "petident-report/1");
    assert_eq!(report["mean_accuracy"], 1.0);
    assert_eq!(report["k"], 5);
    assert_eq!(report["config_echo"]["cv_k"], 5);
    assert_eq!(report["confusion"].as_array().unwrap().len(), 4);
}

#[test]
fn identify_keeps_input_order_and_reports_missing_dog() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures(dir.path(), "1.0");
    let mut images = manifest_images(&fx);
    images.reverse();
    let blank = dir.path().join("blank.png");
    image::RgbImage::new(80, 60).save(&blank).unwrap();
    images.insert(3, "blank.png".into());
    let mut args = vec!["--config", "fx/config.toml", "--jobs", "4", "identify"];
    args.extend(images.iter().map(String::as_str));
    let o = petident(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let docs: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(docs.len(), images.len());
    for (doc, image) in docs.iter().zip(&images) {
        assert_eq!(doc["image_path"], image.as_str());
        assert_eq!(doc["config"]["input_side"], 299);
    }
    assert_eq!(docs[3]["status"], "not_identified");
    assert_eq!(docs[3]["reason"], "no_dog_detected");
    let first = &docs[0];
    assert_eq!(first["status"], "identified");
    let truth = Path::new(&images[0]).file_stem().unwrap().to_string_lossy()[..5].to_string();
    assert_eq!(first["predictions"][0]["identity"], truth.as_str());
    assert_eq!(first["predictions"][0]["windows"].as_array().unwrap().len(), 3);
}

#[test]
fn identify_writes_documents_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures(dir.path(), "1.0");
    let images = manifest_images(&fx);
    let o = petident(dir.path(), &["--config", "fx/config.toml", "identify", &images[0], "--out", "pred"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("pred/dog00_000.prediction.json").is_file());
}

#[test]
fn missing_model_is_fatal_and_stage_attributed() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures(dir.path(), "1.0");
    let images = manifest_images(&fx);
    let o = petident(
        dir.path(),
        &[
            "--config",
            "fx/config.toml",
            "--classifier-backend",
            "onnx",
            "--classifier-model",
            "nowhere/model.onnx",
            "identify",
            &images[0],
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("[classify]"), "{err}");
    assert!(err.contains("nowhere/model.onnx"), "{err}");
}

#[test]
fn unreadable_image_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixtures(dir.path(), "1.0");
    let images = manifest_images(&fx);
    let o = petident(dir.path(), &["--config", "fx/config.toml", "detect", &images[0], "missing.png"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.png"));
    let doc: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(doc["schema"], "petident-detections/1");
    assert!(!doc["detections"].as_array().unwrap().is_empty());
}

#[test]
fn empty_detect_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let o = petident(dir.path(), &["detect"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn windows_from_box() {
    let dir = tempfile::tempdir().unwrap();
    image::RgbImage::from_fn(320, 120, |x, _| image::Rgb([x as u8, 0, 0]))
        .save(dir.path().join("wide.png"))
        .unwrap();
    let o = petident(
        dir.path(),
        &["--input-side", "64", "windows", "wide.png", "--box", "10,10,300,100", "--out", "w"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let offsets: Vec<u64> = doc["windows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w["offset"].as_u64().unwrap())
        .collect();
    assert_eq!(offsets, vec![0, 100, 200]);
    for k in 0..3 {
        assert!(dir.path().join(format!("w/wide_w{k}.png")).is_file());
    }
    assert!(dir.path().join("w/wide_windows.json").is_file());

    let o = petident(dir.path(), &["windows", "wide.png", "--box", "10,10,0,100", "--out", "w"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn windows_for_manifest_write_window_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "1.0");
    let o = petident(
        dir.path(),
        &["--config", "fx/config.toml", "windows", "--manifest", "fx/manifest.csv", "--out", "win"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = fs::read_to_string(dir.path().join("win/manifest.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 20);
    assert!(rows.contains("dog00_000_w2.png,dog00"));
}

#[test]
fn augment_sixteen_fold_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("img")).unwrap();
    let mut manifest = String::from("image_path,identity_id\n");
    for i in 0..10 {
        image::RgbImage::from_fn(20, 20, |x, y| image::Rgb([(x * 9 + i) as u8, (y * 11) as u8, 40]))
            .save(dir.path().join(format!("img/p{i}.png")))
            .unwrap();
        manifest.push_str(&format!("img/p{i}.png,dog{}\n", i % 2));
    }
    fs::write(dir.path().join("m.csv"), manifest).unwrap();
    for out in ["a1", "a2"] {
        let o = petident(dir.path(), &["--seed", "5", "augment", "m.csv", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let pngs = |d: &str| {
        let mut v: Vec<PathBuf> = fs::read_dir(dir.path().join(d))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        v.sort();
        v
    };
    let (a, b) = (pngs("a1"), pngs("a2"));
    assert_eq!(a.len(), 160);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let rows = fs::read_to_string(dir.path().join("a1/manifest.csv")).unwrap();
    assert_eq!(rows.lines().count(), 161);
    assert!(dir.path().join("a1/p3_aug15.png").is_file());

    let o = petident(dir.path(), &["augment", "m.csv", "--factor", "1", "--out", "copy"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(pngs("copy").len(), 10);
}

#[test]
fn folds_then_evaluate_and_mismatch_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path(), "0.75");
    let base = ["--config", "fx/config.toml", "--cv-k", "5"];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| petident(dir.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());

    let o = run(with(&["folds", "fx/manifest.csv", "--out", "folds.json"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(with(&["evaluate", "fx/manifest.csv", "--folds", "folds.json", "--out", "r.json"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["overall_accuracy"], 0.75);

    let mut folds: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("folds.json")).unwrap()).unwrap();
    folds["entries"][0]["identity_id"] = Value::from("dog03");
    fs::write(dir.path().join("bad.json"), folds.to_string()).unwrap();
    let o = run(with(&["evaluate", "fx/manifest.csv", "--folds", "bad.json"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fold"), "{}", stderr(&o));
}

#[test]
fn config_errors_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "colour = 3\n").unwrap();
    let o = petident(dir.path(), &["--config", "bad.toml", "detect"]);
    assert_eq!(o.status.code(), Some(1));
    let o = petident(dir.path(), &["--min-confidence", "2", "detect"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("min_confidence"));
}
