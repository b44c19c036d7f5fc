//! Synthetic fixture sets for tests and demos.
//!
//! A fixture set is a directory holding procedurally drawn PNG images (one
//! coloured blob per "dog"), a manifest, a scripted detection table and a
//! scripted score table keyed by `(image_path, window_ordinal)`. The score
//! table makes the true identity win the vote for a chosen fraction of the
//! images and a wrong identity win by majority for the rest.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::RngCore;

use crate::config::{ClassifierKind, DetectorKind, PipelineConfig};
use crate::dataset::{self, DatasetManifest, IdentityId, LabeledImage};
use crate::detection::{RawDetection, ScriptedDetector};
use crate::imaging;
use crate::inference::{MockBackend, MockKey};
use crate::seeding;
use crate::windowing::DEFAULT_INPUT_SIDE;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const SCORES_FILE: &str = "scores.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    /// Fraction of images whose scripted windows vote for the true identity.
    pub correct_fraction: f64,
    pub width: u32,
    pub height: u32,
    /// Add person boxes, low-confidence dogs and secondary dogs.
    pub decoys: bool,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            correct_fraction: 1.0,
            width: 160,
            height: 120,
            decoys: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub detections: ScriptedDetector,
    pub scores: MockBackend,
    /// Whether each manifest entry is scripted to be identified correctly.
    pub scripted_correct: Vec<bool>,
}

impl FixtureSet {
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn detections_path(&self) -> PathBuf {
        self.root.join(DETECTIONS_FILE)
    }

    pub fn scores_path(&self) -> PathBuf {
        self.root.join(SCORES_FILE)
    }

    pub fn correct_count(&self) -> usize {
        self.scripted_correct.iter().filter(|&&c| c).count()
    }

    /// Configuration that runs the pipeline on the scripted backends.
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            detector_backend: DetectorKind::Scripted,
            detector_fixture_path: Some(self.detections_path()),
            classifier_backend: ClassifierKind::Mock,
            classifier_fixture_path: Some(self.scores_path()),
            input_side: DEFAULT_INPUT_SIDE,
            ..PipelineConfig::default()
        }
    }
}

/// Generates `num_identities × images_per_identity` images under `out_dir`.
pub fn generate_fixture_set(
    num_identities: usize,
    images_per_identity: usize,
    seed: u64,
    options: &FixtureOptions,
    out_dir: &Path,
) -> Result<FixtureSet> {
    if num_identities < 2 {
        return Err(Error::InvalidArgument(format!(
            "num_identities {num_identities} must be >= 2"
        )));
    }
    if images_per_identity < 1 {
        return Err(Error::InvalidArgument("images_per_identity must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&options.correct_fraction) {
        return Err(Error::InvalidArgument(format!(
            "correct_fraction {} outside [0, 1]",
            options.correct_fraction
        )));
    }
    if options.width < 64 || options.height < 48 {
        return Err(Error::InvalidArgument("fixture images must be at least 64x48".into()));
    }

    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut rng = seeding::rng_for("petident/fixtures", &[&seed.to_le_bytes()]);

    let identities: Vec<IdentityId> = (0..num_identities)
        .map(|i| IdentityId::new(format!("dog{i:02}")).expect("non-empty"))
        .collect();
    let colors: Vec<[u8; 3]> = (0..num_identities).map(|_| random_color(&mut rng)).collect();

    let total = num_identities * images_per_identity;
    let n_correct = (options.correct_fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    seeding::shuffle(&mut order, &mut rng);
    let mut scripted_correct = vec![true; total];
    for &i in &order[..total - n_correct] {
        scripted_correct[i] = false;
    }

    let mut entries = Vec::with_capacity(total);
    let mut detections = ScriptedDetector::new();
    let mut scores = MockBackend::new(identities.clone(), DEFAULT_INPUT_SIDE);

    for (class, identity) in identities.iter().enumerate() {
        for j in 0..images_per_identity {
            let idx = class * images_per_identity + j;
            let rel = format!("images/{identity}_{j:03}.png");
            let (image, dog) = draw_image(&mut rng, options, colors[class]);
            imaging::save_png(&image, &out_dir.join(&rel))?;

            let mut primary = dog.clone();
            primary.confidence = 0.8 + 0.19 * seeding::unit_f64(&mut rng);
            if dog.x + dog.w >= options.width as i64 - 2 {
                // report a box that overshoots the right edge
                primary.w += 12;
            }
            detections.insert(rel.clone(), primary);
            if options.decoys {
                add_decoys(&mut detections, &rel, idx, options);
            }

            let labels = window_labels(&mut rng, class, num_identities, scripted_correct[idx], idx);
            for (ordinal, vector) in labels.into_iter().enumerate() {
                scores.insert(MockKey::Source(rel.clone(), ordinal), vector);
            }
            entries.push(LabeledImage {
                image_path: rel,
                identity: identity.clone(),
                split: Some(if j == 0 { "test" } else { "train" }.to_string()),
            });
        }
    }

    dataset::write_entries(&out_dir.join(MANIFEST_FILE), &entries)?;
    detections.write_csv(&out_dir.join(DETECTIONS_FILE))?;
    scores.write_csv(&out_dir.join(SCORES_FILE))?;
    let manifest = DatasetManifest::from_entries(out_dir, entries)?;

    Ok(FixtureSet {
        root: out_dir.to_path_buf(),
        manifest,
        detections,
        scores,
        scripted_correct,
    })
}

fn random_color(rng: &mut impl RngCore) -> [u8; 3] {
    let v = rng.next_u64();
    [
        64 + (v & 0xbf) as u8,
        64 + ((v >> 8) & 0xbf) as u8,
        64 + ((v >> 16) & 0xbf) as u8,
    ]
}

fn range(rng: &mut impl RngCore, lo: u32, hi: u32) -> u32 {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as u32
}

/// Draws background plus an elliptical blob; returns the blob's box.
fn draw_image(rng: &mut impl RngCore, opt: &FixtureOptions, color: [u8; 3]) -> (RgbImage, RawDetection) {
    let (width, height) = (opt.width, opt.height);
    let tint = random_color(rng);
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        let g = (y * 255 / height) as u8;
        let stripe = if (x / 8 + y / 8) % 2 == 0 { 12 } else { 0 };
        Rgb([
            (tint[0] / 3).saturating_add(g / 4).saturating_add(stripe),
            (tint[1] / 3).saturating_add(g / 5),
            (tint[2] / 3).saturating_add(g / 6).saturating_add(stripe),
        ])
    });
    let w = range(rng, width / 4, width * 3 / 4);
    let h = range(rng, height / 4, height * 3 / 4);
    let x = range(rng, 0, width - w);
    let y = range(rng, 0, height - h);
    let (cx, cy) = (x as f64 + w as f64 / 2.0, y as f64 + h as f64 / 2.0);
    let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
    for py in y..y + h {
        for px in x..x + w {
            let dx = (px as f64 + 0.5 - cx) / rx;
            let dy = (py as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                let shade = ((px + py) % 16) as u8;
                img.put_pixel(
                    px,
                    py,
                    Rgb([
                        color[0].saturating_sub(shade),
                        color[1].saturating_sub(shade),
                        color[2].saturating_sub(shade),
                    ]),
                );
            }
        }
    }
    let det = RawDetection {
        x: x as i64,
        y: y as i64,
        w: w as i64,
        h: h as i64,
        class_label: "dog".into(),
        confidence: 0.0,
    };
    (img, det)
}

fn add_decoys(table: &mut ScriptedDetector, key: &str, idx: usize, opt: &FixtureOptions) {
    let (w, h) = (opt.width as i64, opt.height as i64);
    if idx.is_multiple_of(3) {
        table.insert(
            key,
            RawDetection {
                x: 0,
                y: 0,
                w: w / 3,
                h: h / 2,
                class_label: "person".into(),
                confidence: 0.99,
            },
        );
    }
    if idx % 4 == 1 {
        table.insert(
            key,
            RawDetection {
                x: w / 2,
                y: h / 2,
                w: w / 2,
                h: h / 2,
                class_label: "dog".into(),
                confidence: 0.3,
            },
        );
    }
    if idx % 5 == 2 {
        table.insert(
            key,
            RawDetection {
                x: w / 4,
                y: h / 4,
                w: w / 5,
                h: h / 5,
                class_label: "dog".into(),
                confidence: 0.6,
            },
        );
    }
}

/// Distribution over `k` classes with `peak` at `label`; every other entry
/// is below `1 - peak`.
fn peaked(rng: &mut impl RngCore, k: usize, label: usize, peak: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..k)
        .map(|c| if c == label { 0.0 } else { 0.05 + seeding::unit_f64(rng) })
        .collect();
    let total: f64 = weights.iter().sum();
    let rest = 1.0 - peak;
    (0..k)
        .map(|c| if c == label { peak } else { rest * weights[c] / total })
        .collect()
}

fn window_labels(rng: &mut impl RngCore, truth: usize, k: usize, correct: bool, idx: usize) -> Vec<Vec<f64>> {
    let other = |rng: &mut dyn RngCore, avoid: &[usize]| loop {
        let c = (rng.next_u64() % k as u64) as usize;
        if !avoid.contains(&c) {
            break c;
        }
    };
    let hi = |rng: &mut dyn RngCore| 0.78 + 0.12 * seeding::unit_f64(rng);
    let lo = |rng: &mut dyn RngCore| 0.55 + 0.2 * seeding::unit_f64(rng);
    let pattern = idx % 3;
    if !correct {
        let wrong = other(rng, &[truth]);
        let odd = (rng.next_u64() % 3) as usize;
        return (0..3)
            .map(|w| {
                let label = if pattern != 0 && w == odd { truth } else { wrong };
                let p = hi(rng);
                peaked(rng, k, label, p)
            })
            .collect();
    }
    match pattern {
        // unanimous
        0 => (0..3).map(|_| { let p = hi(rng); peaked(rng, k, truth, p) }).collect(),
        // three distinct labels, truth holds the strongest activation
        2 if k >= 3 => {
            let a = other(rng, &[truth]);
            let b = other(rng, &[truth, a]);
            let strong = (rng.next_u64() % 3) as usize;
            let others = [a, b];
            let mut next = 0;
            (0..3)
                .map(|w| {
                    if w == strong {
                        let p = hi(rng);
                        peaked(rng, k, truth, p)
                    } else {
                        let label = others[next];
                        next += 1;
                        let p = lo(rng);
                        peaked(rng, k, label, p)
                    }
                })
                .collect()
        }
        // two of three
        _ => {
            let odd = (rng.next_u64() % 3) as usize;
            let stray = other(rng, &[truth]);
            (0..3)
                .map(|w| {
                    let label = if w == odd { stray } else { truth };
                    let p = hi(rng);
                    peaked(rng, k, label, p)
                })
                .collect()
        }
    }
}
