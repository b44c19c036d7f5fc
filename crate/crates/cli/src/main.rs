use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use petident::commands::{self, Batch, ItemFailure, EXIT_FATAL};
use petident::config::{ClassifierKind, DetectorKind};
use petident::evaluation::Protocol;
use petident::fixtures::FixtureOptions;
use petident::{BoundingBox, PipelineConfig, VotingVariant};

/// Dog identification: detect, cut three square windows, classify, vote.
#[derive(Parser, Debug)]
#[command(name = "petident", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true, value_enum)]
    detector_backend: Option<DetectorArg>,
    #[arg(long, global = true)]
    detector_model: Option<PathBuf>,
    #[arg(long, global = true)]
    label_map: Option<PathBuf>,
    /// Scripted detection table (CSV).
    #[arg(long, global = true)]
    detector_fixture: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    classifier_backend: Option<ClassifierArg>,
    /// Classifier model; may contain `{fold}` for `evaluate`.
    #[arg(long, global = true)]
    classifier_model: Option<PathBuf>,
    /// Scripted score table (CSV).
    #[arg(long, global = true)]
    classifier_fixture: Option<PathBuf>,
    #[arg(long, global = true)]
    min_confidence: Option<f64>,
    #[arg(long, global = true)]
    input_side: Option<u32>,
    #[arg(long, global = true, value_enum)]
    voting_variant: Option<VotingArg>,
    #[arg(long, global = true)]
    cv_k: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DetectorArg {
    Onnx,
    Scripted,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClassifierArg {
    Onnx,
    Mock,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VotingArg {
    MaxSingle,
    SumScores,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    CrossValidation,
    Holdout,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the detector and write one detection document per image.
    Detect { images: Vec<PathBuf> },

    /// Cut the three square windows from a box, or from the primary dog of
    /// every manifest entry with `--manifest`.
    Windows {
        #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
        image: Option<PathBuf>,
        /// Box as `x,y,w,h`.
        #[arg(long = "box", value_parser = parse_box, required_unless_present = "manifest")]
        bbox: Option<BoundingBox>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },

    /// Expand a manifest of images by the configured augmentation factor.
    Augment {
        manifest: PathBuf,
        #[arg(long)]
        factor: Option<usize>,
        /// Count the factor as variants on top of the original.
        #[arg(long)]
        factor_excludes_original: bool,
    },

    /// Identify the dog in each image.
    Identify {
        images: Vec<PathBuf>,
        /// Identify every dog detection instead of the primary one.
        #[arg(long)]
        all_dogs: bool,
    },

    /// Cross-validate the pipeline over a manifest and write a report.
    Evaluate {
        manifest: PathBuf,
        /// Folds file from `folds`; replaces folds derived from the seed.
        #[arg(long)]
        folds: Option<PathBuf>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
    },

    /// Write a stratified fold assignment for a manifest.
    Folds { manifest: PathBuf },

    /// Generate a synthetic fixture set with scripted backend tables.
    Fixtures {
        #[arg(long, default_value_t = 16)]
        identities: usize,
        #[arg(long, default_value_t = 5)]
        per_identity: usize,
        /// Fraction of images scripted to be identified correctly.
        #[arg(long, default_value_t = 1.0)]
        correct_fraction: f64,
    },
}

fn parse_box(s: &str) -> Result<BoundingBox, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("expected x,y,w,h: {e}"))?;
    match parts[..] {
        [x, y, w, h] => Ok(BoundingBox { x, y, w, h }),
        _ => Err(format!("expected 4 comma-separated integers, got {}", parts.len())),
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let o = &common.overrides;
    if let Some(v) = o.detector_backend {
        cfg.detector_backend = match v {
            DetectorArg::Onnx => DetectorKind::Onnx,
            DetectorArg::Scripted => DetectorKind::Scripted,
        };
    }
    if let Some(v) = o.classifier_backend {
        cfg.classifier_backend = match v {
            ClassifierArg::Onnx => ClassifierKind::Onnx,
            ClassifierArg::Mock => ClassifierKind::Mock,
        };
    }
    if let Some(v) = o.voting_variant {
        cfg.voting_variant = match v {
            VotingArg::MaxSingle => VotingVariant::MaxSingle,
            VotingArg::SumScores => VotingVariant::SumScores,
        };
    }
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut cfg.detector_model_path, &o.detector_model);
    set(&mut cfg.label_map_path, &o.label_map);
    set(&mut cfg.detector_fixture_path, &o.detector_fixture);
    set(&mut cfg.classifier_model_path, &o.classifier_model);
    set(&mut cfg.classifier_fixture_path, &o.classifier_fixture);
    if let Some(v) = o.min_confidence {
        cfg.min_confidence = v;
    }
    if let Some(v) = o.input_side {
        cfg.input_side = v;
    }
    if let Some(v) = o.cv_k {
        cfg.cv_k = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
        cfg.augmentation.seed = v;
    }
    Ok(cfg)
}

fn jobs(common: &Common) -> usize {
    common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn report_failures(failures: &[ItemFailure]) {
    for f in failures {
        match f.stage {
            Some(stage) => eprintln!("failed [{stage}] {}: {}", f.input, f.message),
            None => eprintln!("failed {}: {}", f.input, f.message),
        }
    }
}

/// One JSON line per document on stdout, or `<stem>.<kind>.json` files in
/// `--out`.
fn emit<T: Serialize>(batch: &Batch<T>, names: impl Fn(&T) -> String, kind: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let paths: Vec<String> = batch.documents.iter().map(&names).collect();
            for (doc, stem) in batch.documents.iter().zip(commands::unique_stems(&paths)) {
                commands::write_json(doc, &dir.join(format!("{stem}.{kind}.json")))?;
            }
        }
        None => {
            for doc in &batch.documents {
                println!("{}", serde_json::to_string(doc)?);
            }
        }
    }
    report_failures(&batch.failures);
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = load_config(&cli.common)?;
    let jobs = jobs(&cli.common);
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Detect { images } => {
            cfg.validate()?;
            let batch = commands::cmd_detect(&images, &cfg, jobs)?;
            emit(&batch, |d| d.image_path.clone(), "detections", out)?;
            Ok(batch.exit_code())
        }
        Command::Windows { image, bbox, manifest } => {
            cfg.validate()?;
            let dir = out.unwrap_or(Path::new("windows"));
            match (manifest, image, bbox) {
                (Some(m), _, _) => {
                    let batch = commands::cmd_windows_manifest(&m, &cfg, dir, jobs)?;
                    report_failures(&batch.failures);
                    eprintln!(
                        "wrote {} windows for {} images to {}",
                        3 * batch.documents.len(),
                        batch.documents.len(),
                        dir.display()
                    );
                    Ok(batch.exit_code())
                }
                (None, Some(image), Some(bbox)) => {
                    let doc = commands::cmd_windows(&image, &bbox, &cfg, dir)?;
                    println!("{}", serde_json::to_string(&doc)?);
                    Ok(0)
                }
                _ => bail!("windows needs an image and --box, or --manifest"),
            }
        }
        Command::Augment {
            manifest,
            factor,
            factor_excludes_original,
        } => {
            if let Some(f) = factor {
                cfg.augmentation_factor = f;
            }
            cfg.factor_excludes_original |= factor_excludes_original;
            cfg.validate()?;
            let dir = out.unwrap_or(Path::new("augmented"));
            let batch = commands::cmd_augment(&manifest, &cfg, dir, jobs)?;
            report_failures(&batch.failures);
            let files: usize = batch.documents.iter().map(|i| i.files.len()).sum();
            eprintln!("wrote {files} images to {}", dir.display());
            Ok(batch.exit_code())
        }
        Command::Identify { images, all_dogs } => {
            cfg.all_dogs |= all_dogs;
            cfg.validate()?;
            let batch = commands::cmd_identify(&images, &cfg, jobs)?;
            emit(&batch, |d| d.image_path.clone(), "prediction", out)?;
            Ok(batch.exit_code())
        }
        Command::Evaluate {
            manifest,
            folds,
            protocol,
        } => {
            if let Some(p) = protocol {
                cfg.protocol = match p {
                    ProtocolArg::CrossValidation => Protocol::CrossValidation,
                    ProtocolArg::Holdout => Protocol::Holdout,
                };
            }
            cfg.validate()?;
            let path = out.unwrap_or(Path::new("report.json"));
            let report = commands::cmd_evaluate(&manifest, &cfg, folds.as_deref(), jobs, Some(path))?;
            eprintln!(
                "mean accuracy {:.4} over {} folds, overall {:.4} ({} images); report written to {}",
                report.mean_accuracy,
                report.per_fold_accuracy.len(),
                report.overall_accuracy,
                report.evaluated(),
                path.display()
            );
            Ok(0)
        }
        Command::Folds { manifest } => {
            cfg.validate()?;
            let path = out.unwrap_or(Path::new("folds.json"));
            let doc = commands::cmd_folds(&manifest, &cfg, path)?;
            eprintln!("wrote {} entries in {} folds to {}", doc.entries.len(), doc.k, path.display());
            Ok(0)
        }
        Command::Fixtures {
            identities,
            per_identity,
            correct_fraction,
        } => {
            let dir = out.unwrap_or(Path::new("fixtures"));
            let options = FixtureOptions {
                correct_fraction,
                ..FixtureOptions::default()
            };
            let set = commands::cmd_fixtures(identities, per_identity, cfg.seed, &options, dir)?;
            eprintln!(
                "wrote {} images for {} identities to {} ({} scripted correct)",
                set.manifest.len(),
                set.manifest.registry().len(),
                dir.display(),
                set.correct_count()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let stage = e
                .downcast_ref::<petident::Error>()
                .and_then(petident::Error::stage);
            match stage {
                Some(stage) => eprintln!("error [{stage}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}
