//! Command-line front end. The `ki67` binary parses [`Cli`] and calls [`run`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::augment::{execute_plan, generate_plan, ExecuteOptions, PngDirStore};
use crate::config::Settings;
use crate::dataset::{
    ingest_directory, split_dataset, validate_manifest, AnnotationFormat, DatasetManifest, Severity, Split,
    SplitSpec,
};
use crate::detection::Detection;
use crate::eval::{compare_runs, evaluate_run, pr_curve_csv, EvaluationReport};
use crate::predictions::{parse_predictions, postprocess, PredictionSet};
use crate::raster::RasterImage;
use crate::reporting::{case_score_json, emit_case_report, render_overlay};
use crate::review::{http, LogBackend, ReviewService};
use crate::scoring::{score_manifest_case, Aggregation};

#[derive(Debug, Parser)]
#[command(name = "ki67", version, about = "Ki-67 IHC cell detection evaluation and scoring")]
pub struct Cli {
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the effective settings to stdout before running.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest from image and annotation directories.
    Ingest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "rect-json")]
        format: AnnotationFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a manifest; exits 1 when any error is found.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Assign train/val/test splits.
    Split(SplitArgs),
    /// Generate augmented copies until the dataset reaches a target size.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Output manifest (default: OUT_DIR/manifest.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate a prediction run against manifest truths.
    Evaluate {
        #[command(flatten)]
        input: RunInput,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one PR-curve CSV per class here.
        #[arg(long)]
        curves_dir: Option<PathBuf>,
    },
    /// Rank evaluation reports.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Write the ranking as JSON as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score cases and write `{case}.json` plus `{case}.txt` reports.
    Score {
        #[command(flatten)]
        input: RunInput,
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        case: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        mode: Option<Aggregation>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw detections onto one image.
    Render {
        #[command(flatten)]
        input: RunInput,
        #[arg(long)]
        image: String,
        #[arg(long)]
        show_confidence: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the review HTTP service.
    Serve {
        #[command(flatten)]
        input: RunInput,
        #[arg(long)]
        log_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory with the review UI bundle, served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write the synthetic fixture dataset.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train: f64,
    #[arg(long, default_value_t = 0.1)]
    val: f64,
    #[arg(long, default_value_t = 0.1)]
    test: f64,
    /// Exact split sizes TRAIN,VAL,TEST; overrides the fractions.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every case inside one split.
    #[arg(long, conflicts_with = "pool_records")]
    by_case: bool,
    /// Treat every record as its own unit, ignoring augmentation lineage.
    /// Augmented copies may then land in a different split than their source.
    #[arg(long)]
    pool_records: bool,
    #[arg(long)]
    overwrite: bool,
    /// Output manifest (default: overwrite the input).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Manifest plus prediction run, shared by several subcommands.
#[derive(Debug, Args)]
pub struct RunInput {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Run label (default: predictions file stem).
    #[arg(long)]
    label: Option<String>,
    /// Predictions already went through NMS.
    #[arg(long)]
    post_nms: bool,
    #[arg(long)]
    min_conf: Option<f64>,
    #[arg(long)]
    nms: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Input data failed a check (exit code 1).
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(1)
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(path).map_err(invalid)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn load_predictions(input: &RunInput) -> Result<PredictionSet, CliError> {
    let file = File::open(&input.predictions).map_err(|e| fail(format!("{}: {e}", input.predictions.display())))?;
    let label = input.label.clone().unwrap_or_else(|| {
        input
            .predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let parsed = parse_predictions(BufReader::new(file), &label, input.post_nms).map_err(invalid)?;
    for e in &parsed.errors {
        log::warn!("{} line {}: {}", input.predictions.display(), e.line, e.error);
    }
    Ok(parsed.set)
}

/// Folds flag overrides into the file settings.
fn apply_overrides(settings: &mut Settings, input: Option<&RunInput>) -> Result<(), CliError> {
    if let Some(i) = input {
        if i.min_conf.is_some() {
            settings.min_conf = i.min_conf;
        }
        if let Some(n) = i.nms {
            settings.nms_threshold = n;
        }
    }
    settings.validate().map_err(invalid)
}

fn postprocessed(input: &RunInput, settings: &Settings) -> Result<(PredictionSet, BTreeMap<String, Vec<Detection>>), CliError> {
    let set = load_predictions(input)?;
    let dets = postprocess(&set, settings.min_conf.unwrap_or(0.0), settings.nms_threshold);
    Ok((set, dets))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::load_or_default(cli.config.as_deref()).map_err(invalid)?;
    match &cli.command {
        Command::Evaluate { input, iou, .. } => {
            apply_overrides(&mut settings, Some(input))?;
            if let Some(t) = iou {
                settings.iou_threshold = *t;
            }
        }
        Command::Score { input, mode, .. } => {
            apply_overrides(&mut settings, Some(input))?;
            if let Some(m) = mode {
                settings.aggregation = *m;
            }
        }
        Command::Render { input, show_confidence, .. } => {
            apply_overrides(&mut settings, Some(input))?;
            settings.overlay.show_confidence |= show_confidence;
        }
        Command::Serve { input, .. } => apply_overrides(&mut settings, Some(input))?,
        Command::Split(SplitArgs { seed: Some(s), .. })
        | Command::Augment { seed: Some(s), .. }
        | Command::Fixture { seed: Some(s), .. } => settings.seed = *s,
        _ => {}
    }
    settings.validate().map_err(invalid)?;
    if cli.print_config {
        print!("{}", settings.to_toml());
    }

    match cli.command {
        Command::Ingest { images, annotations, format, out } => {
            let output = ingest_directory(&images, &annotations, format, &settings.labels).map_err(invalid)?;
            for w in &output.warnings {
                log::warn!("{w}");
            }
            output.manifest.save(&out).map_err(fail)?;
            log::info!("{} images written to {}", output.manifest.records.len(), out.display());
        }
        Command::Validate { manifest } => {
            let m = load_manifest(&manifest)?;
            let findings = validate_manifest(&m);
            for f in &findings {
                eprintln!("{f}");
            }
            let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
            if errors > 0 {
                return Err(invalid(format!("{errors} validation error(s)")));
            }
            eprintln!("{}: {} records, {} warning(s)", manifest.display(), m.records.len(), findings.len());
        }
        Command::Split(a) => {
            let m = load_manifest(&a.manifest)?;
            let mut spec = match a.counts.as_deref() {
                Some(&[train, val, test]) => SplitSpec::counts(train, val, test, settings.seed),
                Some(other) => return Err(invalid(format!("--counts takes three values, got {}", other.len()))),
                None => SplitSpec::fractions(a.train, a.val, a.test, settings.seed),
            };
            spec.group_by_case = a.by_case;
            spec.ignore_lineage = a.pool_records;
            let out_m = split_dataset(&m, &spec, a.overwrite).map_err(invalid)?;
            for f in validate_manifest(&out_m).iter().filter(|f| f.severity == Severity::Error) {
                log::warn!("{f}");
            }
            let sizes = out_m.split_sizes();
            let out = a.out.unwrap_or(a.manifest);
            out_m.save(&out).map_err(fail)?;
            eprintln!(
                "split written to {}: train {} val {} test {}",
                out.display(),
                sizes.get(&Split::Train).unwrap_or(&0),
                sizes.get(&Split::Val).unwrap_or(&0),
                sizes.get(&Split::Test).unwrap_or(&0)
            );
        }
        Command::Augment { manifest, target, out_dir, out, overwrite, .. } => {
            let m = load_manifest(&manifest)?;
            let plan = generate_plan(&m, settings.seed, target).map_err(invalid)?;
            let images_dir = out_dir.join("images");
            fs::create_dir_all(&images_dir).map_err(|e| fail(format!("{}: {e}", images_dir.display())))?;
            let store = PngDirStore { out_dir: images_dir };
            let opts = ExecuteOptions { overwrite, config: settings.augment() };
            let outcome = execute_plan(&m, &plan, &store, &opts).map_err(invalid)?;
            write_file(&out_dir.join("plan.json"), to_json(&plan))?;
            let out = out.unwrap_or_else(|| out_dir.join("manifest.json"));
            outcome.manifest.save(&out).map_err(fail)?;
            for f in &outcome.failures {
                log::warn!("{}: {}", f.new_id, f.error);
            }
            eprintln!("{} records written to {}", outcome.manifest.records.len(), out.display());
            if !outcome.failures.is_empty() {
                return Err(invalid(format!("{} augmentation(s) failed", outcome.failures.len())));
            }
        }
        Command::Evaluate { input, split, out, curves_dir, .. } => {
            let m = load_manifest(&input.manifest)?;
            let (set, dets) = postprocessed(&input, &settings)?;
            let report = evaluate_run(&set.run_label, &dets, &m, split, settings.iou_threshold).map_err(invalid)?;
            write_file(&out, to_json(&report))?;
            if let Some(dir) = curves_dir {
                for c in report.classes.iter().filter(|c| c.ap50.is_some()) {
                    write_file(&dir.join(format!("{}_{}.csv", report.run_label, c.class_name)), pr_curve_csv(&c.curve))?;
                }
            }
            eprintln!("{}: mAP50 {:.4}", report.run_label, report.map50);
        }
        Command::Compare { reports, out } => {
            let parsed = reports
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
                    serde_json::from_str::<EvaluationReport>(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare_runs(&parsed);
            print!("{}", table.render_text());
            if let Some(out) = out {
                write_file(&out, to_json(&table))?;
            }
        }
        Command::Score { input, case, out, .. } => {
            let config = settings.scoring().map_err(invalid)?;
            let m = load_manifest(&input.manifest)?;
            let (_, dets) = postprocessed(&input, &settings)?;
            let cases = match case {
                Some(c) => vec![c],
                None => m.case_ids(),
            };
            for case_id in cases {
                if m.case_records(&case_id).is_empty() {
                    return Err(invalid(format!("unknown case '{case_id}'")));
                }
                let score = score_manifest_case(&m, &case_id, &dets, &config).map_err(|e| invalid(format!("{case_id}: {e}")))?;
                for id in &score.excluded_images {
                    log::warn!("{case_id}: {id} has no detections and is excluded");
                }
                write_file(&out.join(format!("{case_id}.json")), case_score_json(&score))?;
                write_file(&out.join(format!("{case_id}.txt")), emit_case_report(&score, None).text)?;
                eprintln!("{case_id}: {:.2}% {} ({} cells)", score.index_percent, score.band, score.total_cells);
            }
        }
        Command::Render { input, image, out, .. } => {
            let m = load_manifest(&input.manifest)?;
            let record = m.record(&image).ok_or_else(|| invalid(format!("unknown image '{image}'")))?;
            let (_, dets) = postprocessed(&input, &settings)?;
            let img = RasterImage::load_png(&record.source_path).map_err(fail)?;
            let drawn = render_overlay(&img, dets.get(&image).map(Vec::as_slice).unwrap_or(&[]), &settings.overlay);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
            }
            drawn.save_png(&out).map_err(fail)?;
        }
        Command::Serve { input, log_dir, port, host, static_dir } => {
            let config = settings.scoring().map_err(invalid)?;
            let m = load_manifest(&input.manifest)?;
            let set = load_predictions(&input)?;
            let service = ReviewService::open(&m, &set, config, LogBackend::Dir(log_dir)).map_err(invalid)?;
            let rt = tokio::runtime::Runtime::new().map_err(fail)?;
            rt.block_on(http::serve(Arc::new(service), SocketAddr::new(host, port), static_dir))
                .map_err(fail)?;
        }
        Command::Fixture { out, .. } => {
            let summary = crate::fixture::generate_fixture(&out, settings.seed).map_err(fail)?;
            eprintln!(
                "fixture written to {}: {} images, {} positive and {} negative cells",
                summary.root.display(),
                summary.images,
                summary.positive_truths,
                summary.negative_truths
            );
        }
    }
    Ok(())
}
