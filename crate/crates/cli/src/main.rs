//! `ssvt` command line: synthetic data, pretraining, probing, evaluation,
//! gradient checks and embedding export.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric or
//! internal failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssvt_core::artifacts;
use ssvt_core::config::RunConfig;
use ssvt_core::data_io::{self, SynthSpec};
use ssvt_core::distill;
use ssvt_core::gradcheck::GradcheckReport;
use ssvt_core::metrics::EvalReport;
use ssvt_core::probe;
use ssvt_core::suite;
use ssvt_core::Error;

#[derive(Parser)]
#[command(name = "ssvt", version, about = "Self-distilled ViT pretraining and linear probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic fundus-like dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 64)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Self-distillation pretraining; writes the checkpoint and `<out>.loss.csv`.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a linear head on frozen teacher features; writes the head,
    /// `<out>.split.csv` and `<out>.val.csv`.
    Probe {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "0.6,0.2,0.2")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a head on the test partition and write a JSON report.
    Eval {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "split-file")]
        split_file: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of every op and the distillation loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add a deliberately wrong derivative; the run must then fail.
        #[arg(long = "inject-fault")]
        inject_fault: bool,
    },
    /// Per-image teacher features as CSV.
    ExportEmbeddings {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            Error::Numeric(_) | Error::Contract(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn data_dir(data: Option<PathBuf>) -> Result<PathBuf, Failure> {
    data.ok_or_else(|| Failure {
        code: 2,
        message: "--data DIR is required".into(),
    })
}

fn labeled(dir: &Path, num_classes: Option<usize>) -> Result<data_io::Dataset, Failure> {
    let ds = data_io::load_dataset_with(dir, num_classes)?;
    if !ds.is_labeled() {
        return Err(Failure {
            code: 2,
            message: format!("{}: no labels.csv, a labeled dataset is required", dir.display()),
        });
    }
    Ok(ds)
}

fn synth(out: PathBuf, classes: usize, per_class: usize, size: usize, seed: u64) -> CmdResult {
    let spec = SynthSpec {
        classes,
        per_class,
        image_size: size,
        seed,
    };
    data_io::generate_synthetic(&out, &spec)?;
    println!("wrote {} images to {}", classes * per_class, out.display());
    Ok(())
}

fn pretrain(
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    out: PathBuf,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> CmdResult {
    let mut cfg = match &config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.distill.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.sync_seeds();
    cfg.validate()?;
    let ds = data_io::load_dataset(&data_dir(data)?)?;
    let images = ds.images();
    let result = distill::pretrain_with(&images, &cfg.model, &cfg.crop, &cfg.distill, |r| {
        eprintln!(
            "epoch {} loss {:.6} teacher_entropy {:.6}",
            r.epoch, r.mean_loss, r.teacher_entropy
        )
    })?;
    artifacts::save_encoder(&out, &result.state, &cfg)?;
    artifacts::write_loss_csv(&artifacts::sibling(&out, ".loss.csv"), &result.trace)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn probe_cmd(encoder: PathBuf, data: Option<PathBuf>, split: String, seed: Option<u64>, out: PathBuf) -> CmdResult {
    let ratios = artifacts::parse_ratios(&split)?;
    let (mut cfg, teacher) = artifacts::load_teacher(&encoder)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.sync_seeds();
    }
    let ds = labeled(&data_dir(data)?, None)?;
    let labels = ds.labels()?;
    let classes = ds.num_classes.expect("labeled");
    let split = probe::stratified_split(&labels, classes, ratios, cfg.seed)?;
    let features = probe::extract_features(&teacher, &ds.images())?;
    let (head, trace) = probe::train_head(&features, &labels, classes, &split, &cfg.probe)?;
    artifacts::save_head(&out, &head, &cfg, &split)?;
    artifacts::write_split(&artifacts::sibling(&out, ".split.csv"), &split, &ds.filenames(), &labels)?;
    artifacts::write_probe_trace(&artifacts::sibling(&out, ".val.csv"), &trace)?;
    let best = trace.iter().map(|r| r.val_accuracy).fold(0.0, f64::max);
    println!("wrote {} (best validation accuracy {best:.4})", out.display());
    Ok(())
}

fn eval(encoder: PathBuf, head: PathBuf, data: Option<PathBuf>, split_file: PathBuf, report: PathBuf) -> CmdResult {
    let (_, teacher) = artifacts::load_teacher(&encoder)?;
    let head = artifacts::load_head(&head)?;
    let ds = labeled(&data_dir(data)?, Some(head.num_classes()))?;
    let labels = ds.labels()?;
    let split = artifacts::read_split(&split_file, &ds.filenames(), &labels)?;
    if split.test.is_empty() {
        return Err(Failure {
            code: 2,
            message: "the test partition is empty".into(),
        });
    }
    let test_images: Vec<_> = split.test.iter().map(|&i| ds.entries[i].image.clone()).collect();
    let test_labels: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let features = probe::extract_features(&teacher, &test_images)?;
    let (probs, pred) = probe::predict(&head, &features)?;
    let r = EvalReport::compute(&probs, &pred, &test_labels, "test")?;
    std::fs::write(&report, r.to_json()).map_err(Error::from)?;
    println!("accuracy {:.4} auc_mean {:.4}", r.accuracy, r.auc_mean);
    Ok(())
}

fn print_report(r: &GradcheckReport) {
    let status = if r.passed { "ok" } else { "FAIL" };
    match &r.failure {
        Some(why) => println!("{status:4} {:<24} error: {why}", r.name),
        None => println!(
            "{status:4} {:<24} max_rel_error {:.3e} (tol {:.0e}, {} elements)",
            r.name, r.max_error, r.tol, r.checked
        ),
    }
}

fn gradcheck(seed: u64, inject_fault: bool) -> CmdResult {
    let mut reports = suite::op_checks(seed);
    reports.push(suite::model_logit_check(1e-4));
    reports.push(suite::distill_loss_check(1e-4));
    reports.push(suite::tiny_distill_loss_check(1e-4));
    if inject_fault {
        reports.push(suite::faulty_gelu_check(seed));
    }
    reports.iter().for_each(print_report);
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("{failed} of {} gradient checks failed", reports.len()),
        });
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn export_embeddings(encoder: PathBuf, data: Option<PathBuf>, out: PathBuf) -> CmdResult {
    let (_, teacher) = artifacts::load_teacher(&encoder)?;
    let ds = data_io::load_dataset(&data_dir(data)?)?;
    let features = probe::extract_features(&teacher, &ds.images())?;
    let labels = if ds.is_labeled() { Some(ds.labels()?) } else { None };
    artifacts::write_embeddings(&out, &ds.filenames(), labels.as_deref(), &features)?;
    println!("wrote {} rows to {}", ds.len(), out.display());
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let threads = match std::env::var("SSVT_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| Failure {
            code: 1,
            message: format!("SSVT_THREADS must be a positive integer, got {v:?}"),
        })?,
        Err(_) => 1,
    };
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure {
            code: 3,
            message: format!("thread pool: {e}"),
        })?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    init_threads()?;
    match cli.command {
        Command::Synth {
            out,
            classes,
            per_class,
            size,
            seed,
        } => synth(out, classes, per_class, size, seed),
        Command::Pretrain {
            config,
            data,
            out,
            epochs,
            seed,
        } => pretrain(config, data, out, epochs, seed),
        Command::Probe {
            encoder,
            data,
            split,
            seed,
            out,
        } => probe_cmd(encoder, data, split, seed, out),
        Command::Eval {
            encoder,
            head,
            data,
            split_file,
            report,
        } => eval(encoder, head, data, split_file, report),
        Command::Gradcheck { seed, inject_fault } => gradcheck(seed, inject_fault),
        Command::ExportEmbeddings { encoder, data, out } => export_embeddings(encoder, data, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
