//! Command-line parsing. Flags override config-file values, which override
//! defaults.

use std::fs;
use std::path::PathBuf;

use attnhar_core::gradcheck::{self, GradcheckReport};
use clap::{Args, Parser, Subcommand};

use crate::config::{Compat, DatasetKind, Norm, RunConfig, Variant};
use crate::error::{io_err, json_err, Error, Result};
use crate::locate::locate_run;
use crate::run::{eval_run, synth_run, train_run, Overrides};

#[derive(Debug, Parser)]
#[command(name = "attnhar", version, about = "Attention CNNs for weakly labeled activity recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic weakly labeled dataset.
    Synth(CommonArgs),
    /// Train a model and write checkpoints, history and metrics.
    Train(CommonArgs),
    /// Evaluate a checkpoint: accuracy, confusion matrix, throughput.
    Eval(CommonArgs),
    /// Emit compatibility curves and localized activity windows.
    Locate(CommonArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// UCI HAR root, or a synthetic dataset directory or file stem.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long, value_enum)]
    pub compat: Option<Compat>,
    #[arg(long, value_enum)]
    pub norm: Option<Norm>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Generator seed for `synth`, training seed otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Density window width in feature positions.
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to load; defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Keep only the first N windows of every split.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Split used by eval and locate: train, val or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated sequence indices for locate.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Option<Vec<usize>>,
    /// Write curve files for at most this many sequences.
    #[arg(long)]
    pub emit: Option<usize>,
    /// Number of synthetic windows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic window length in samples.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Seeds per gradcheck case.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Also write the gradcheck report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Corrupt the analytic gradient of one gradcheck case.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl CommonArgs {
    /// Layers flags over the config file over defaults.
    pub fn resolve(&self, synth: bool) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut c.dataset, &self.dataset);
        if self.data_dir.is_some() {
            c.data_dir = self.data_dir.clone();
        }
        set(&mut c.variant, &self.variant);
        set(&mut c.compat, &self.compat);
        set(&mut c.norm, &self.norm);
        set(&mut c.train.epochs, &self.epochs);
        set(&mut c.train.batch_size, &self.batch);
        set(&mut c.train.learning_rate, &self.lr);
        if synth {
            set(&mut c.synth_seed, &self.seed);
        } else {
            set(&mut c.train.seed, &self.seed);
        }
        set(&mut c.w, &self.w);
        set(&mut c.out, &self.out);
        if self.checkpoint.is_some() {
            c.checkpoint = self.checkpoint.clone();
        }
        if self.subset.is_some() {
            c.subset = self.subset;
        }
        set(&mut c.eval_split, &self.split);
        if self.sequences.is_some() {
            c.locate.sequences = self.sequences.clone();
        }
        set(&mut c.locate.emit, &self.emit);
        set(&mut c.synth.n, &self.n);
        set(&mut c.synth.seq_len, &self.seq_len);
        set(&mut c.gradcheck.seeds, &self.seeds);
        if self.inject_fault.is_some() {
            c.gradcheck.inject_fault = self.inject_fault.clone();
        }
        c.validate()?;
        Ok(c)
    }

    /// Dataset or model choices given on the command line win over those
    /// stored in a checkpoint.
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset.is_some() || self.data_dir.is_some(),
            model: self.variant.is_some() || self.compat.is_some() || self.norm.is_some(),
        }
    }
}

/// Exit status of a finished command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CheckFailed,
}

pub fn print_gradcheck(report: &GradcheckReport) {
    println!("{:<24} {:>12} {:>8} {:>8}  status", "case", "max_rel_err", "checked", "skipped");
    for case in &report.cases {
        println!(
            "{:<24} {:>12.3e} {:>8} {:>8}  {}",
            case.name,
            case.max_rel_err,
            case.checked,
            case.skipped,
            if case.passed { "ok" } else { "FAIL" }
        );
        if let Some(reason) = &case.failure {
            println!("    {reason}");
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth(args) => {
            let config = args.resolve(true)?;
            let summary = synth_run(&config)?;
            println!("wrote {} windows, class counts {:?}", summary.n, summary.class_counts);
            for f in &summary.files {
                println!("  {f}");
            }
        }
        Command::Train(args) => {
            let config = args.resolve(false)?;
            let report = train_run(&config, args.quiet)?;
            println!(
                "{} ({} params): test accuracy {:.4} at epoch {}, final {:.4}",
                report.architecture,
                report.parameters,
                report.test_accuracy,
                report.selected_epoch,
                report.final_test_accuracy
            );
        }
        Command::Eval(args) => {
            let config = args.resolve(false)?;
            let report = eval_run(&config, args.overrides())?;
            println!(
                "{} accuracy {:.4} over {} sequences, {:.1} sequences/s",
                report.split, report.metrics.accuracy, report.metrics.count, report.throughput_seqs_per_s
            );
        }
        Command::Locate(args) => {
            let config = args.resolve(false)?;
            let report = locate_run(&config, args.overrides())?;
            match report.hit_rate {
                Some(h) => println!(
                    "{} windows over {} sequences, hit_rate {:.4}, mean_best_iou {:.4}",
                    report.windows,
                    report.sequences,
                    h,
                    report.mean_best_iou.unwrap_or(0.0)
                ),
                None => println!("{} windows over {} sequences", report.windows, report.sequences),
            }
        }
        Command::Gradcheck(args) => {
            let config = args.resolve(false)?;
            let report = gradcheck::run_suite(&config.gradcheck);
            print_gradcheck(&report);
            if let Some(path) = &args.report {
                let text = serde_json::to_string_pretty(&report).map_err(json_err(path))?;
                fs::write(path, text).map_err(io_err(path))?;
            }
            if !report.passed() {
                println!("failing: {}", report.failing().join(", "));
                return Ok(Outcome::CheckFailed);
            }
            println!("all {} cases within {:e}", report.cases.len(), report.tolerance);
        }
    }
    Ok(Outcome::Success)
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::CheckFailed) => 1,
        Err(_) => 2,
    }
}

impl Error {
    /// Process exit code for an error: always a usage or configuration failure.
    pub fn exit_code(&self) -> i32 {
        2
    }
}
