//! Command-line front end: argument parsing and the command implementations.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use textclf::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use textclf::harness::{
    evaluate_model, make_synthetic, sweep_hidden, sweep_imbalance, ImbalanceSpec, SweepData,
    SweepResult,
};
use textclf::ingest::{encode, prepare_agnews, read_agnews_csv, PreparedData};
use textclf::train::train;
use textclf::{load_checkpoint, save_checkpoint, DatasetSplit, Error, TrainConfig, Vocabulary};

use crate::config::{file_sha256, DataConfig, DataSource, RunConfig};

#[derive(Parser)]
#[command(
    name = "textclf",
    version,
    about = "Train and evaluate self-attention text classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes the checkpoint and a loss-history CSV.
    Train {
        /// Run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss history path; defaults to `<out>.loss.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled CSV; prints the metrics as JSON.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Vocabulary file (one token per line) overriding the checkpoint's.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train one model per hidden size and seed.
    SweepHidden {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated hidden sizes; overrides `sweep.hidden_dims`.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Number of seeds, run as 0..N.
        #[arg(long)]
        seeds: Option<u64>,
        /// Results CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Binary positive-vs-rest runs over training imbalance ratios 1:k.
    SweepImbalance {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated k values for 1:k; overrides `sweep.ratios`.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<usize>>,
        /// Number of seeds, run as 0..N.
        #[arg(long)]
        seeds: Option<u64>,
        /// Results CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Number of random seeds per case.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Print every parameter group, not only failures.
        #[arg(long)]
        verbose: bool,
    },
    /// Train and score the 2-class synthetic keyword benchmark.
    SynthTrain {
        #[arg(long)]
        out: PathBuf,
        /// Optional run config; its train and data.synthetic sections apply.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command.
///
/// Returns the process exit status: 0 on success, 1 on a runtime error or a
/// failed check, 2 on a usage error.
pub fn run_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match run(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// `Ok(false)` means the command ran but its check failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train {
            config,
            out,
            history,
        } => {
            let run = load_run(&config)?;
            let data = load_data(&run)?;
            let outcome = train(&data.train, data.vocab.len(), &run.train)?;
            save_checkpoint(&outcome.params, Some(&data.vocab), &out)?;
            let history = history.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            write_file(&history, &loss_csv(&outcome.loss_history))?;
            info!("wrote {} and {}", out.display(), history.display());
        }
        Command::Evaluate { ckpt, data, vocab } => {
            let report = evaluate(&ckpt, &data, vocab.as_deref())?;
            println!("{}", report);
        }
        Command::SweepHidden {
            config,
            dims,
            seeds,
            out,
        } => {
            let run = load_run(&config)?;
            let data = load_data(&run)?;
            let dims = dims.unwrap_or_else(|| run.sweep.hidden_dims.clone());
            let seeds: Vec<u64> = (0..seeds.unwrap_or(run.sweep.seeds)).collect();
            let result = sweep_hidden(&dims, &run.train, sweep_data(&run, &data), &seeds)?;
            finish_sweep(&result, &out)?;
        }
        Command::SweepImbalance {
            config,
            ratios,
            seeds,
            out,
        } => {
            let run = load_run(&config)?;
            let data = load_data(&run)?;
            let spec = ImbalanceSpec {
                positive_class: run.sweep.positive_class,
                ratios: ratios.unwrap_or_else(|| run.sweep.ratios.clone()),
            };
            let seeds: Vec<u64> = (0..seeds.unwrap_or(run.sweep.seeds)).collect();
            let result = sweep_imbalance(&spec, &run.train, sweep_data(&run, &data), &seeds)?;
            finish_sweep(&result, &out)?;
        }
        Command::Gradcheck { seeds, verbose } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let report = run_suite(&seeds)?;
            let failed = report.failures().count();
            for g in &report.groups {
                if verbose || !g.passed() {
                    println!(
                        "{} {} {} ({} entries): max rel error {:.3e} at entry {} (analytic {:.6e}, fd {:.6e})",
                        if g.passed() { "PASS" } else { "FAIL" },
                        g.case,
                        g.group,
                        g.entries,
                        g.max_rel_error,
                        g.worst_entry,
                        g.analytic,
                        g.numeric,
                    );
                }
            }
            println!(
                "{} of {} parameter groups within {:e}",
                report.groups.len() - failed,
                report.groups.len(),
                GRADCHECK_TOLERANCE
            );
            if failed > 0 {
                return Ok(false);
            }
        }
        Command::SynthTrain { out, config } => {
            let run = match config {
                Some(path) => load_run(&path)?,
                None => synth_defaults(),
            };
            let s = &run.data.synthetic;
            let (train_split, vocab) = make_synthetic(s.classes, s.train_per_class, s.seed);
            let (test_split, _) =
                make_synthetic(s.classes, s.test_per_class, s.seed.wrapping_add(1));
            let outcome = train(&train_split, vocab.len(), &run.train)?;
            save_checkpoint(&outcome.params, Some(&vocab), &out)?;
            write_file(
                &with_suffix(&out, ".loss.csv"),
                &loss_csv(&outcome.loss_history),
            )?;
            let train_report = evaluate_model(&outcome.params, &train_split)?;
            let test_report = evaluate_model(&outcome.params, &test_split)?;
            let summary = serde_json::json!({
                "epochs": run.train.epochs,
                "final_loss": outcome.loss_history.last(),
                "train_accuracy": train_report.accuracy,
                "test_accuracy": test_report.accuracy,
                "test": test_report,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(true)
}

/// Configuration of the synthetic benchmark when no config file is given.
fn synth_defaults() -> RunConfig {
    let data = DataConfig {
        source: DataSource::Synthetic,
        ..DataConfig::default()
    };
    RunConfig {
        train: TrainConfig {
            d_model: 16,
            epochs: 200,
            ..TrainConfig::default()
        },
        data,
        ..RunConfig::default()
    }
}

fn load_run(path: &Path) -> Result<RunConfig> {
    let run = RunConfig::load(path)?;
    info!(
        "config {} sha256 {} seed {}",
        path.display(),
        run.hash(),
        run.train.seed
    );
    Ok(run)
}

fn load_data(run: &RunConfig) -> Result<PreparedData> {
    match run.data.source {
        DataSource::Synthetic => {
            let s = &run.data.synthetic;
            let (train, vocab) = make_synthetic(s.classes, s.train_per_class, s.seed);
            let (test, _) = make_synthetic(s.classes, s.test_per_class, s.seed.wrapping_add(1));
            info!("synthetic data: {} classes, seed {}", s.classes, s.seed);
            Ok(PreparedData { train, test, vocab })
        }
        DataSource::Agnews => {
            let d = &run.data;
            for p in [&d.train_csv, &d.test_csv] {
                info!("input {} sha256 {}", p.display(), file_sha256(p)?);
            }
            let data = prepare_agnews(
                &d.train_csv,
                &d.test_csv,
                d.train_size,
                d.test_size,
                d.subset_seed,
                &run.vocab,
            )?;
            info!(
                "{} train / {} test examples, vocabulary {}",
                data.train.len(),
                data.test.len(),
                data.vocab.len()
            );
            Ok(data)
        }
    }
}

fn sweep_data<'a>(run: &RunConfig, data: &'a PreparedData) -> SweepData<'a> {
    SweepData {
        train: &data.train,
        test: &data.test,
        vocab_size: data.vocab.len(),
        workers: run.sweep.workers,
    }
}

fn finish_sweep(result: &SweepResult, out: &Path) -> Result<()> {
    write_file(out, &result.to_csv())?;
    let failed = result.failures().count();
    if failed > 0 {
        log::warn!("{failed} sweep cells failed and are written as NaN");
    }
    info!("wrote {} rows to {}", result.rows.len(), out.display());
    Ok(())
}

fn evaluate(ckpt: &Path, data: &Path, vocab_path: Option<&Path>) -> Result<String> {
    info!(
        "checkpoint {} sha256 {}",
        ckpt.display(),
        file_sha256(ckpt)?
    );
    info!("input {} sha256 {}", data.display(), file_sha256(data)?);
    let checkpoint = load_checkpoint(ckpt)?;
    let params = checkpoint.params;
    let vocab = match vocab_path {
        Some(p) => {
            info!("vocabulary {} sha256 {}", p.display(), file_sha256(p)?);
            read_vocab(p)?
        }
        None => match checkpoint.vocab {
            Some(v) => v,
            None => bail!("checkpoint stores no vocabulary; pass --vocab"),
        },
    };
    if vocab.len() != params.dims.vocab_size {
        return Err(Error::Dimension(format!(
            "vocabulary has {} tokens, checkpoint embeds {}",
            vocab.len(),
            params.dims.vocab_size
        ))
        .into());
    }
    let categories = params.classifier.category_names.clone();
    let raw = read_agnews_csv(data)?;
    if let Some(bad) = raw.iter().find(|r| r.label >= categories.len()) {
        return Err(Error::Dimension(format!(
            "label {} but the checkpoint has {} classes",
            bad.label + 1,
            categories.len()
        ))
        .into());
    }
    let examples = raw
        .iter()
        .map(|r| encode(r, &vocab, params.dims.max_len))
        .collect();
    let split = DatasetSplit::from_encoded(examples, categories);
    let report = evaluate_model(&params, &split)?;
    Ok(report.to_json())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocabulary::from_tokens(
        text.lines().map(str::to_string).collect(),
    )?)
}

fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, l).expect("writing to a String");
    }
    out
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
