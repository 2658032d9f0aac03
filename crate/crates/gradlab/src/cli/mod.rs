//! Command-line entry point wiring the library into reproducible
//! experiments: `train`, `simulate`, `batch-stats`, `filter`, `mix`, and
//! `lr-schedule`.
//!
//! Configuration merges in order: built-in defaults, then the `--config`
//! file, then repeated `--set key=value` overrides, then dedicated flags.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant
//! violation.

mod simulate;
mod stats;
mod tablemix;
mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::batching::{
    self, fit_timing_model, make_shape_batches, make_time_balanced_batches,
    make_token_budget_batches, read_measurements_csv, SubBatch, TimingModel,
};
use crate::config::{BatchingPolicy, RunConfig};
use crate::corpus::{read_corpus, Vocab};
use crate::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gradlab",
    version,
    about = "Desk-scale engine for large-batch distributed-training mechanics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy model with synchronous workers, gradient accumulation,
    /// and optional emulated fp16 with dynamic loss scaling.
    Train(CommonArgs),
    /// Simulate straggler idle time and communication overlap over a grid
    /// of (workers, cumul, overlap) configurations.
    Simulate(CommonArgs),
    /// Estimated sub-batch time histograms and summaries per batching policy.
    BatchStats(CommonArgs),
    /// Filter a corpus by length-ratio, length, and copy rules.
    Filter(CommonArgs),
    /// Sample a mixed corpus from a clean and a noisy corpus.
    Mix(CommonArgs),
    /// Print the learning-rate schedule for steps 1..N as CSV.
    LrSchedule(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Corpus file (tab-separated pairs).
    #[arg(long)]
    corpus: Option<String>,
    /// Vocabulary file (one token per line, line 0 is padding).
    #[arg(long)]
    vocab: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Timing measurements CSV.
    #[arg(long)]
    measurements: Option<String>,
    /// Clean corpus for mixing.
    #[arg(long)]
    clean: Option<String>,
    /// Noisy corpus for mixing.
    #[arg(long)]
    noisy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
}

impl CommonArgs {
    fn build_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(&self.sets)?;
        if let Some(v) = &self.corpus {
            cfg.corpus = v.clone();
        }
        if let Some(v) = &self.vocab {
            cfg.vocab = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.measurements {
            cfg.measurements = v.clone();
        }
        if let Some(v) = &self.clean {
            cfg.clean_corpus = v.clone();
        }
        if let Some(v) = &self.noisy {
            cfg.noisy_corpus = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        Ok(cfg)
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => a.build_config().and_then(train::cmd_train),
        Command::Simulate(a) => a.build_config().and_then(simulate::cmd_simulate),
        Command::BatchStats(a) => a.build_config().and_then(stats::cmd_batch_stats),
        Command::Filter(a) => a.build_config().and_then(tablemix::cmd_filter),
        Command::Mix(a) => a.build_config().and_then(tablemix::cmd_mix),
        Command::LrSchedule(a) => a.build_config().and_then(tablemix::cmd_lr_schedule),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---- shared command helpers ----

fn require(value: &str, what: &str) -> Result<()> {
    if value.is_empty() {
        return Err(Error::Config(format!("{what} is required")));
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    require(&cfg.out, "an output directory (--out or out=)")?;
    let dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_corpus(cfg: &RunConfig) -> Result<(Vec<batching::SentencePair>, Vocab)> {
    require(&cfg.corpus, "a corpus file (--corpus or corpus=)")?;
    require(&cfg.vocab, "a vocabulary file (--vocab or vocab=)")?;
    let vocab = Vocab::read(Path::new(&cfg.vocab))?;
    let corpus = read_corpus(Path::new(&cfg.corpus), &vocab)?;
    if corpus.is_empty() {
        return Err(Error::Data(format!("corpus {} is empty", cfg.corpus)));
    }
    Ok((corpus, vocab))
}

fn load_timing_model(cfg: &RunConfig) -> Result<TimingModel> {
    require(
        &cfg.measurements,
        "a timing measurements CSV (--measurements or measurements=)",
    )?;
    let ms = read_measurements_csv(Path::new(&cfg.measurements))?;
    fit_timing_model(&ms)
}

/// Build sub-batches under the configured policy. Time-balanced batching
/// derives its fixed target from the token-budget distribution at the
/// configured percentile.
fn build_batches(
    corpus: &[batching::SentencePair],
    cfg: &RunConfig,
    timing: Option<&TimingModel>,
) -> Result<Vec<SubBatch>> {
    match cfg.batching_policy {
        BatchingPolicy::TokenBudget => make_token_budget_batches(corpus, cfg.max_tokens),
        BatchingPolicy::Shape => make_shape_batches(corpus, cfg.shape_tolerance, cfg.max_tokens),
        BatchingPolicy::TimeBalanced => {
            let timing = timing.ok_or_else(|| {
                Error::Config("time_balanced batching needs timing measurements".into())
            })?;
            let target = batching::time_balanced_target(
                corpus,
                timing,
                cfg.max_tokens,
                cfg.target_percentile,
            )?;
            Ok(make_time_balanced_batches(corpus, timing, target)?.batches)
        }
    }
}
