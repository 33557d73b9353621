//! Command-line orchestration: dataset generation and preparation,
//! hooking, relay scenarios, heart-rate estimation, normalization,
//! training, and the end-to-end evaluation chain. Every subcommand writes
//! a manifest beside its artifacts and derives all randomness from one
//! seed.

pub mod cfgfile;
pub mod e2e;
pub mod manifest;
pub mod ops;
pub mod training;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "prearrival", version, about = "Pre-arrival EMS analytics pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Master seed; every stage derives its own stream from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic incident records and a waveform library.
    Datagen {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        records: Option<usize>,
        /// Symptom-to-label coupling in [0, 1].
        #[arg(long)]
        coupling: Option<f64>,
        /// Factor the protocol label as AxB (text x vitals classes).
        #[arg(long, value_name = "AxB")]
        split_labels: Option<String>,
        /// Fraction of records with missing fields.
        #[arg(long)]
        incomplete: Option<f64>,
        /// Waveform noise level in dB (omit for clean).
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Filter incomplete records, split, and derive pre-arrival stages.
    Prep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        r#in: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split ratios, e.g. 3:1:1.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Pair each library series with its nearest pool series.
    Hook {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Argmin direction: library (default) or pool.
        #[arg(long)]
        direction: Option<String>,
    },
    /// Run a relay scenario script (or generate one) and write the trace.
    RelaySim {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario script file; omit to generate one.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        packets: Option<usize>,
        #[arg(long)]
        publishers: Option<usize>,
        #[arg(long)]
        subscribers: Option<usize>,
        /// Fraction of packets reordered in flight.
        #[arg(long)]
        reorder: Option<f64>,
    },
    /// Estimate a heart-rate series from a waveform file.
    Rppg {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        r#in: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sample rate for text files without a time column.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Extract and normalize symptoms from transcripts.
    Normalize {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        r#in: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// lexicon (default) or external:<command>.
        #[arg(long)]
        normalizer: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Custom lexicon file (one canonical term per line).
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train a model on prepared data.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory produced by `prep`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// multi (default) or single:<protocol|med_type|quantity|procedure>.
        #[arg(long)]
        mode: Option<String>,
        /// fused (default), text, or vitals.
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on the prepared test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full chain: datagen, prep, hook, estimation, conversations,
    /// normalization, training, and the grid evaluation report.
    E2e {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

/// Dispatches a parsed command; errors map to exit code 1 in `main`.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen { common, out, records, coupling, split_labels, incomplete, snr } => {
            ops::run_datagen(&common, &out, records, coupling, split_labels, incomplete, snr)
        }
        Command::Prep { common, r#in, out, ratios } => ops::run_prep(&common, &r#in, &out, ratios),
        Command::Hook { common, library, pool, out, direction } => {
            ops::run_hook(&common, &library, &pool, &out, direction)
        }
        Command::RelaySim { common, script, out, packets, publishers, subscribers, reorder } => {
            ops::run_relay_sim(&common, script, &out, packets, publishers, subscribers, reorder)
        }
        Command::Rppg { common, r#in, out, rate } => ops::run_rppg(&common, &r#in, &out, rate),
        Command::Normalize { common, r#in, out, normalizer, threshold, lexicon } => {
            ops::run_normalize(&common, &r#in, &out, normalizer, threshold, lexicon)
        }
        Command::Train { common, data, out, mode, modality, steps, lr } => {
            training::run_train(&common, &data, &out, mode, modality, steps, lr)
        }
        Command::Eval { common, model, data, out } => {
            training::run_eval(&common, &model, &data, &out)
        }
        Command::E2e { common, out, records, steps } => {
            e2e::run_e2e_command(&common, &out, records, steps)
        }
    }
}
