//! `cbir`: ingestion, indexing, calibration, querying and evaluation.
//!
//! Exit status 0 on success, 1 on error, 2 when a query is rejected as
//! out of distribution. Logs go to stderr, results to stdout.

mod config;
mod diagnostics;
mod evaluate;
mod gallery;
mod ingest;
mod retrieve;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{ConfigArgs, PipelineConfig};
use evaluate::ReportFormat;
use retrieve::{QueryInput, QueryOutcome};

#[derive(Debug, Parser)]
#[command(
    name = "cbir",
    version,
    about = "Hashing-based image retrieval with OOD gating"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a directory of PGM/PPM images (or precomputed embeddings) into a gallery
    Ingest {
        /// Dataset directory
        dataset: PathBuf,
        /// Labels CSV with an `id,label` header [default: <dataset>/labels.csv]
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Structural consistency and pair class of every gallery pair
    Pairs {
        /// Also write the consistency matrix as a tensor file
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Check the analytic loss gradient against finite differences
    Losscheck {
        #[arg(long, default_value_t = 100)]
        batches: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Optimise free embeddings on synthetic classes and report separation
    DemoTrain {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        per_class: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        held_out: usize,
    },
    /// Encode one image with the gallery encoder
    Encode {
        image: PathBuf,
        /// Write <OUT>.hash.acirt and <OUT>.levels.acirt
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build or inspect the index file
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Fit the residual threshold
    Calibrate {
        /// Ingested directory to calibrate on [default: the gallery]
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Rank gallery images for a query image or embedding
    Query {
        #[arg(long, conflicts_with_all = ["hash", "levels"], required_unless_present = "hash")]
        /// Query image (PGM/PPM)
        image: Option<PathBuf>,
        /// Precomputed embedding (with --levels); skips the residual gate
        #[arg(long, requires = "levels")]
        hash: Option<PathBuf>,
        /// Concatenated level features matching --hash
        #[arg(long, requires = "hash")]
        levels: Option<PathBuf>,
        /// Number of hits to print
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// Leave this gallery id out of the ranking
        #[arg(long)]
        exclude: Option<String>,
    },
    /// mAP, maAP, per-radius accuracy/precision/recall and OOD detection rate
    Eval {
        /// Ingested query directory [default: leave-one-out over the gallery]
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Ingested directory of known out-of-distribution images
        #[arg(long)]
        ood: Option<PathBuf>,
        #[arg(long, default_value_t = cbir_core::eval::DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
}

#[derive(Debug, Subcommand)]
enum IndexAction {
    /// Index the gallery
    Build,
    /// Print the index header and class counts
    Info,
}

const EXIT_ERROR: u8 = 1;
const EXIT_OOD: u8 = 2;

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let out = match cli.command {
        Command::Ingest { dataset, labels } => {
            let n = ingest::run(&cfg, &dataset, labels.as_deref(), &cfg.gallery)?;
            format!("records={n}\ngallery={}\n", cfg.gallery.display())
        }
        Command::Pairs { matrix } => diagnostics::pairs(&cfg, matrix.as_deref())?,
        Command::Losscheck { batches, tolerance } => {
            diagnostics::losscheck(&cfg, batches, tolerance)?
        }
        Command::DemoTrain {
            classes,
            per_class,
            steps,
            held_out,
        } => diagnostics::demo_train(
            &cfg,
            &diagnostics::DemoOptions {
                classes,
                per_class,
                steps,
                held_out,
            },
        )?,
        Command::Encode { image, out } => retrieve::encode(&cfg, &image, out.as_deref())?,
        Command::Index {
            action: IndexAction::Build,
        } => retrieve::build_index(&cfg)?,
        Command::Index {
            action: IndexAction::Info,
        } => retrieve::index_info(&cfg)?,
        Command::Calibrate { source } => retrieve::calibrate(&cfg, source.as_deref())?,
        Command::Query {
            image,
            hash,
            levels,
            k,
            exclude,
        } => {
            let input = match (&image, &hash, &levels) {
                (Some(img), _, _) => QueryInput::Image(img),
                (None, Some(hash), Some(levels)) => QueryInput::Embedding { hash, levels },
                _ => anyhow::bail!("give --image or both --hash and --levels"),
            };
            match retrieve::query(&cfg, input, k, exclude.as_deref())? {
                QueryOutcome::Ranked(result) => retrieve::format_hits(&result),
                QueryOutcome::Ood { residual, tau } => {
                    println!("OOD\tresidual={residual}\ttau={tau}");
                    return Ok(ExitCode::from(EXIT_OOD));
                }
            }
        }
        Command::Eval {
            queries,
            ood,
            top_k,
            format,
        } => evaluate::run(&cfg, queries.as_deref(), ood.as_deref(), top_k, format)?,
    };
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
