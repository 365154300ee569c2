//! `fdd` — train a denoising autoencoder, encode image sets, and
//! measure distribution distances between them.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdd_core::error::Error;

#[derive(Parser)]
#[command(
    name = "fdd",
    version,
    about = "Structural-plausibility metrics for generated image sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the denoising autoencoder on a corpus.
    TrainDae {
        /// Image directory, or a generator spec like
        /// `shapes:count=500,size=64,seed=1`.
        #[arg(long)]
        corpus: String,
        /// TOML config with [model], [noise], and [train] sections.
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Continue training from an existing checkpoint (optimizer
        /// state included).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Replaces every seed in the config deterministically.
        #[arg(long)]
        seed: Option<u64>,
        /// Loss history CSV path (default: `<out>.history.csv`).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Abort on undecodable images instead of skipping them.
        #[arg(long)]
        strict: bool,
    },
    /// Score a generated set against a real set.
    Score {
        /// Metric: fdd (Fréchet), kdd (polynomial-kernel MMD), or tdd
        /// (persistence topology).
        #[arg(long)]
        metric: String,
        /// Encoder checkpoint.
        #[arg(long)]
        encoder: PathBuf,
        /// Directory of real images.
        #[arg(long)]
        real: PathBuf,
        /// Directory of generated images.
        #[arg(long)]
        gen: PathBuf,
        /// Print the full report as JSON instead of the bare score.
        #[arg(long)]
        json: bool,
        /// Write the JSON report to a file as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Size matching when set sizes differ: none, seeded, stride.
        #[arg(long, default_value = "none")]
        match_mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        strict: bool,
    },
    /// Corrupt an image directory with a disturbance.
    Disturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Disturbance spec, e.g. `patch_swap:alpha=0.25,grid=4,seed=7`.
        #[arg(long)]
        spec: String,
        /// Overrides the seed inside the disturbance string.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strict: bool,
    },
    /// Per-group disturbance sensitivity protocol.
    Sensitivity {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        /// Images per group.
        #[arg(long, default_value_t = 30)]
        k: usize,
        /// Semicolon-separated disturbance specs; defaults to the
        /// standard suite at α = 0.01 (noises) and 0.25 (patch ops).
        #[arg(long)]
        disturbances: Option<String>,
        /// Comma-separated metrics (fdd, kdd, tdd).
        #[arg(long, default_value = "fdd")]
        metrics: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving sensitivity.csv + sensitivity_summary.csv.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Score monotonicity along an escalating disturbance ladder.
    Consistency {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Disturbance kind (salt_pepper, gaussian, patch_mask,
        /// patch_swap, mixed).
        #[arg(long)]
        kind: String,
        /// Comma-separated strictly increasing α levels; defaults to
        /// {0.25, 0.5, 0.75, 1.0} × the kind's maximum.
        #[arg(long)]
        ladder: Option<String>,
        /// Patch grid for patch ops.
        #[arg(long, default_value_t = 4)]
        grid: usize,
        /// Images used per level.
        #[arg(long, default_value_t = 30)]
        k: usize,
        #[arg(long, default_value = "fdd")]
        metrics: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Rank ingested model scores against human judgments.
    Rank {
        /// CSV with rows `model,metric,score,human_error`.
        #[arg(long)]
        scores: PathBuf,
        /// Write the full result JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Accepted for interface uniformity; ranking is
        /// deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Attention maps for a batch of images.
    Gradcam {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Encoder layer id (enc_conv1…); defaults to the deepest.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        strict: bool,
    },
    /// Generate a synthetic PNG corpus.
    MakeCorpus {
        /// Generator: shapes, frames, or bikes-stick.
        generator: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> fdd_core::Result<()> {
    match cli.command {
        Command::TrainDae {
            corpus,
            config,
            out,
            resume,
            seed,
            history,
            strict,
        } => commands::train_dae(&corpus, &config, &out, resume.as_deref(), seed, history.as_deref(), strict),
        Command::Score {
            metric,
            encoder,
            real,
            gen,
            json,
            out,
            match_mode,
            seed,
            strict,
        } => commands::score(
            &metric,
            &encoder,
            &real,
            &gen,
            json,
            out.as_deref(),
            &match_mode,
            seed,
            strict,
        ),
        Command::Disturb {
            input,
            out,
            spec,
            seed,
            strict,
        } => commands::disturb(&input, &out, &spec, seed, strict),
        Command::Sensitivity {
            encoder,
            data,
            groups,
            k,
            disturbances,
            metrics,
            seed,
            out_dir,
            strict,
        } => commands::sensitivity(
            &encoder,
            &data,
            groups,
            k,
            disturbances.as_deref(),
            &metrics,
            seed,
            &out_dir,
            strict,
        ),
        Command::Consistency {
            encoder,
            data,
            kind,
            ladder,
            grid,
            k,
            metrics,
            seed,
            out,
            strict,
        } => commands::consistency(
            &encoder,
            &data,
            &kind,
            ladder.as_deref(),
            grid,
            k,
            &metrics,
            seed,
            &out,
            strict,
        ),
        Command::Rank { scores, json, seed } => {
            let _ = seed;
            commands::rank(&scores, json.as_deref())
        }
        Command::Gradcam {
            encoder,
            images,
            layer,
            out_dir,
            seed,
            strict,
        } => {
            let _ = seed;
            commands::gradcam(&encoder, &images, layer.as_deref(), &out_dir, strict)
        }
        Command::MakeCorpus {
            generator,
            count,
            size,
            seed,
            out,
        } => commands::make_corpus(&generator, count, size, seed, &out),
    }
}
