//! `embedmap` command-line front end. Results go to stdout as JSON, logs to
//! stderr. Exit status: 0 success, 1 I/O failure, 2 invalid input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use embedmap::MapKind;

#[derive(Debug, Parser)]
#[command(name = "embedmap", version, about = "Fit and evaluate maps between face-embedding spaces")]
struct Cli {
    /// Worker threads (defaults to one per core). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,

    /// Increase log detail on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Seed for every derived random choice.
    #[arg(long, env = "EMBEDMAP_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert CSV or CFEB embeddings into a validated CFEB file.
    Ingest {
        /// `.csv` (media_id followed by one column per dimension) or `.cfeb`.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model id to record; required for CSV input.
        #[arg(long)]
        model_id: Option<String>,
        /// Every media id must appear in this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// L2-normalize rows, dropping rows too short to normalize.
        #[arg(long)]
        normalize: bool,
    },
    /// Fit a map from the source embedding space to the target space.
    Fit {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        kind: MapKind,
        #[arg(long)]
        out: PathBuf,
        /// Fit only on media assigned to the enrollment split.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Map embeddings into another space and renormalize them.
    Apply {
        input: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score template pairs and report TAR at the requested FARs.
    Verify {
        a: PathBuf,
        /// Embeddings for the second side of each pair; defaults to `a`.
        b: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Map taking `a` into the space of `b`.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3,1e-4,1e-5,1e-6")]
        far: Vec<f64>,
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Cross-model verification grid over every ordered model pair.
    Grid {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// TAR against the number of enrollment pairs used to fit the map.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Re-identify probes of an unknown model against another model's gallery.
    Attack {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate a synthetic two-model world with a planted relation.
    Synth {
        /// JSON world description; omitted fields take their defaults.
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.into()).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::run(cli.command) {
        Ok(output) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
