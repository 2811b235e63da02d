mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "semivc", version, about = "Semi-supervised voice conversion toolkit")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// WAV file or directory of WAVs to feature files.
    Extract {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
    /// DTW-align a target utterance onto a source utterance's timeline.
    Align {
        #[arg(long, value_name = "PATH")]
        source: PathBuf,
        #[arg(long, value_name = "PATH")]
        target: PathBuf,
        /// Warped target features.
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Optional text file of `i j` path steps.
        #[arg(long, value_name = "PATH")]
        path_out: Option<PathBuf>,
        /// Speaker statistics for z-scored alignment costs.
        #[arg(long, value_name = "PATH", requires = "target_stats")]
        source_stats: Option<PathBuf>,
        #[arg(long, value_name = "PATH", requires = "source_stats")]
        target_stats: Option<PathBuf>,
    },
    /// Fit per-speaker statistics on the training split.
    Stats {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Directory receiving `source.stats` and `target.stats`.
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
    },
    /// Train the joint-density GMM baseline on the paired training split.
    TrainGmm {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Mixture components; overrides `gmm_components`.
        #[arg(long)]
        components: Option<usize>,
    },
    /// Train a recurrent model.
    TrainSsvc(TrainArgs),
    /// Convert feature files with a trained checkpoint of any kind.
    Convert {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
    },
    /// Mel-cepstral distortion between converted and reference directories.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        converted: PathBuf,
        #[arg(long, value_name = "DIR")]
        reference: PathBuf,
    },
    /// Write the synthetic two-speaker corpus and its manifest.
    GenSynth {
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
    },
    /// Fixed budget, varying share of parallel utterances.
    SweepParallel(SweepArgs),
    /// One parallel utterance, varying number of unpaired utterances.
    SweepNonparallel(SweepArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = commands::MethodArg::Semi)]
    method: commands::MethodArg,
    /// Use only the first N paired training utterances.
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
    /// Per-step training log as CSV.
    #[arg(long, value_name = "PATH")]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_name = "PATH", required_unless_present = "synthetic", conflicts_with = "synthetic")]
    manifest: Option<PathBuf>,
    /// Generate the synthetic corpus in memory instead of reading a manifest.
    #[arg(long)]
    synthetic: bool,
    /// Results CSV.
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
