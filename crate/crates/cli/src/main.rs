use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualtrack_cli::{run, UsageError};

/// Dual-memory template tracker: track sequences, generate synthetic
/// benchmarks, evaluate results, and train at desk scale.
#[derive(Parser)]
#[command(name = "dualtrack", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Track a sequence directory and write a results CSV.
    Track(TrackArgs),
    /// Render a scenario file into a sequence directory.
    Synth(SynthArgs),
    /// Score a results CSV against ground truth.
    Eval(EvalArgs),
    /// Train weights on synthetic snippets.
    Train(TrainArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct TrackArgs {
    /// Sequence directory (numbered .png frames + groundtruth.txt).
    #[arg(long)]
    seq: PathBuf,
    /// Initial box `x,y,w,h` (left-top + size). Defaults to the first
    /// ground-truth line.
    #[arg(long)]
    init: Option<String>,
    /// Output results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Model preset (`paper` or `toy`) when no weights file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Weight checkpoint produced by `train`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write per-frame response maps (PGM) here.
    #[arg(long)]
    dump_heatmaps: Option<PathBuf>,
    /// Write per-frame attention maps (PGM) here.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    /// Write per-frame memory snapshots here.
    #[arg(long)]
    dump_memory: Option<PathBuf>,
    /// Seed for weight initialization when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ablation switch: `no-bg-memory` or `no-attention`.
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario spec file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output sequence directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Results CSV from `track`.
    #[arg(long)]
    results: PathBuf,
    /// Ground-truth file (`x,y,w,h[,occ]` per line).
    #[arg(long)]
    truth: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Train configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output weight checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Write the per-iteration loss trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Track(a) => run::cmd_track(&run::TrackOpts {
            seq: a.seq,
            init: a.init,
            out: a.out,
            preset: a.preset,
            weights: a.weights,
            seed: a.seed,
            ablate: a.ablate,
            dump_heatmaps: a.dump_heatmaps,
            dump_attention: a.dump_attention,
            dump_memory: a.dump_memory,
        }),
        Cmd::Synth(a) => run::cmd_synth(&a.scenario, &a.out, a.seed),
        Cmd::Eval(a) => run::cmd_eval(&a.results, &a.truth, a.report.as_deref()),
        Cmd::Train(a) => run::cmd_train(&a.config, &a.out, a.trace.as_deref()),
        Cmd::Selftest => run::cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
