use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gph::experiment::{self, ExperimentConfig, ExperimentKind, CSV_SCHEMAS};

#[derive(Parser)]
#[command(
    name = "gph",
    version,
    about = "Run GP-hierarchy experiments and write CSV results",
    after_help = format!(
        "Exit codes: 0 ok, 2 config parse error, 3 config validation error, 4 numerical failure.\n\
         GPH_MEM_CAP overrides the dense-tensor entry cap.\n\nOutput files:\n{CSV_SCHEMAS}"
    )
)]
struct Cli {
    #[command(subcommand)]
    experiment: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Split-step NLS evolution of each mixture component.
    Nls(RunArgs),
    /// Higher-order energies along the mixture flow.
    Conserve(RunArgs),
    /// Truncated hierarchy against the exact mixture evolution.
    Hierarchy(RunArgs),
    /// Sampled diagonal-restriction Sobolev ratios and constant fit.
    Sobolev(RunArgs),
    /// Sampled Gagliardo-Nirenberg ratios.
    Gn(RunArgs),
    /// Density-matrix form of the inequality on the mixture.
    Dmgn(RunArgs),
    /// A priori bound chain along the mixture flow.
    Chain(RunArgs),
    /// Term-by-term cancellation residuals on random inputs.
    Cancel(RunArgs),
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Nls(a) => (ExperimentKind::Nls, a),
            Command::Conserve(a) => (ExperimentKind::Conserve, a),
            Command::Hierarchy(a) => (ExperimentKind::Hierarchy, a),
            Command::Sobolev(a) => (ExperimentKind::Sobolev, a),
            Command::Gn(a) => (ExperimentKind::Gn, a),
            Command::Dmgn(a) => (ExperimentKind::Dmgn, a),
            Command::Chain(a) => (ExperimentKind::Chain, a),
            Command::Cancel(a) => (ExperimentKind::Cancel, a),
        }
    }
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().experiment.split();
    let result = experiment::parse_config(&args.config).and_then(|mut cfg: ExperimentConfig| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        cfg.experiment = Some(kind);
        experiment::run(&cfg, kind, &args.out)
    });
    match result {
        Ok(manifest) => {
            for f in &manifest.files {
                println!("{}  {}", f.sha256, args.out.join(&f.name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gph {}: {e}", kind.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
