use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use euler_align::harness::{execute, output_root, ExperimentConfig, ExperimentKind, Status};

#[derive(Parser)]
#[command(name = "euler-align", version, about = "Euler alignment experiments on the periodic torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to $EULER_ALIGN_OUT, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration.
    Run(Common),
    /// Ensemble over the configured viscosities.
    SweepEps(Common),
    /// Relative-energy study against a fine smooth reference.
    WeakStrong(Common),
    /// Kernel certificate.
    KernelSelftest(Common),
    /// Measure-level reports for an ensemble.
    MeasureReport(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Run(a) => (ExperimentKind::Run, a),
        Command::SweepEps(a) => (ExperimentKind::SweepEps, a),
        Command::WeakStrong(a) => (ExperimentKind::WeakStrong, a),
        Command::KernelSelftest(a) => (ExperimentKind::KernelSelftest, a),
        Command::MeasureReport(a) => (ExperimentKind::MeasureReport, a),
    };
    let config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(Status::of_error(&e).code() as u8);
        }
    };
    let root = output_root(args.out.as_deref());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(Status::ConfigError.code() as u8);
        }
    };
    match pool.install(|| execute(kind, &config, &root)) {
        Ok(outcome) => {
            println!("{}", outcome.run_dir.display());
            if let Some(msg) = &outcome.message {
                eprintln!("{}: {msg}", kind.name());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Status::of_error(&e).code() as u8)
        }
    }
}
