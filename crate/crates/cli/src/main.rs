use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sharpness_lab::{run, Command, RunArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    /// Exact spectral value vs Monte-Carlo estimate for each preset.
    Oracle,
    /// Regularizer error over a ρ schedule, with a log-log chart.
    Estimate,
    /// Train one run per (λ, seed) and write metrics plus checkpoints.
    Train,
    /// Hessian Frobenius norm over training for a λ sweep.
    BiasStudy,
    /// Coupled-sample checks of rescaling / rotation invariance.
    InvarianceCheck,
    /// Reconstruct eigenvalues and Hessian entries from probes.
    UniversalityDemo,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Oracle => Command::Oracle,
            Sub::Estimate => Command::Estimate,
            Sub::Train => Command::Train,
            Sub::BiasStudy => Command::BiasStudy,
            Sub::InvarianceCheck => Command::InvarianceCheck,
            Sub::UniversalityDemo => Command::UniversalityDemo,
        }
    }
}

/// Sharpness-measure experiments.
///
/// Output directory: --out, else the config's `output_dir`, else
/// $SHARPNESS_LAB_OUT, else ./out.
///
/// Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O failure.
#[derive(Debug, Parser)]
#[command(name = "sharpness-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,

    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Output directory [env: SHARPNESS_LAB_OUT, used only when neither this
    /// flag nor the config's `output_dir` is set].
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides `study.seed`; for train and bias-study it also replaces the
    /// seed sweep with this single seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for independent (λ, seed) cells.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args = RunArgs {
        command: cli.command.into(),
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
    };
    match run(&args) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sharpness-lab {}: {e}", args.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
