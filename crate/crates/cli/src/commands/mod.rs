//! The study subcommands. Each is a pure function of the config bytes and
//! the seed; wall-clock data only ever goes to `timings.json`.

mod estimate;
mod invariance;
mod oracle;
mod train;
mod universality;

use std::path::{Path, PathBuf};

use sharpness_core::measures::SeededStream;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::svg::LineChart;
use crate::table::CsvTable;

pub use estimate::log_log_slope;
pub use train::BIAS_STUDY_DEVIATION;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Oracle,
    Estimate,
    Train,
    BiasStudy,
    InvarianceCheck,
    UniversalityDemo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Estimate => "estimate",
            Self::Train => "train",
            Self::BiasStudy => "bias-study",
            Self::InvarianceCheck => "invariance-check",
            Self::UniversalityDemo => "universality-demo",
        }
    }
}

/// Everything a subcommand needs besides the config itself.
pub struct Context<'a> {
    pub loaded: &'a LoadedConfig,
    pub out_dir: PathBuf,
    /// `--seed`: replaces `study.seed` and collapses any seed sweep to this seed.
    pub seed_override: Option<u64>,
}

impl Context<'_> {
    pub fn seed(&self) -> u64 {
        self.seed_override.unwrap_or(self.loaded.config.study.seed)
    }

    pub fn stream(&self) -> SeededStream {
        SeededStream::new(self.seed())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_table(&self, name: &str, table: &CsvTable) -> CliResult<PathBuf> {
        let p = self.path(name);
        table.write(&p)?;
        Ok(p)
    }

    fn write_chart(&self, name: &str, chart: &LineChart) -> CliResult<PathBuf> {
        self.write_text(name, &chart.render())
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_file(&p, text.as_bytes())?;
        Ok(p)
    }
}

fn write_file(p: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

/// Runs `cmd` and returns the files it wrote.
pub fn dispatch(cmd: Command, ctx: &Context) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", ctx.out_dir.display())))?;
    match cmd {
        Command::Oracle => oracle::run(ctx),
        Command::Estimate => estimate::run(ctx),
        Command::Train => train::run_train(ctx),
        Command::BiasStudy => train::run_bias_study(ctx),
        Command::InvarianceCheck => invariance::run(ctx),
        Command::UniversalityDemo => universality::run(ctx),
    }
}

/// Ordinary least-squares `(slope, intercept)`; `None` with fewer than two
/// distinct abscissae.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
