mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdmix::frame::{Anchor, InterventionSchedule, Variable};
use rdmix::rd::{PolyForm, Transform};
use rdmix::{Error, ErrorKind, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "rdmix", version, about = "Regression discontinuity with day-level random effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic visit table with known potential outcomes.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Named scenario preset.
        #[arg(long)]
        preset: Option<String>,
        /// Number of simulated days.
        #[arg(long)]
        days: Option<usize>,
    },
    /// RD effects for each outcome at the primary bandwidth and sensitivity variants.
    Estimate(Common),
    /// Leave-one-out cross-validation over bandwidths and polynomial forms.
    Loocv(Common),
    /// Effect modification by congestion, weekday, workload and regime.
    Moderate(Common),
    /// Direct and indirect effects through an intermediate time.
    Mediate(Common),
    /// RD at fixed clock times where no change is expected.
    Placebo(Common),
    /// Arrival histograms, density test, covariate balance and binned means.
    Diagnose(Common),
    /// RD anchored at the end of the window.
    Endhour(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Visit table (repeatable; tables are concatenated).
    #[arg(long)]
    input: Vec<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON intervention schedule.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    form: Option<String>,
    /// Outcome variable (repeatable).
    #[arg(long)]
    outcome: Vec<String>,
    #[arg(long)]
    transform: Option<String>,
    /// `start`, `end` or a clock time such as `07:00`.
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json(&read_text(p)?)
                .map_err(|e| Error::Argument(format!("config {}: {e}", p.display())))?,
            None => RunConfig::default(),
        };
        if !self.input.is_empty() {
            c.inputs = self.input.clone();
        }
        if let Some(p) = &self.schedule {
            c.schedule = serde_json::from_str::<InterventionSchedule>(&read_text(p)?)
                .map_err(|e| Error::Argument(format!("schedule {}: {e}", p.display())))?;
        }
        if let Some(h) = self.bandwidth {
            c.bandwidth = h;
        }
        if let Some(f) = &self.form {
            c.form = f.parse::<PolyForm>()?;
        }
        if !self.outcome.is_empty() {
            c.outcomes = self
                .outcome
                .iter()
                .map(|o| o.parse::<Variable>())
                .collect::<Result<_>>()?;
        }
        if let Some(t) = &self.transform {
            c.transform = Some(t.parse::<Transform>()?);
        }
        if let Some(a) = &self.anchor {
            c.anchor = a.parse::<Anchor>()?;
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        Ok(c)
    }
}

fn read_text(p: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(p)
        .map_err(|e| Error::Argument(format!("cannot read {}: {e}", p.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, preset, days } => {
            let mut c = common.resolve()?;
            if let Some(p) = preset {
                c.preset = p;
                c.scenario = None;
            }
            if days.is_some() {
                c.n_days = days;
            }
            commands::simulate(&c)
        }
        Command::Estimate(a) => commands::estimate(&a.resolve()?),
        Command::Loocv(a) => commands::loocv(&a.resolve()?),
        Command::Moderate(a) => commands::moderate(&a.resolve()?),
        Command::Mediate(a) => commands::mediate(&a.resolve()?),
        Command::Placebo(a) => commands::placebo(&a.resolve()?),
        Command::Diagnose(a) => commands::diagnose(&a.resolve()?),
        Command::Endhour(a) => commands::endhour(&a.resolve()?),
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string(), 1),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Usage => ("usage", 1),
                ErrorKind::Data => ("data", 2),
                ErrorKind::Estimation => ("estimation", 3),
            };
            fail(kind, e.to_string(), code)
        }
    }
}
