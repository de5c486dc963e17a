use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stheat_core::config::Config;
use stheat_core::experiments::Experiment;

/// Space-time solver and verification harness for the stochastic heat equation.
#[derive(Parser, Debug)]
#[command(name = "stheat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for JSON and CSV files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo path count (overrides every section).
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Suppress the per-check summary.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Energy bound sweep (energy.json, energy.csv).
    Energy,
    /// Regularity under J-doubling (regularity.json, regularity.csv).
    Regularity,
    /// Solver against the mild oracle (mild_equiv.json, mild_equiv.csv).
    MildEquiv,
    /// Discrete inf-sup constants (infsup.json, infsup_sweep*.csv).
    Infsup,
    /// Maximal-inequality constants (lemma_constants.json, lemma_triples.csv).
    LemmaConstants,
    /// Picard solver for multiplicative noise (multiplicative.json, picard_trace.csv).
    Multiplicative,
    /// Noise samples and exactness test (noise_dump.json, noise.csv).
    NoiseDump,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Energy => Experiment::Energy,
            Command::Regularity => Experiment::Regularity,
            Command::MildEquiv => Experiment::MildEquiv,
            Command::Infsup => Experiment::Infsup,
            Command::LemmaConstants => Experiment::LemmaConstants,
            Command::Multiplicative => Experiment::Multiplicative,
            Command::NoiseDump => Experiment::NoiseDump,
        }
    }
}

fn run(cli: &Cli) -> stheat_core::Result<bool> {
    let c = &cli.common;
    let base = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let cfg = base.with_overrides(c.seed, c.paths)?;
    let out = cli.command.experiment().run(&cfg)?;
    let json = out.report.write_json(&c.out)?;
    for t in &out.tables {
        std::fs::write(c.out.join(&t.file), &t.contents)?;
    }
    if !c.quiet {
        for chk in &out.report.checks {
            let tag = match (chk.asserted, chk.passed) {
                (_, true) => "PASS",
                (true, false) => "FAIL",
                (false, false) => "note",
            };
            println!("{tag:4}  {}: {}", chk.name, chk.detail);
        }
        println!("wrote {}", json.display());
    }
    Ok(out.report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
