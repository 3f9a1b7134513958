//! Experiment harness for confidence-targeted bitwise decoding on the toy
//! logits model.

pub mod commands;
pub mod config;
pub mod record;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, Format};
use crate::config::{ConfigError, ExperimentConfig, SeedSpec};

#[derive(Debug, Parser)]
#[command(name = "bitdecode", version, about = "Decoding experiments on a synthetic bitwise multi-scale model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured decoder once per seed.
    Sample(RunArgs),
    /// Fixed temperatures on the first half of the scales against the configured schedule.
    SweepTau(RunArgs),
    /// Pairwise bit diversity of the configured decoder against a tau = 1 baseline.
    Diversity(RunArgs),
    /// Path-search criterion ablation.
    Pathsearch(RunArgs),
    /// Candidate count and lookahead depth grid.
    MnSweep(RunArgs),
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed count (`50` runs seeds 0..50) or comma-separated list; overrides the config.
    #[arg(long)]
    pub seeds: Option<SeedSpec>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        cfg.run.seeds = seeds.clone();
    }
    Ok(cfg)
}

/// Validation report: `"ok"` or one `error:` line per diagnostic.
pub fn validate_report(path: &std::path::Path) -> (bool, String) {
    let diags = match ExperimentConfig::load(path) {
        Ok(cfg) => cfg.diagnostics().into_iter().map(|d| d.to_string()).collect(),
        Err(e) => vec![e.to_string()],
    };
    if diags.is_empty() {
        (true, "ok".to_string())
    } else {
        (false, diags.iter().map(|d| format!("error: {d}")).collect::<Vec<_>>().join("\n"))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    type Runner = fn(&config::Experiment) -> Result<commands::Report, CliError>;
    let (args, command): (RunArgs, Runner) = match cli.command {
        Command::Validate { config } => {
            let (ok, text) = validate_report(&config);
            println!("{text}");
            return if ok { Ok(()) } else { Err(CliError::Config(ConfigError::Invalid(Vec::new()))) };
        }
        Command::Sample(a) => (a, commands::cmd_sample),
        Command::SweepTau(a) => (a, commands::cmd_sweep_tau),
        Command::Diversity(a) => (a, commands::cmd_diversity),
        Command::Pathsearch(a) => (a, commands::cmd_pathsearch),
        Command::MnSweep(a) => (a, commands::cmd_mn_sweep),
    };
    let exp = load(&args)?.resolve()?;
    let report = command(&exp)?;
    if let Some(test) = &report.test {
        eprintln!(
            "{}: {} vs {} over {} prompts: {:.4} vs {:.4}, p = {:.3e}",
            report.command,
            test.baseline,
            test.candidate,
            test.prompts,
            test.mean_baseline,
            test.mean_candidate,
            test.p_value
        );
    }
    for path in commands::write_report(&report, &args.out, args.format)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
