//! Experiment runner for `aerecover`: config parsing, the subcommands and
//! CSV/SVG output.

pub mod config;
pub mod experiments;
pub mod svg;

use std::path::PathBuf;

use aerecover::Family;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, ExperimentConfig, GradientKind};

#[derive(Debug, Parser)]
#[command(name = "aerecover", version, about = "Autoencoder dictionary recovery experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Config file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub svg: bool,
    #[arg(long, value_name = "BOOL")]
    pub fresh_batches: Option<bool>,
    #[arg(long, value_name = "mc|oracle")]
    pub gradient: Option<GradientKind>,
    #[arg(long, value_name = "gmm|sparse|nonneg")]
    pub family: Option<Family>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dictionary and a dataset.
    Generate(Common),
    /// Train once and write the trace and the learned weights.
    Train(Common),
    /// Check the claim and correlation bounds on close weight matrices.
    Verify(Common),
    /// Match the columns of two weight files.
    Match {
        w: PathBuf,
        a: PathBuf,
        /// Write `match.csv` here instead of printing it.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// `sparse` allows column sign flips.
        #[arg(long, value_name = "gmm|sparse|nonneg", default_value = "gmm")]
        family: Family,
    },
    /// Rerun a full experiment grid.
    Reproduce {
        figure: Figure,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure classes, mapped to distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Loads the config and applies command-line overrides.
pub fn resolve(common: &Common) -> Result<(ExperimentConfig, u64, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.experiment.out = o.clone();
    }
    if let Some(f) = common.fresh_batches {
        cfg.train.fresh_batches = f;
    }
    if let Some(g) = common.gradient {
        cfg.train.gradient = g;
    }
    if let Some(f) = common.family {
        cfg.model.family = f;
    }
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let out = cfg.experiment.out.clone();
    Ok((cfg, seed, out))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    use experiments::*;
    match cli.command {
        Command::Generate(c) => {
            let (cfg, seed, out) = resolve(&c)?;
            let g = generate(&cfg, seed)?;
            report(&write_generated(&g, &out)?);
        }
        Command::Train(c) => {
            let (cfg, seed, out) = resolve(&c)?;
            let (dict, run) = train_single(&cfg, seed)?;
            if let Some(last) = run.trace.last() {
                println!(
                    "final loss {:.6e}, matched error {:.6e}, closeness {:.6e}",
                    last.loss,
                    last.frob_err,
                    final_closeness(&dict, &run.params, cfg.model.family)?
                );
            }
            report(&write_train(&dict, &run, &out, c.svg)?);
        }
        Command::Verify(c) => {
            let (cfg, seed, out) = resolve(&c)?;
            let spec = cfg.spec()?;
            let mu = dictionary(&cfg, &spec, seed)?.mu();
            println!("dictionary incoherence mu = {mu:.4} (sqrt(n) / ln(n)^2 = {:.4})", {
                let n = spec.n as f64;
                n.sqrt() / n.ln().powi(2)
            });
            let reports = verify(&cfg, seed)?;
            for r in &reports {
                println!(
                    "{:<12} {:>8} instances {:>6} violations  worst margin {:+.3e}  {}",
                    r.claim_id,
                    r.instances,
                    r.violations,
                    r.worst_margin,
                    if r.holds() { "holds" } else { "VIOLATED" }
                );
            }
            report(&[write_verify(&reports, &out)?]);
        }
        Command::Match { w, a, out, family } => {
            let (mr, csv) = match_files(&w, &a, family)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
                    let p = dir.join("match.csv");
                    std::fs::write(&p, csv).map_err(anyhow::Error::from)?;
                    println!("frobenius_sq {:.16e}", mr.frobenius_sq);
                    report(&[p]);
                }
                None => print!("{csv}"),
            }
        }
        Command::Reproduce { figure, common } => {
            let (cfg, seed, out) = resolve(&common)?;
            let written = match figure {
                Figure::Fig1 => write_fig1(&reproduce_fig1(&cfg, seed)?, &out, common.svg)?,
                Figure::Fig2 => write_fig2(&reproduce_fig2(&cfg, seed)?, &out, common.svg)?,
            };
            report(&written);
        }
    }
    Ok(())
}

/// Exit code for an argument-parsing failure: help and version are success,
/// anything else is a usage (configuration) error.
pub fn usage_exit_code(e: &clap::Error) -> u8 {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
        _ => 1,
    }
}
