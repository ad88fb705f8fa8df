use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ebsde_lab::config::{Config, Overrides};
use ebsde_lab::pipeline::{self, Pipeline};
use ebsde_lab::report::{write_outputs, Outcome};
use ebsde_lab::suite::{self, SuiteOptions};
use serde_json::json;

/// Ergodic BSDE experiments with Neumann boundary conditions.
#[derive(Parser)]
#[command(name = "ebsde-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for summary.json, CSV tables and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Grid points per axis.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate constants and assumption flags.
    Check,
    /// Solve the ergodic problem at one μ.
    Solve {
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
    },
    /// λ(μ) over `run.mus`.
    Curve,
    /// Find μ with λ(μ) equal to a target.
    Invert {
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
    },
    /// PDE residual, pathwise BSDE residual and Monte Carlo λ.
    Verify {
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
    },
    /// Score the optimal feedback and the configured policies.
    Control {
        #[arg(long, allow_hyphen_values = true)]
        mu: Option<f64>,
    },
    /// Run the acceptance suite.
    Reproduce {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            match e.downcast_ref::<ebsde_core::Error>() {
                Some(core) => {
                    eprintln!("error [{}]: {core}", core.module());
                    eprintln!("remedy: {}", core.remedy());
                }
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let c = cli.common;
    let (pipeline, mu, lambda) = match cli.command {
        Command::Reproduce { only } => return reproduce(&c, only),
        Command::Check => (Pipeline::Check, None, None),
        Command::Solve { mu } => (Pipeline::Solve, mu, None),
        Command::Curve => (Pipeline::Curve, None, None),
        Command::Invert { lambda } => (Pipeline::Invert, None, lambda),
        Command::Verify { mu } => (Pipeline::Verify, mu, None),
        Command::Control { mu } => (Pipeline::Control, mu, None),
    };
    let path = c
        .config
        .clone()
        .ok_or_else(|| ebsde_core::Error::Config("--config is required".into()))?;
    let overrides = Overrides {
        seed: c.seed,
        tol: c.tol,
        grid: c.grid,
        paths: c.paths,
        horizon: c.horizon,
        mu,
        lambda,
    };
    let mut cfg = Config::load(&path)?;
    cfg.apply(&overrides);
    cfg.validate()?;
    let outcome = pipeline::run(pipeline, &cfg)?;
    let manifest = json!({
        "tool": "ebsde-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": pipeline,
        "config_path": path.display().to_string(),
        "overrides": overrides,
        "seed": cfg.run.seed,
        "tol": cfg.run.tol,
        "grid": cfg.run.grid,
        "paths": cfg.run.paths,
        "horizon": cfg.run.horizon,
        "h": cfg.run.h,
        "config": cfg,
    });
    report(&c, &outcome, manifest)
}

fn report(c: &Common, outcome: &Outcome, manifest: serde_json::Value) -> anyhow::Result<bool> {
    write_outputs(&c.out_dir, outcome, manifest)?;
    for a in &outcome.assertions {
        println!("{} {}: {}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    println!("{} -> {}", outcome.command, c.out_dir.display());
    Ok(outcome.passed())
}

fn reproduce(c: &Common, only: Vec<usize>) -> anyhow::Result<bool> {
    let opts = SuiteOptions {
        seed: c.seed.unwrap_or(SuiteOptions::default().seed),
    };
    let ids: Vec<usize> = if only.is_empty() { (1..=12).collect() } else { only };
    let mut results = Vec::new();
    for id in ids {
        let r = suite::run_criterion(id, &opts);
        println!("{}", r.line());
        results.push(r);
    }
    let mut outcome = Outcome::new(
        "reproduce",
        json!({ "criteria": results }),
        results
            .iter()
            .map(|r| ebsde_lab::report::Assertion {
                name: format!("criterion_{:02}", r.id),
                pass: r.pass,
                value: Some(r.value),
                threshold: Some(r.threshold),
                detail: r.detail.clone(),
            })
            .collect(),
    );
    outcome.file("acceptance.csv", suite::table(&results)?);
    for r in &results {
        for (name, bytes) in &r.tables {
            outcome.file(name, bytes.clone());
        }
    }
    let manifest = json!({
        "tool": "ebsde-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "reproduce",
        "seed": opts.seed,
        "criteria": results.iter().map(|r| r.id).collect::<Vec<_>>(),
    });
    write_outputs(&c.out_dir, &outcome, manifest)?;
    Ok(outcome.passed())
}
