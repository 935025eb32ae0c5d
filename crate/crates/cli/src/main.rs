//! `stablenorm`: batch runs of the cell problem, the stable norm, plane-like
//! sets and the isoperimetric problem.
//!
//! Exit codes: 0 every result certified, 1 usage or configuration error,
//! 2 some result uncertified (outputs written so far are kept).

mod commands;
mod config;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::RunConfig;
use crate::output::Run;

#[derive(Parser, Debug)]
#[command(name = "stablenorm", version, about = "Homogenized stable norm of periodic anisotropic perimeters")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent solves.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for the randomized parts (pair sampling, swap-search restarts).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
enum Command {
    /// Certified solve of the cell problem for one direction.
    Phi,
    /// φ over equiangular directions; writes fan.csv.
    Fan,
    /// Facet probes at integer directions.
    Facets,
    /// Wulff polygon from a fan, plus an optional strict-convexity scan.
    Wulff,
    /// Plane-like sets, Birkhoff checks, lamination gaps and calibrations.
    Planelike,
    /// Isoperimetric problem on a box.
    Iso,
    /// Rescaled minimizers against the Wulff shape.
    Rescale,
    /// Closed-form examples and small oracle checks.
    Selftest {
        /// Deliberately break one invariant; the run must then exit 2.
        #[arg(long, value_enum)]
        inject_fault: Option<selftest::Fault>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phi => "phi",
            Command::Fan => "fan",
            Command::Facets => "facets",
            Command::Wulff => "wulff",
            Command::Planelike => "planelike",
            Command::Iso => "iso",
            Command::Rescale => "rescale",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot start {w} workers: {e}");
            return ExitCode::from(1);
        }
    }
    if let Command::Selftest { inject_fault } = cli.command {
        return selftest_main(&cli, inject_fault);
    }
    let Some(path) = cli.config.clone() else {
        eprintln!("error: `{}` needs --config PATH\n", cli.command.name());
        eprintln!("usage: stablenorm {} --config PATH [--out DIR] [--workers N] [--seed N]", cli.command.name());
        return ExitCode::from(1);
    };
    let (cfg, bytes) = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg, &bytes) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(certified)`; errors before any output exist are configuration errors.
fn run(cli: &Cli, cfg: &RunConfig, bytes: &[u8]) -> Result<bool> {
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = cli.workers.or(cfg.workers).unwrap_or_else(rayon::current_num_threads);
    if cli.workers.is_none() {
        if let Some(w) = cfg.workers {
            // a second global pool cannot be built; ignore if one already runs
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
    }
    let run = Run::new(&out, cli.command.name(), bytes, workers, cli.seed)?;
    let mut ctx = Ctx {
        cfg,
        metric: cfg.metric()?,
        run,
        seed: cli.seed,
    };
    let result = match cli.command {
        Command::Phi => commands::phi(&mut ctx),
        Command::Fan => commands::fan(&mut ctx),
        Command::Facets => commands::facets(&mut ctx),
        Command::Wulff => commands::wulff(&mut ctx),
        Command::Planelike => commands::planelike(&mut ctx),
        Command::Iso => commands::iso(&mut ctx),
        Command::Rescale => commands::rescale(&mut ctx),
        Command::Selftest { .. } => unreachable!(),
    };
    if let Err(e) = result {
        if ctx.run.manifest.outputs.is_empty() && ctx.run.manifest.tasks.is_empty() {
            return Err(e);
        }
        // partial outputs stay; the run counts as uncertified
        eprintln!("error: {e:#}");
        ctx.run.manifest.certified = false;
    }
    let manifest = ctx.run.finish().context("cannot write the manifest")?;
    println!(
        "{}: {} ({} outputs in {})",
        manifest.command,
        if manifest.certified { "certified" } else { "UNCERTIFIED" },
        manifest.outputs.len(),
        out.display()
    );
    Ok(manifest.certified)
}

fn selftest_main(cli: &Cli, fault: Option<selftest::Fault>) -> ExitCode {
    let t = Instant::now();
    let checks = selftest::run(fault);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let pass = checks.iter().all(|c| c.pass);
    println!(
        "selftest: {}/{} passed in {:.1}s",
        checks.iter().filter(|c| c.pass).count(),
        checks.len(),
        t.elapsed().as_secs_f64()
    );
    if let Some(dir) = &cli.out {
        let written = Run::new(dir, "selftest", b"", rayon::current_num_threads(), cli.seed).and_then(|mut run| {
            run.write_json("selftest.json", &checks)?;
            run.task("selftest", pass, t, 0);
            run.finish()
        });
        if let Err(e) = written {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    }
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
