use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nodal_lab::error::Result;
use nodal_lab::pipeline::{run_pipeline, run_stage, verify_suite, RunConfig, VerifyOptions};

#[derive(Parser)]
#[command(name = "nodal-lab", version, about = "Staged numerics for planar unique continuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// n = 128 and the looser tolerance ladder.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured instance.
    Solve,
    /// Extract the nodal set and perforate.
    Perforate,
    /// Build the positive multiplier.
    Multiplier,
    /// Divergence form, Beltrami coefficient and the renormalized map.
    Qcmap,
    /// Transport, stream function, γ and ζ.
    Gauge,
    /// Carleman sweep and vanishing-order report.
    Carleman,
    /// All stages in order with a master report.
    Pipeline,
    /// Invariant checks of every module as a pass/fail matrix.
    Verify {
        /// Value of the Cauchy kernel at the origin (fault injection).
        #[arg(long, default_value_t = 0.0)]
        kernel_origin: f64,
    },
}

fn config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if c.quick {
        cfg.quick = true;
        cfg.n = 128;
    }
    if let Some(n) = c.n {
        cfg.n = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = config(&cli.common)?;
    let stage = match &cli.command {
        Command::Solve => "solve",
        Command::Perforate => "perforate",
        Command::Multiplier => "multiplier",
        Command::Qcmap => "qcmap",
        Command::Gauge => "gauge",
        Command::Carleman => "carleman",
        Command::Pipeline => {
            let rep = run_pipeline(&cfg)?;
            for c in &rep.checks {
                println!("{:<44} {:>5}  measured {:.4e}  threshold {:.4e}", c.name, if c.passed { "pass" } else { "FAIL" }, c.measured, c.threshold);
            }
            println!("report: {}", cfg.out.join("report.toml").display());
            return Ok(rep.passed);
        }
        Command::Verify { kernel_origin } => {
            let m = verify_suite(&cfg, VerifyOptions { kernel_origin: *kernel_origin });
            fs::create_dir_all(&cfg.out)?;
            fs::write(cfg.out.join("verify.csv"), m.to_csv())?;
            for r in &m.rows {
                println!("{:<58} {:>5}  {:.4e} (tol {:.1e}) {}", r.label, if r.passed { "pass" } else { "FAIL" }, r.measured, r.tolerance, r.note);
            }
            return Ok(m.passed());
        }
    };
    print!("{}", run_stage(&cfg, stage)?);
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
