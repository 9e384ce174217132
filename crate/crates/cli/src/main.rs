use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plate_duality::config::ScenarioConfig;
use plate_duality::error::Error;
use plate_duality::scenario::{self, Outcome, SweepParam};

/// Clamped von Kármán plate solver with duality checks.
///
/// Exit status: 0 when every enabled check passes, 2 when a check fails,
/// 1 on a configuration error or a solver failure.
#[derive(Parser)]
#[command(name = "plate-duality", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a scenario and run its checks.
    Run { config: PathBuf },
    /// Compare the analytic residual and Hessian with finite differences.
    Gradcheck {
        config: PathBuf,
        /// Perturb the analytic residual; the check must then fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Re-run a scenario over one of its sweep lists.
    Sweep {
        config: PathBuf,
        /// epsilon, k, load_scale or grid
        #[arg(long)]
        param: String,
    },
}

fn status(o: Outcome) -> ExitCode {
    match o {
        Outcome::Pass => ExitCode::SUCCESS,
        Outcome::Fail => ExitCode::from(2),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Error> {
    ScenarioConfig::load(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config } => load(&config).and_then(|cfg| {
            let out = scenario::run(&cfg)?;
            print!("{}", scenario::summary(&out));
            println!("outputs in {}", cfg.output_dir().display());
            Ok(out.outcome())
        }),
        Cmd::Gradcheck { config, corrupt } => load(&config).and_then(|cfg| {
            let (r, o) = scenario::gradcheck(&cfg, corrupt)?;
            println!(
                "{} states: residual rel. error {:.3e}, Hessian rel. error {:.3e}, max {:.3e} (limit {:.1e})",
                r.states,
                r.residual_err,
                r.hessian_err,
                r.max_err(),
                cfg.tolerances.gradcheck_tol
            );
            Ok(o)
        }),
        Cmd::Sweep { config, param } => load(&config).and_then(|cfg| {
            let p: SweepParam = param.parse()?;
            let out = scenario::sweep(&cfg, p)?;
            for r in &out.runs {
                println!("{}", scenario::summary(r));
            }
            for c in &out.checks {
                println!("{} {} = {:.3e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.note);
            }
            println!("outputs in {}", cfg.output_dir().display());
            Ok(out.outcome())
        }),
    };
    match res {
        Ok(o) => status(o),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
