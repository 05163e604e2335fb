//! `choicerl`: command-line driver for the offline choice-data pipeline.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::Workspace;
use config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "choicerl", version, about = "Reward recovery and pessimistic planning from logged choices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the instance, solve the behaviour model and sample a dataset.
    Generate(Common),
    /// Fit the choice model.
    Estimate(Common),
    /// Recover the reward and write its error certificate.
    Recover(Common),
    /// Plan the pessimistic policy.
    Plan(Common),
    /// Check the uncertainty event and the suboptimality bound.
    Audit(Common),
    /// Run every configured stage and write `report.json`.
    Pipeline(Common),
    /// Choose the beta constant from the violation frequency.
    Calibrate(Common),
    /// Sweep the sample size and fit log-log rates.
    Sweep(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `instance.num_states=8`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Instance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "lambda")]
    lambda_reg: Option<f64>,
    /// Fixed beta, skipping calibration.
    #[arg(long, conflicts_with = "beta_constant")]
    beta: Option<f64>,
    /// Constant of the theorem schedule, skipping calibration.
    #[arg(long)]
    beta_constant: Option<f64>,
    /// `linear` or `rbf[:bandwidth]`.
    #[arg(long)]
    kernel: Option<String>,
    /// Plan with the true transitions.
    #[arg(long)]
    oracle: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 when a sweep slope leaves its window.
    #[arg(long)]
    check_windows: bool,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            set: self.set.clone(),
            seed: self.seed,
            n: self.n,
            data_seed: self.data_seed,
            gamma: self.gamma,
            lambda_reg: self.lambda_reg,
            beta: self.beta,
            beta_constant: self.beta_constant,
            kernel: self.kernel.clone(),
            oracle: self.oracle,
            out: self.out.clone(),
            check_windows: self.check_windows,
        }
    }
}

const EXIT_STAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_WINDOWS: u8 = 3;

fn run(command: Command, ws: &mut Workspace) -> Result<u8> {
    match command {
        Command::Generate(_) => {
            ws.mdp()?;
            ws.behavior()?;
            ws.dataset()?;
        }
        Command::Estimate(_) => {
            ws.estimate()?;
        }
        Command::Recover(_) => {
            ws.reward()?;
        }
        Command::Plan(_) => {
            let p = ws.policy()?;
            eprintln!("beta = {:.6e}", p.beta);
        }
        Command::Audit(_) => {
            let a = ws.audit()?;
            eprintln!(
                "violations {} of {} cells, suboptimality {:.6e}, bound {:.6e}",
                a.audit.total_violations(),
                a.audit.cells_per_step * a.audit.violations.len(),
                a.suboptimality,
                a.theorem_bound
            );
        }
        Command::Pipeline(_) => {
            let r = ws.pipeline()?;
            if let Some(s) = r.suboptimality {
                eprintln!("suboptimality {s:.6e}");
            }
        }
        Command::Calibrate(_) => {
            let c = ws.calibrate()?;
            eprintln!("chosen constant {:.6e}", c.chosen_constant);
        }
        Command::Sweep(_) => {
            let s = ws.sweep()?;
            for w in &s.windows {
                let slope = w.slope.map_or("undefined".to_string(), |v| format!("{v:.3}"));
                let status = if !w.passed {
                    "outside window"
                } else if w.flagged {
                    "accepted, flagged"
                } else {
                    "ok"
                };
                eprintln!("{:<24} slope {slope:>10}  {status}", w.metric);
            }
            if ws.cfg.sweep.check_windows && !s.windows_passed {
                return Ok(EXIT_WINDOWS);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Generate(c)
        | Command::Estimate(c)
        | Command::Recover(c)
        | Command::Plan(c)
        | Command::Audit(c)
        | Command::Pipeline(c)
        | Command::Calibrate(c)
        | Command::Sweep(c) => c.clone(),
    };
    if let Some(j) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let cfg = match ExperimentConfig::load(common.config.as_deref(), &common.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    // `generate` always starts from scratch.
    let reuse = !matches!(cli.command, Command::Generate(_));
    let mut ws = match Workspace::new(cfg, reuse) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_STAGE);
        }
    };
    let code = match run(cli.command, &mut ws) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_STAGE
        }
    };
    for p in &ws.written {
        println!("{}", p.display());
    }
    ExitCode::from(code)
}
