use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use yulenet::Error;
use yulenet::experiments::{
    ExperimentConfig, Overrides, cmd_evaluate, cmd_figure1, cmd_figure2, cmd_infer, cmd_simulate,
};
use yulenet::summaries::ExtractorKind;
use yulenet::transport::{CURVE_HEADER, Order};

#[derive(Parser)]
#[command(
    name = "yulenet",
    version,
    about = "Simulation-based inference with learned time-series features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (θ, x) pairs from the prior and write them to disk.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of valid pairs; defaults to `sims_per_round`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a posterior for one config; writes checkpoints and a manifest.
    Infer {
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained run against the grid reference posterior.
    Evaluate {
        /// Run directory written by `infer`.
        #[arg(long)]
        out: PathBuf,
        /// Wasserstein order (1 or 2); defaults to the run's config.
        #[arg(long)]
        order: Option<Order>,
    },
    /// Distance-versus-budget curves for a directory of configs.
    Figure1 {
        #[command(flatten)]
        common: Common,
    },
    /// Posterior histograms and the observation-length study for a directory of configs.
    Figure2 {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Config file (simulate, infer) or directory of configs (figure1, figure2).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Desk-scale budget as `RxN`, e.g. `3x1000`.
    #[arg(long)]
    budget_override: Option<String>,
    #[arg(long)]
    extractor: Option<ExtractorKind>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            budget: self.budget_override.clone(),
            extractor: self.extractor,
        }
    }

    fn load(&self) -> yulenet::Result<(ExperimentConfig, PathBuf)> {
        // an unreadable config file is a configuration problem, not an I/O failure
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| match e {
            Error::Io { path, source } => Error::Config {
                line: 0,
                key: String::new(),
                message: format!("{}: {source}", path.display()),
            },
            other => other,
        })?;
        self.overrides().apply(&mut cfg)?;
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
        Ok((cfg, out))
    }

    fn out_or(&self, fallback: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
    }
}

fn print_curve(rows: &[yulenet::transport::CurveRow]) {
    println!("{CURVE_HEADER}");
    for r in rows {
        println!(
            "{},{},{},{:.6},{:.6},{:.6}",
            r.extractor, r.model, r.budget, r.mean, r.stderr, r.floor
        );
    }
}

fn run(cli: Cli) -> yulenet::Result<()> {
    match cli.command {
        Command::Simulate { common, count } => {
            let (cfg, out) = common.load()?;
            let m = cmd_simulate(&cfg, count.unwrap_or(cfg.sims_per_round), &out)?;
            println!(
                "wrote {} pairs ({} of {} runs invalid) to {}",
                m.count,
                m.invalid,
                m.attempts,
                out.display()
            );
        }
        Command::Infer { common } => {
            let (cfg, out) = common.load()?;
            let outcome = cmd_infer(&cfg, &out)?;
            for r in &outcome.manifest.rounds {
                let best = r.validation_loss.get(r.best_epoch.saturating_sub(1));
                println!(
                    "round {}: budget {}, {} epochs, best validation loss {:.4}",
                    r.round,
                    r.cumulative_simulations,
                    r.epochs,
                    best.copied().unwrap_or(f64::NAN)
                );
            }
            println!("run written to {}", out.display());
        }
        Command::Evaluate { out, order } => {
            let eval = cmd_evaluate(&out, order)?;
            print_curve(&eval.rows);
        }
        Command::Figure1 { common } => {
            let out = common.out_or("figure1");
            print_curve(&cmd_figure1(&common.config, &out, &common.overrides())?);
        }
        Command::Figure2 { common } => {
            let out = common.out_or("figure2");
            for s in cmd_figure2(&common.config, &out, &common.overrides())? {
                println!(
                    "{} (n_s {}): mean {:?}, std {:?}",
                    s.name, s.n_s, s.mean, s.std
                );
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::NoReference(_) => 2,
        e if e.is_numeric() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
