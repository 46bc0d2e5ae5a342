//! `deephedge`: command-line driver for the hedging experiment.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 missing artifact, 4 training divergence, 5 output exists (use --force),
//! 6 report sign checks failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deephedge::config::{Profile, RunConfig};
use deephedge::experiment::Run;
use deephedge::rng::derive_seed;
use deephedge::Error;

#[derive(Debug, Parser)]
#[command(
    name = "deephedge",
    version,
    about = "Deep hedging versus delta hedging under GJR-GARCH"
)]
struct Cli {
    /// TOML run configuration; defaults to the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in profile used when no --config is given.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,

    /// Root seed; every path, pricing, surface and training seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,

    /// Run directory.
    #[arg(long, global = true, env = "DEEPHEDGE_OUT")]
    out: Option<PathBuf>,

    /// Print the effective configuration with notes on every setting and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate training, validation and test P-paths.
    Simulate,
    /// Fit GJR-GARCH by maximum likelihood.
    Calibrate {
        /// CSV of daily log returns; a synthetic series is fitted when omitted.
        #[arg(long)]
        returns: Option<PathBuf>,
        /// Length of the synthetic series.
        #[arg(long, default_value_t = 5000)]
        length: usize,
    },
    /// Monte Carlo price of the call under Q.
    Price,
    /// Build the nested Monte Carlo delta surface.
    Surface,
    /// Train deep hedging agents (all configured levels by default).
    Train {
        #[arg(long)]
        alpha: Vec<f64>,
        /// Continue from the last saved epoch.
        #[arg(long)]
        resume: bool,
    },
    /// Risk reports of deep, delta and difference strategies on test paths.
    Evaluate {
        #[arg(long)]
        alpha: Vec<f64>,
    },
    /// Statistical-arbitrage test of the difference strategy.
    Arbtest,
    /// Performance and association tables, histograms and sign checks.
    Report,
}

fn resolve_config(cli: &Cli) -> deephedge::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::profile(cli.profile.parse::<Profile>()?),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.paths.seed = derive_seed(seed, 1);
        cfg.train.seed = derive_seed(seed, 2);
        cfg.train.init_seed = derive_seed(seed, 3);
        cfg.mc.price_seed = derive_seed(seed, 4);
        cfg.mc.surface_seed = derive_seed(seed, 5);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_alphas(cfg: &RunConfig, requested: &[f64]) -> deephedge::Result<Vec<f64>> {
    if requested.is_empty() {
        return Ok(cfg.train.alphas.clone());
    }
    for &a in requested {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha {a} is outside (0, 1)")));
        }
        cfg.agent_index(a)?;
    }
    Ok(requested.to_vec())
}

/// Outcome of a command that ran to completion.
enum Done {
    Ok,
    ChecksFailed,
}

fn run(cli: Cli) -> deephedge::Result<Done> {
    let cfg = resolve_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.annotated_toml()?);
        return Ok(Done::Ok);
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given; see --help".into()));
    };
    let workers = cli.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
    {
        log::warn!("worker pool already initialised: {e}");
    }
    let run = Run::open(cfg, cli.force, workers)?;

    match command {
        Command::Simulate => {
            for p in run.simulate_paths()? {
                println!("wrote {}", p.display());
            }
        }
        Command::Calibrate { returns, length } => {
            let fit = run.calibrate(returns.as_deref(), length)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
        }
        Command::Price => {
            let est = run.price()?;
            println!("price {:.6} (std error {:.6})", est.value, est.std_error);
        }
        Command::Surface => {
            let s = run.build_surface()?;
            let (lo, hi) = s.value_range();
            println!(
                "surface written: delta range [{lo:.4}, {hi:.4}], max monotonicity violation {:.2e}",
                s.max_monotonicity_violation()
            );
        }
        Command::Train { alpha, resume } => {
            for a in check_alphas(&run.config, &alpha)? {
                let meta = run.train_agent(a, resume)?;
                println!(
                    "alpha={a}: best validation CVaR {:.6} after {} epochs (best epoch {:?})",
                    meta.best_valid_cvar, meta.epochs_run, meta.best_epoch
                );
            }
        }
        Command::Evaluate { alpha } => {
            for a in check_alphas(&run.config, &alpha)? {
                for r in run.evaluate(a)? {
                    println!("{}", r.csv_row());
                }
            }
        }
        Command::Arbtest => {
            for r in run.arbtest()? {
                println!(
                    "alpha={}: rho(-V)={:.4} E[V]={:.4} statistical arbitrage: {}",
                    r.alpha, r.cvar_hat, r.mean, r.is_stat_arb
                );
            }
        }
        Command::Report => {
            let summary = run.report()?;
            let dir = run.layout.report_dir();
            for name in ["delta_risk.txt", "table1.txt", "table2.txt"] {
                let text = std::fs::read_to_string(dir.join(name)).map_err(|e| Error::Io {
                    path: dir.join(name),
                    source: e,
                })?;
                println!("{text}");
            }
            for c in &summary.checks {
                println!(
                    "[{}] {} ({})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if !summary.missing_agents.is_empty() {
                println!("agents not trained: {:?}", summary.missing_agents);
            }
            if !summary.all_passed() {
                return Ok(Done::ChecksFailed);
            }
        }
    }
    Ok(Done::Ok)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::OutputExists(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::ChecksFailed) => ExitCode::from(6),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::MissingArtifact { .. } = e {
                eprintln!("build it with the corresponding deephedge subcommand, then retry");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
