use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ezpgdpo::run::{self, CommandOutcome};
use ezpgdpo::{AppError, AppResult, RunConfig};
use ezpgdpo_core::pgdpo::Ablation;

/// Epstein-Zin consumption-investment solver.
#[derive(Parser, Debug)]
#[command(name = "ezpgdpo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the single-asset time-additive benchmark and compare it with the
    /// closed form. Exits 1 when a threshold fails.
    ValidateMerton(Common),
    /// Train one seed, or a seed study with --seeds.
    Train(Common),
    /// Evaluate a checkpoint: welfare, surfaces, hedging, regressions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate every seed, then aggregate mean and sd.
    SeedStudy(Common),
    /// Train and evaluate the ablation variants (all five unless --ablation).
    Ablate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list: `0,3,7` or an inclusive range `1..5`.
    #[arg(long)]
    seeds: Option<String>,
    /// Parent directory of run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from this checkpoint's parameters.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// soft-penalty, no-floor, value-only, adjoint-only or full.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, wall-clock columns zeroed: bit-identical outputs.
    #[arg(long)]
    reference_mode: bool,
    /// Override training.iterations.
    #[arg(long)]
    iterations: Option<usize>,
}

fn parse_seeds(s: &str) -> AppResult<Vec<u64>> {
    let bad = || AppError::Config(format!("--seeds: cannot parse `{s}`; use `0,3,7` or `1..5`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

impl Common {
    fn config(&self, merton: bool) -> AppResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None if merton => RunConfig::merton_validation(),
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.io.out = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.run.threads = t;
        }
        if self.reference_mode {
            cfg.run.reference_mode = true;
        }
        if let Some(n) = self.iterations {
            cfg.training.iterations = n;
        }
        if let Some(a) = &self.ablation {
            cfg.training.ablation = parse_ablation(a)?;
        }
        if let Some(s) = &self.seeds {
            cfg.run.seeds = parse_seeds(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.or_else(|| cfg.run.seeds.first().copied()).unwrap_or(0)
    }
}

fn parse_ablation(s: &str) -> AppResult<Ablation> {
    Ablation::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
        AppError::Config(format!("--ablation: unknown variant `{s}`; expected one of {}", names.join(", ")))
    })
}

fn dispatch(cli: Cli) -> AppResult<CommandOutcome> {
    match cli.command {
        Command::ValidateMerton(c) => {
            let cfg = c.config(true)?;
            let out = run::cmd_validate_merton(&cfg, c.seed(&cfg), c.warm_start.as_deref())?;
            if let Some(checks) = out.summary["validation"]["checks"].as_array() {
                for ch in checks {
                    println!(
                        "{:<18} {:>12.6} <= {:<10} {}",
                        ch["name"].as_str().unwrap_or_default(),
                        ch["value"].as_f64().unwrap_or(f64::NAN),
                        ch["threshold"],
                        if ch["pass"].as_bool() == Some(true) { "PASS" } else { "FAIL" }
                    );
                }
            }
            Ok(out)
        }
        Command::Train(c) => {
            let cfg = c.config(false)?;
            if c.seeds.is_some() {
                run::cmd_seed_study(&cfg, &cfg.run.seeds, c.warm_start.as_deref())
            } else {
                run::cmd_train(&cfg, c.seed(&cfg), c.warm_start.as_deref())
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.config(false)?;
            run::cmd_evaluate(&cfg, common.seed(&cfg), &checkpoint)
        }
        Command::SeedStudy(c) => {
            let cfg = c.config(false)?;
            let seeds = match c.seed {
                Some(s) => vec![s],
                None => cfg.run.seeds.clone(),
            };
            run::cmd_seed_study(&cfg, &seeds, c.warm_start.as_deref())
        }
        Command::Ablate(c) => {
            let cfg = c.config(false)?;
            let variants = match &c.ablation {
                Some(a) => vec![parse_ablation(a)?],
                None => Ablation::ALL.to_vec(),
            };
            run::cmd_ablate(&cfg, c.seed(&cfg), &variants, c.warm_start.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(out) => {
            println!("{}", out.dir.display());
            if out.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("acceptance thresholds failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
