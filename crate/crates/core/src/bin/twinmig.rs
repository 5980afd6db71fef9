//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twinmig::baselines::PolicyVariant;
use twinmig::experiment::{cmd_eval, cmd_sweep, cmd_train, SweepParam, SweepSpec};
use twinmig::oracle::{run_all, OracleOptions};
use twinmig::{Config, Profile};

#[derive(Parser)]
#[command(name = "twinmig", version, about = "Trust-aware vehicle-twin migration simulator and trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file whose keys override the selected profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile.
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// Run seeds, comma separated. Each seed also fixes the scenario.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> twinmig::Result<Config> {
        match &self.config {
            Some(path) => Config::load(path, self.profile),
            None => {
                let cfg = Config::profile(self.profile);
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant per seed and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "hybrid_gdm")]
        variant: PolicyVariant,
    },
    /// Evaluate a trained checkpoint (or the random policy).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "hybrid_gdm")]
        variant: PolicyVariant,
        /// Checkpoint file, or a training output directory holding
        /// `seed_<n>/final.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep one parameter over values, seeds and variants.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// rho, task_size, migration_bandwidth or attack_type.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; defaults to the parameter's standard list.
        /// Pass an empty string for no values.
        #[arg(long)]
        values: Option<String>,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',', default_value = "hybrid_gdm,no_pre,full_pre,random")]
        variant: Vec<PolicyVariant>,
        /// Evaluate `<dir>/seed_<n>/final.bin` instead of training per point.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Run the brute-force self-checks.
    OracleCheck {
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seed: Vec<u64>,
        /// Perturb a trust constant so the trust check must fail.
        #[arg(long)]
        mutate_trust: bool,
    },
}

fn run(cli: Cli) -> twinmig::Result<bool> {
    match cli.command {
        Command::Train { common, variant } => {
            let cfg = common.config()?;
            let files = cmd_train(&cfg, variant, &common.seed, &common.out)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Eval {
            common,
            variant,
            checkpoint,
        } => {
            let cfg = common.config()?;
            for r in cmd_eval(&cfg, variant, &common.seed, checkpoint.as_deref(), &common.out)? {
                println!(
                    "{} seed {}: reward {:.4}, latency {}, reputation {}, violations {}",
                    r.variant,
                    r.seed,
                    r.reward_mean,
                    fmt_opt(r.latency_mean),
                    fmt_opt(r.reputation_mean),
                    r.violations
                );
            }
        }
        Command::Sweep {
            common,
            param,
            values,
            variant,
            checkpoint_dir,
        } => {
            let cfg = common.config()?;
            let values = match values {
                Some(v) => v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
                None => param.default_values(),
            };
            let spec = SweepSpec {
                param,
                values,
                seeds: common.seed.clone(),
                variants: variant,
                checkpoint_dir,
            };
            let rows = cmd_sweep(&cfg, &spec, &common.out)?;
            println!("{} rows -> {}", rows.len(), common.out.join("sweep.csv").display());
        }
        Command::OracleCheck { seed, mutate_trust } => {
            let mut ok = true;
            for s in seed {
                for r in run_all(&OracleOptions { seed: s, mutate_trust }) {
                    println!("{r}");
                    ok &= r.passed;
                }
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
