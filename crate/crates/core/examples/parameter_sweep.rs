//! Sweeps the reputation weight with short training runs and prints the
//! resulting sweep rows.
//!
//! Usage: `cargo run --release --example parameter_sweep -- [epochs]`

use anyhow::Result;
use twinmig::baselines::PolicyVariant;
use twinmig::experiment::{run_sweep, SweepParam, SweepSpec};
use twinmig::Config;

fn main() -> Result<()> {
    let mut cfg = Config::desk();
    cfg.trainer.epochs = std::env::args().nth(1).map_or(Ok(40), |s| s.parse())?;
    cfg.trainer.eval_interval = cfg.trainer.epochs;
    cfg.trainer.checkpoint_interval = 0;
    let spec = SweepSpec {
        param: SweepParam::Rho,
        values: SweepParam::Rho.default_values(),
        seeds: vec![0],
        variants: vec![PolicyVariant::HybridGdm, PolicyVariant::Random],
        checkpoint_dir: None,
    };
    println!("{:>6} {:>12} {:>9} {:>9} {:>10}", "rho", "variant", "reward", "latency", "reputation");
    for r in run_sweep(&cfg, &spec)? {
        println!(
            "{:>6} {:>12} {:>9.3} {:>9.3} {:>10.3}",
            r.value,
            r.variant.name(),
            r.reward_mean,
            r.latency_mean.unwrap_or(f64::NAN),
            r.reputation_mean.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
