//! Trains one variant at desk scale and compares it with the random policy.
//!
//! Usage: `cargo run --release --example train_agent -- [variant] [seed] [epochs]`

use anyhow::Result;
use twinmig::baselines::PolicyVariant;
use twinmig::trainer::{evaluate, train, Policy};
use twinmig::Config;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: PolicyVariant = args.next().as_deref().unwrap_or("hybrid_gdm").parse()?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let mut cfg = Config::desk();
    if let Some(e) = args.next() {
        cfg.trainer.epochs = e.parse()?;
    }
    let start = std::time::Instant::now();
    let out = train(&cfg, variant, seed, None, &mut |m| {
        if let Some(r) = m.eval_reward_mean {
            println!(
                "epoch {:>5}  train {:>8.3}  eval {:>8.3}  actor {:>9.3}  critic {:>9.3}  {:.1}s",
                m.epoch,
                m.train_reward_mean,
                r,
                m.actor_loss.unwrap_or(f64::NAN),
                m.critic_loss.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let t = &cfg.trainer;
    let trained = evaluate(&out.policy, &out.world, t.eval_episodes, t.eval_seed)?;
    let random = evaluate(&Policy::Random, &out.world, t.eval_episodes, t.eval_seed)?;
    println!("{variant}: {trained:?}");
    println!("random: {random:?}");
    Ok(())
}
