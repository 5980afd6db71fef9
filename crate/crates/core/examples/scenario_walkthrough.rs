//! Builds a desk scenario and plays one episode with the random policy,
//! printing what each vehicle was served by and what it cost.
//!
//! Usage: `cargo run --release --example scenario_walkthrough -- [seed]`

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twinmig::baselines::random_action;
use twinmig::env::{Executed, MigrationEnv};
use twinmig::trainer::scenario_for;
use twinmig::Config;

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let cfg = Config::desk();
    let world = scenario_for(&cfg, seed)?;
    for (i, s) in world.servers.iter().enumerate() {
        println!(
            "server {i}: {} at ({:.0}, {:.0}), range {:.0} m, capability {:.2e} cycles/s",
            if s.is_satellite() { "satellite" } else { "rsu" },
            s.position.x,
            s.position.y,
            s.comm_range,
            s.compute_capability
        );
    }
    let mut env = MigrationEnv::new(world);
    env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slot = 0;
    while !env.is_done() {
        let reps = env.reputations();
        let action = random_action(&env.masks(), &mut rng);
        let step = env.step(&action)?;
        println!("slot {slot:>2}  reward {:>8.3}  violations {}", step.reward, step.violations);
        for (v, (e, lat)) in step.executed.iter().zip(&step.latencies).enumerate() {
            match (e, lat) {
                (Executed::Served { action, repairs }, Some(l)) => println!(
                    "    vehicle {v}: current {} (rep {:.2}) pre {} (rep {:.2}) K {:.2} latency {:.2}s repairs {repairs}",
                    action.current, reps[action.current], action.pre, reps[action.pre], action.pre_fraction, l.total
                ),
                _ => println!("    vehicle {v}: dropped"),
            }
        }
        slot += 1;
    }
    Ok(())
}
