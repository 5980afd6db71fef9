//! Draws one episode of hybrid attacks and prints it as the attacks CSV.
//!
//! Usage: `cargo run --example attack_schedule -- [seed]`

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twinmig::attack::{schedule_attacks, write_schedule_csv};
use twinmig::config::AttackScenario;
use twinmig::Config;

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let mut cfg = Config::desk();
    cfg.attack.scenario = AttackScenario::Hybrid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = schedule_attacks(&cfg.attack, cfg.world.slots_per_episode, cfg.world.servers, &mut rng);
    eprintln!("{} attacks over {} slots", events.len(), cfg.world.slots_per_episode);
    write_schedule_csv(&events, std::io::stdout())?;
    Ok(())
}
