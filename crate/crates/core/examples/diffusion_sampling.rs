//! Samples hybrid actions from an untrained diffusion actor and shows the
//! processed distribution: a server softmax per role and a fraction in [0, 1].
//!
//! Usage: `cargo run --release --example diffusion_sampling`

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twinmig::diffusion::{ActionLayout, DiffusionActor, Mode};
use twinmig::env::MigrationEnv;
use twinmig::trainer::scenario_for;
use twinmig::Config;

fn main() -> Result<()> {
    let cfg = Config::desk();
    let mut env = MigrationEnv::new(scenario_for(&cfg, 0)?);
    let obs = env.reset(0);
    let layout = ActionLayout::new(cfg.world.vehicles, cfg.world.servers);
    let actor = DiffusionActor::<f64>::new(&cfg.diffusion, layout, obs.len(), 0)?;
    let masks = env.masks();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for draw in 0..3 {
        let out = actor.generate(&obs, &masks, Mode::Train, &mut rng)?;
        println!("draw {draw}");
        for v in 0..layout.vehicles {
            let fmt = |start: usize| {
                out.distribution[start..start + layout.servers]
                    .iter()
                    .map(|p| format!("{p:.2}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let a = out.action.0[v];
            println!(
                "  vehicle {v}: feasible {:?}\n    current [{}] -> {}\n    pre     [{}] -> {}\n    K {:.3}",
                masks[v].iter().map(|&m| u8::from(m)).collect::<Vec<_>>(),
                fmt(layout.current_start(v)),
                a.current,
                fmt(layout.pre_start(v)),
                a.pre,
                a.pre_fraction
            );
        }
    }
    Ok(())
}
