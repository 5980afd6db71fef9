//! Trainer invariants and hand-computed loss examples.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twinmig::config::{Config, Precision};
use twinmig::diffusion::{process, ActionLayout, ChainNoise};
use twinmig::grad::{Activation, DenseNet};
use twinmig::trainer::{Agent, Batch, ReplayBuffer, Transition};

fn small_config(servers: usize) -> Config {
    let mut c = Config::desk();
    c.world.vehicles = 1;
    c.world.servers = servers;
    c.world.satellites = 0;
    c.diffusion.steps = 2;
    c.diffusion.hidden = vec![6];
    c.trainer.critic_hidden = vec![6];
    c.trainer.precision = Precision::F64;
    c
}

fn transition(layout: &ActionLayout, obs_dim: usize, reward: f64) -> Transition {
    let mut encoding = vec![0.0; layout.width()];
    encoding[0] = 1.0;
    encoding[layout.pre_start(0)] = 1.0;
    encoding[layout.fraction_index(0)] = 0.4;
    Transition {
        obs: vec![0.2; obs_dim],
        next_obs: vec![0.3; obs_dim],
        encoding,
        keep: vec![true; layout.width()],
        next_keep: vec![true; layout.width()],
        reward,
        terminal: false,
    }
}

fn batch_of(t: &Transition, layout: &ActionLayout) -> Batch<f64> {
    Batch::from_transitions(&[t], layout).unwrap()
}

/// Zeroes a network and then writes `bias` into its output-layer bias.
fn constant_output(net: &mut DenseNet<f64>, bias: &[f64]) {
    net.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let dims = net.dims().to_vec();
    let last = dims.len() - 2;
    let start = net.layer_offset(last) + dims[last] * dims[last + 1];
    net.params_mut()[start..start + bias.len()].copy_from_slice(bias);
}

#[test]
fn actor_loss_is_zero_when_q_is_zero() {
    let cfg = small_config(4);
    let mut agent = Agent::<f64>::new(&cfg, 3, 0).unwrap();
    let w = agent.layout().width();
    for c in &mut agent.critics {
        constant_output(c, &vec![0.0; w]);
    }
    let b = batch_of(&transition(&agent.layout(), 3, 0.0), &agent.layout());
    let noise = ChainNoise::draw(1, w, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let (loss, _) = agent.actor_loss(&b, &noise).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn actor_loss_of_uniform_policy_is_negative_mean_q() {
    let cfg = small_config(4);
    let mut agent = Agent::<f64>::new(&cfg, 3, 0).unwrap();
    let layout = agent.layout();
    // A zero actor net and zero chain noise keep every logit at 0, so each
    // server block is uniform.
    agent.actor.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let mut q = vec![0.0; layout.width()];
    q[..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
    for c in &mut agent.critics {
        constant_output(c, &q);
    }
    let b = batch_of(&transition(&layout, 3, 0.0), &layout);
    let (loss, _) = agent.actor_loss(&b, &ChainNoise::zeros(1, layout.width(), 2)).unwrap();
    assert!((loss + 2.5).abs() < 1e-12, "loss {loss}");
}

#[test]
fn critic_target_discounts_the_next_value() {
    let mut cfg = small_config(2);
    cfg.trainer.gamma = 0.95;
    let mut agent = Agent::<f64>::new(&cfg, 3, 0).unwrap();
    let layout = agent.layout();
    agent.target_actor.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
    // The zero target actor emits two uniform blocks and K = 0.5; a constant
    // 0.8 per entry then contracts to 0.8 * 2.5 = 2.
    for c in &mut agent.target_critics {
        constant_output(c, &vec![0.8; layout.width()]);
    }
    let b = batch_of(&transition(&layout, 3, 1.0), &layout);
    let t = agent.critic_targets(&b, &ChainNoise::zeros(1, layout.width(), 2)).unwrap();
    assert!((t[0] - 2.9).abs() < 1e-12, "target {}", t[0]);
}

#[test]
fn critic_target_uses_the_smaller_critic() {
    let cfg = small_config(2);
    let mut agent = Agent::<f64>::new(&cfg, 3, 0).unwrap();
    let layout = agent.layout();
    agent.target_actor.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
    constant_output(&mut agent.target_critics[0], &vec![0.8; layout.width()]);
    constant_output(&mut agent.target_critics[1], &vec![-0.4; layout.width()]);
    let b = batch_of(&transition(&layout, 3, 0.0), &layout);
    let t = agent.critic_targets(&b, &ChainNoise::zeros(1, layout.width(), 2)).unwrap();
    let want = cfg.trainer.gamma * -0.4 * 2.5;
    assert!((t[0] - want).abs() < 1e-12);
}

#[test]
fn soft_update_examples() {
    let dims = [1, 1];
    let mut target = DenseNet::<f64>::zeros(&dims, vec![Activation::Identity]).unwrap();
    let mut online = target.clone();
    online.params_mut().iter_mut().for_each(|p| *p = 1.0);
    target.soft_update_from(&online, 0.005).unwrap();
    assert!(target.params().iter().all(|&p| (p - 0.005).abs() < 1e-15));
    target.soft_update_from(&online, 1.0).unwrap();
    assert!(target.params().iter().all(|&p| p == 1.0));
    let before = target.params().to_vec();
    online.params_mut().iter_mut().for_each(|p| *p = -3.0);
    target.soft_update_from(&online, 0.0).unwrap();
    assert_eq!(target.params(), &before[..]);
}

#[test]
fn train_step_leaves_targets_behind_online_networks() {
    let cfg = small_config(3);
    let mut agent = Agent::<f64>::new(&cfg, 3, 4).unwrap();
    let layout = agent.layout();
    let items: Vec<Transition> = (0..4).map(|i| transition(&layout, 3, i as f64)).collect();
    let refs: Vec<&Transition> = items.iter().collect();
    let b = Batch::from_transitions(&refs, &layout).unwrap();
    agent.update(&b, &mut ChaCha8Rng::seed_from_u64(0), 0).unwrap();
    assert_ne!(agent.actor.net.params(), agent.target_actor.net.params());
    for i in 0..2 {
        assert_ne!(agent.critics[i].params(), agent.target_critics[i].params());
    }
}

proptest! {
    #[test]
    fn soft_update_matches_geometric_closed_form(
        tau in 0.0f64..1.0,
        n in 1usize..60,
        online in -5.0f64..5.0,
        start in -5.0f64..5.0,
    ) {
        let dims = [1, 1];
        let mut target = DenseNet::<f64>::zeros(&dims, vec![Activation::Identity]).unwrap();
        target.params_mut().iter_mut().for_each(|p| *p = start);
        let mut src = target.clone();
        src.params_mut().iter_mut().for_each(|p| *p = online);
        for _ in 0..n {
            target.soft_update_from(&src, tau).unwrap();
        }
        let keep = (1.0 - tau).powi(n as i32);
        let want = (1.0 - keep) * online + keep * start;
        for &p in target.params() {
            prop_assert!((p - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn replay_buffer_keeps_the_newest_in_order(cap in 1usize..40, pushes in 0usize..120) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..pushes {
            buf.push(i);
        }
        let kept = pushes.min(cap);
        prop_assert_eq!(buf.len(), kept);
        for j in 0..kept {
            prop_assert_eq!(*buf.get(j).unwrap(), pushes - kept + j);
        }
    }

    #[test]
    fn replay_samples_come_from_the_buffer(cap in 1usize..30, pushes in 1usize..60, n in 0usize..50, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..pushes {
            buf.push(i);
        }
        let lo = pushes.saturating_sub(cap);
        let picks = buf.sample(n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(picks.len(), n);
        prop_assert!(picks.iter().all(|&&v| v >= lo && v < pushes));
    }

    #[test]
    fn processed_distribution_is_valid(
        vehicles in 1usize..4,
        servers in 1usize..6,
        raw_seed in any::<u64>(),
        mask_bits in any::<u64>(),
    ) {
        let layout = ActionLayout::new(vehicles, servers);
        let mut rng = ChaCha8Rng::seed_from_u64(raw_seed);
        let raw: Vec<f64> = (0..layout.width()).map(|_| 20.0 * (rand::Rng::random::<f64>(&mut rng) - 0.5)).collect();
        let masks: Vec<Vec<bool>> = (0..vehicles)
            .map(|v| (0..servers).map(|s| (mask_bits >> ((v * servers + s) % 64)) & 1 == 1).collect())
            .collect();
        let keep = layout.keep_mask(&masks);
        let out = process(&layout, &raw, &keep, -1e9);
        for v in 0..vehicles {
            let any = masks[v].iter().any(|&m| m);
            for start in [layout.current_start(v), layout.pre_start(v)] {
                let block = &out[start..start + servers];
                prop_assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                if any {
                    for (s, &p) in block.iter().enumerate() {
                        if !masks[v][s] {
                            prop_assert!(p < 1e-12);
                        }
                    }
                }
            }
            let k = out[layout.fraction_index(v)];
            prop_assert!((0.0..=1.0).contains(&k));
        }
    }
}
