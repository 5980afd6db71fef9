//! Diffusion actor with a clipped double critic.
//!
//! Each critic maps `[observation, fractions]` to one value per entry of the
//! composite action layout. The value of an executed action is the row
//! contraction of that vector with the action's encoding; the value of a
//! policy is its contraction with the policy's processed distribution.

use rand_chacha::ChaCha8Rng;

use crate::config::{ActorQGradient, Config};
use crate::diffusion::{ActionLayout, ChainNoise, DiffusionActor};
use crate::error::{Error, Result};
use crate::grad::{Activation, Adam, DenseNet, Matrix, Real, Tape, Var};
use crate::trainer::buffer::Batch;

/// SplitMix64 finalizer over `base` and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Agent<F: Real> {
    pub actor: DiffusionActor<F>,
    pub target_actor: DiffusionActor<F>,
    pub critics: [DenseNet<F>; 2],
    pub target_critics: [DenseNet<F>; 2],
    actor_opt: Adam<F>,
    critic_opts: [Adam<F>; 2],
    gamma: F,
    tau: F,
    q_gradient: ActorQGradient,
    updates: u64,
}

/// Critic input `[observation, fractions]`.
pub fn critic_dims(cfg: &Config, obs_dim: usize, layout: &ActionLayout) -> Vec<usize> {
    let mut dims = vec![obs_dim + layout.vehicles];
    dims.extend(&cfg.trainer.critic_hidden);
    dims.push(layout.width());
    dims
}

impl<F: Real> Agent<F> {
    pub fn new(cfg: &Config, obs_dim: usize, seed: u64) -> Result<Self> {
        let layout = ActionLayout::new(cfg.world.vehicles, cfg.world.servers);
        let actor = DiffusionActor::new(&cfg.diffusion, layout, obs_dim, derive_seed(seed, 1))?;
        let dims = critic_dims(cfg, obs_dim, &layout);
        let critic = |stream| DenseNet::new(&dims, Activation::Silu, Activation::Identity, derive_seed(seed, stream));
        let critics = [critic(2)?, critic(3)?];
        let tr = &cfg.trainer;
        Ok(Agent {
            actor_opt: Adam::new(tr.actor_lr, actor.net.param_count()),
            critic_opts: [
                Adam::new(tr.critic_lr, critics[0].param_count()),
                Adam::new(tr.critic_lr, critics[1].param_count()),
            ],
            target_actor: actor.clone(),
            target_critics: critics.clone(),
            actor,
            critics,
            gamma: F::of(tr.gamma),
            tau: F::of(tr.tau),
            q_gradient: tr.actor_q_gradient,
            updates: 0,
        })
    }

    pub fn layout(&self) -> ActionLayout {
        self.actor.layout
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn fraction_columns(&self, dist: &Matrix<F>) -> Matrix<F> {
        let l = self.layout();
        let mut out = Matrix::zeros(dist.rows(), l.vehicles);
        for r in 0..dist.rows() {
            for v in 0..l.vehicles {
                out.set(r, v, dist.get(r, l.fraction_index(v)));
            }
        }
        out
    }

    /// Bootstrapped targets `r + gamma (1 - done) <pi', min(Q1', Q2')>` from
    /// the target networks, with `noise` driving the target actor's chain.
    pub fn critic_targets(&self, batch: &Batch<F>, noise: &ChainNoise<F>) -> Result<Vec<F>> {
        let dist = self.target_actor.distribution(&batch.next_obs, &batch.next_keep, noise)?;
        let input = Matrix::hcat(&[&batch.next_obs, &self.fraction_columns(&dist)])?;
        let q1 = self.target_critics[0].forward(&input)?;
        let q2 = self.target_critics[1].forward(&input)?;
        let mut out = Vec::with_capacity(batch.len());
        for r in 0..batch.len() {
            let value: F = (0..dist.cols())
                .map(|c| dist.get(r, c) * q1.get(r, c).min(q2.get(r, c)))
                .sum();
            let cont = if batch.terminals[r] { F::zero() } else { self.gamma };
            out.push(batch.rewards[r] + cont * value);
        }
        Ok(out)
    }

    /// Mean squared error of critic `i` against `targets`, with its gradient.
    pub fn critic_loss(&self, i: usize, batch: &Batch<F>, targets: &[F]) -> Result<(F, Vec<F>)> {
        let critic = self
            .critics
            .get(i)
            .ok_or_else(|| Error::Contract(format!("critic index {i} out of range")))?;
        if targets.len() != batch.len() {
            return Err(Error::Contract("one target per batch row is required".into()));
        }
        let mut tape = Tape::new();
        let p = tape.params(critic.params(), true);
        let input = tape.constant(Matrix::hcat(&[&batch.obs, &batch.fractions])?);
        let q = critic.forward_tape(&mut tape, p, input)?;
        let enc = tape.constant(batch.encoding.clone());
        let picked = tape.mul(q, enc)?;
        let y = tape.row_sum(picked);
        let t = tape.constant(Matrix::from_vec(targets.len(), 1, targets.to_vec())?);
        let diff = tape.sub(y, t)?;
        let sq = tape.square(diff);
        let total = tape.sum(sq);
        let loss = tape.scale(total, F::one() / F::of(batch.len() as f64));
        let mut grads = tape.backward(loss)?;
        Ok((tape.value(loss).get(0, 0), grads.take_param(p)))
    }

    fn fraction_vars(&self, tape: &mut Tape<'_, F>, dist: Var) -> Result<Var> {
        let l = self.layout();
        let cols = (0..l.vehicles)
            .map(|v| tape.columns(dist, l.fraction_index(v), 1))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&cols)
    }

    /// `-mean_b <pi(s_b), min(Q1, Q2)(s_b, K_pi)>` through every denoising
    /// step, with its gradient for the actor parameters.
    pub fn actor_loss(&self, batch: &Batch<F>, noise: &ChainNoise<F>) -> Result<(F, Vec<F>)> {
        let mut tape = Tape::new();
        let pa = tape.params(self.actor.net.params(), true);
        let pc = [
            tape.params(self.critics[0].params(), false),
            tape.params(self.critics[1].params(), false),
        ];
        let obs = tape.constant(batch.obs.clone());
        let dist = self.actor.distribution_tape(&mut tape, pa, obs, batch.keep.clone(), noise)?;
        let q = match self.q_gradient {
            ActorQGradient::ThroughCritic => {
                let fractions = self.fraction_vars(&mut tape, dist)?;
                let input = tape.concat(&[obs, fractions])?;
                let q1 = self.critics[0].forward_tape(&mut tape, pc[0], input)?;
                let q2 = self.critics[1].forward_tape(&mut tape, pc[1], input)?;
                tape.min(q1, q2)?
            }
            ActorQGradient::Detached => {
                let fractions = self.fraction_columns(tape.value(dist));
                let input = Matrix::hcat(&[&batch.obs, &fractions])?;
                let q1 = self.critics[0].forward(&input)?;
                let q2 = self.critics[1].forward(&input)?;
                tape.constant(q1.zip_map(&q2, |a, b| if a <= b { a } else { b }))
            }
        };
        let weighted = tape.mul(dist, q)?;
        let total = tape.sum(weighted);
        let loss = tape.scale(total, -F::one() / F::of(batch.len() as f64));
        let mut grads = tape.backward(loss)?;
        Ok((tape.value(loss).get(0, 0), grads.take_param(pa)))
    }

    /// One actor step, one step per critic toward shared targets, then a
    /// soft update of every target network.
    pub fn update(&mut self, batch: &Batch<F>, rng: &mut ChaCha8Rng, epoch: usize) -> Result<UpdateStats> {
        let (rows, w, steps) = (batch.len(), self.layout().width(), self.actor.schedule.steps());
        let target_noise = ChainNoise::draw(rows, w, steps, rng);
        let targets = self.critic_targets(batch, &target_noise)?;
        let actor_noise = ChainNoise::draw(rows, w, steps, rng);
        let (actor_loss, grad) = self.actor_loss(batch, &actor_noise)?;
        check_finite(epoch, "actor loss", actor_loss, &grad)?;
        self.actor_opt.step(self.actor.net.params_mut(), &grad)?;
        let mut critic_loss = 0.0;
        for i in 0..2 {
            let (loss, grad) = self.critic_loss(i, batch, &targets)?;
            check_finite(epoch, "critic loss", loss, &grad)?;
            self.critic_opts[i].step(self.critics[i].params_mut(), &grad)?;
            critic_loss += loss.as_f64() / 2.0;
        }

        self.target_actor.net.soft_update_from(&self.actor.net, self.tau)?;
        for i in 0..2 {
            self.target_critics[i].soft_update_from(&self.critics[i], self.tau)?;
        }
        self.updates += 1;
        Ok(UpdateStats {
            actor_loss: actor_loss.as_f64(),
            critic_loss,
        })
    }
}

fn check_finite<F: Real>(epoch: usize, what: &str, loss: F, grad: &[F]) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch,
            detail: format!("{what} is {loss}"),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch,
            detail: format!("{what} gradient has non-finite entries"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::buffer::Transition;
    use rand::SeedableRng;

    fn tiny() -> Config {
        let mut c = Config::desk();
        c.world.vehicles = 1;
        c.world.servers = 2;
        c.world.satellites = 0;
        c.diffusion.steps = 2;
        c.diffusion.hidden = vec![8];
        c.trainer.critic_hidden = vec![8];
        c
    }

    fn batch(layout: &ActionLayout, obs_dim: usize, rows: usize) -> Batch<f64> {
        let ts: Vec<Transition> = (0..rows)
            .map(|r| Transition {
                obs: (0..obs_dim).map(|i| ((r * 7 + i) % 5) as f64 / 5.0).collect(),
                next_obs: (0..obs_dim).map(|i| ((r * 3 + i) % 4) as f64 / 4.0).collect(),
                encoding: {
                    let mut e = vec![0.0; layout.width()];
                    e[r % 2] = 1.0;
                    e[layout.pre_start(0) + (r + 1) % 2] = 1.0;
                    e[layout.fraction_index(0)] = 0.3;
                    e
                },
                keep: vec![true; layout.width()],
                next_keep: vec![true; layout.width()],
                reward: r as f64 - 1.0,
                terminal: r == 2,
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        Batch::from_transitions(&refs, layout).unwrap()
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }

    #[test]
    fn terminal_rows_target_the_reward() {
        let cfg = tiny();
        let agent = Agent::<f64>::new(&cfg, 6, 0).unwrap();
        let b = batch(&agent.layout(), 6, 4);
        let noise = ChainNoise::zeros(4, agent.layout().width(), 2);
        let t = agent.critic_targets(&b, &noise).unwrap();
        assert_eq!(t[2], b.rewards[2]);
        assert_ne!(t[0], b.rewards[0]);
    }

    #[test]
    fn update_moves_parameters_and_targets_slowly() {
        let cfg = tiny();
        let mut agent = Agent::<f64>::new(&cfg, 6, 0).unwrap();
        let before = agent.actor.net.params().to_vec();
        let b = batch(&agent.layout(), 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = agent.update(&b, &mut rng, 0).unwrap();
        assert!(s.actor_loss.is_finite() && s.critic_loss >= 0.0);
        let after = agent.actor.net.params();
        assert!(before.iter().zip(after).any(|(a, b)| a != b));
        let moved: f64 = agent.target_actor.net.params().iter().zip(&before).map(|(a, b)| (a - b).abs()).sum();
        let online: f64 = after.iter().zip(&before).map(|(a, b)| (a - b).abs()).sum();
        assert!(moved < online);
    }

    #[test]
    fn detached_mode_gives_a_different_gradient() {
        let mut cfg = tiny();
        let a = Agent::<f64>::new(&cfg, 6, 0).unwrap();
        cfg.trainer.actor_q_gradient = ActorQGradient::Detached;
        let d = Agent::<f64>::new(&cfg, 6, 0).unwrap();
        let b = batch(&a.layout(), 6, 3);
        let noise = ChainNoise::draw(3, a.layout().width(), 2, &mut ChaCha8Rng::seed_from_u64(3));
        let (la, ga) = a.actor_loss(&b, &noise).unwrap();
        let (ld, gd) = d.actor_loss(&b, &noise).unwrap();
        assert_eq!(la, ld);
        assert_ne!(ga, gd);
    }
}
