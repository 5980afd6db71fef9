//! Training loop, deterministic evaluation and run outputs.
//!
//! Each epoch collects a fixed number of train-mode transitions, then takes
//! gradient steps on uniformly sampled minibatches once the buffer holds a
//! full batch. Evaluation replays fixed episode seeds with argmax servers.

pub mod agent;
pub mod buffer;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use agent::{critic_dims, derive_seed, Agent, UpdateStats};
pub use buffer::{Batch, ReplayBuffer, Transition};

use crate::baselines::{apply_variant, random_action, PolicyVariant};
use crate::config::{Config, Precision};
use crate::diffusion::{ActionLayout, DiffusionActor, Mode};
use crate::env::{Executed, HybridAction, MigrationEnv, StepResult};
use crate::error::{Error, Result};
use crate::grad::{Checkpoint, NetRecord, Real};
use crate::world::{build_scenario, World};

/// First line of every metrics CSV.
pub const METRICS_SCHEMA: &str = "# schema=twinmig.metrics/1";

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.bin";
pub const DIVERGED_CHECKPOINT: &str = "diverged.bin";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_reward_mean: f64,
    pub eval_reward_mean: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub mean_selected_reputation: Option<f64>,
    pub mean_latency: Option<f64>,
    pub violation_count: usize,
}

/// Appends metric rows to a CSV file under the versioned schema line.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{METRICS_SCHEMA}").map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn write(&mut self, row: &EpochMetrics) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(self.inner.flush().map_err(|e| Error::io("metrics", e))?)
    }
}

/// The world a run with `seed` trains and evaluates in.
pub fn scenario_for(cfg: &Config, seed: u64) -> Result<World> {
    let mut c = cfg.clone();
    c.world.seed = seed;
    build_scenario(&c)
}

/// A trained actor in either precision.
#[derive(Debug, Clone)]
pub enum AnyActor {
    F32(DiffusionActor<f32>),
    F64(DiffusionActor<f64>),
}

impl AnyActor {
    pub fn layout(&self) -> ActionLayout {
        match self {
            AnyActor::F32(a) => a.layout,
            AnyActor::F64(a) => a.layout,
        }
    }

    pub fn generate(
        &self,
        obs: &[f64],
        masks: &[Vec<bool>],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<crate::diffusion::PolicyOutput> {
        match self {
            AnyActor::F32(a) => a.generate(obs, masks, mode, rng),
            AnyActor::F64(a) => a.generate(obs, masks, mode, rng),
        }
    }

    /// Rebuilds the `actor` network from a checkpoint.
    pub fn from_checkpoint(cfg: &Config, ckpt: &Checkpoint) -> Result<Self> {
        let layout = ActionLayout::new(cfg.world.vehicles, cfg.world.servers);
        let obs_dim = crate::env::observation_len(cfg.world.vehicles, cfg.world.servers);
        let record = ckpt.net("actor")?;
        Ok(match ckpt.precision {
            Precision::F32 => {
                let a = DiffusionActor::<f32>::new(&cfg.diffusion, layout, obs_dim, record.seed)?;
                AnyActor::F32(a.with_net(record.to_net()?)?)
            }
            Precision::F64 => {
                let a = DiffusionActor::<f64>::new(&cfg.diffusion, layout, obs_dim, record.seed)?;
                AnyActor::F64(a.with_net(record.to_net()?)?)
            }
        })
    }
}

/// What chooses actions during evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    Random,
    Learned { variant: PolicyVariant, actor: AnyActor },
}

impl Policy {
    pub fn variant(&self) -> PolicyVariant {
        match self {
            Policy::Random => PolicyVariant::Random,
            Policy::Learned { variant, .. } => *variant,
        }
    }

    pub fn act(&self, obs: &[f64], masks: &[Vec<bool>], mode: Mode, rng: &mut ChaCha8Rng) -> Result<HybridAction> {
        match self {
            Policy::Random => Ok(random_action(masks, rng)),
            Policy::Learned { variant, actor } => {
                let mut action = actor.generate(obs, masks, mode, rng)?.action;
                apply_variant(*variant, &mut action);
                Ok(action)
            }
        }
    }
}

/// Running sums over environment steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTally {
    pub steps: usize,
    pub reward: f64,
    reputation_sum: f64,
    reputation_n: usize,
    latency_sum: f64,
    latency_n: usize,
    pub violations: usize,
}

impl StepTally {
    /// `reputations` are the ones in force when the action was chosen.
    pub fn record(&mut self, result: &StepResult, reputations: &[f64]) {
        self.steps += 1;
        self.reward += result.reward;
        self.violations += result.violations;
        if let Some(r) = result.selected_reputation(reputations) {
            self.reputation_sum += r;
            self.reputation_n += 1;
        }
        if let Some(l) = result.mean_latency() {
            self.latency_sum += l;
            self.latency_n += 1;
        }
    }

    pub fn reward_mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.reward / self.steps as f64
        }
    }

    pub fn reputation_mean(&self) -> Option<f64> {
        (self.reputation_n > 0).then(|| self.reputation_sum / self.reputation_n as f64)
    }

    pub fn latency_mean(&self) -> Option<f64> {
        (self.latency_n > 0).then(|| self.latency_sum / self.latency_n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Mean per-slot reward.
    pub reward_mean: f64,
    pub latency_mean: Option<f64>,
    pub reputation_mean: Option<f64>,
    pub violations: usize,
    pub steps: usize,
}

impl From<StepTally> for EvalSummary {
    fn from(t: StepTally) -> Self {
        EvalSummary {
            reward_mean: t.reward_mean(),
            latency_mean: t.latency_mean(),
            reputation_mean: t.reputation_mean(),
            violations: t.violations,
            steps: t.steps,
        }
    }
}

/// Runs `episodes` eval-mode episodes with fixed seeds derived from
/// `eval_seed`. Each episode draws its own tasks and attack schedule.
pub fn evaluate(policy: &Policy, world: &World, episodes: usize, eval_seed: u64) -> Result<EvalSummary> {
    let mut env = MigrationEnv::new(world.clone());
    let mut tally = StepTally::default();
    for ep in 0..episodes as u64 {
        let mut obs = env.reset(derive_seed(eval_seed, ep));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(eval_seed ^ 0x5EED, ep));
        while !env.is_done() {
            let reps = env.reputations();
            let action = policy.act(&obs, &env.masks(), Mode::Eval, &mut rng)?;
            let result = env.step(&action)?;
            tally.record(&result, &reps);
            obs = result.observation;
        }
    }
    Ok(tally.into())
}

/// The action as executed: repaired servers, clamped fraction. Dropped
/// vehicles keep the proposal.
pub fn executed_action(proposed: &HybridAction, result: &StepResult) -> HybridAction {
    HybridAction(
        proposed
            .0
            .iter()
            .zip(&result.executed)
            .map(|(p, e)| match e {
                Executed::Served { action, .. } => *action,
                Executed::Dropped => crate::env::VehicleAction {
                    pre_fraction: p.pre_fraction.clamp(0.0, 1.0),
                    ..*p
                },
            })
            .collect(),
    )
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub variant: PolicyVariant,
    pub seed: u64,
    pub world: World,
    pub policy: Policy,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|m| m.eval_reward_mean)
    }
}

fn bundle<F: Real>(agent: &Agent<F>, seed: u64, epoch: usize) -> Checkpoint {
    Checkpoint {
        precision: if F::NAME == "f32" { Precision::F32 } else { Precision::F64 },
        seed,
        epoch: epoch as u64,
        nets: vec![
            NetRecord::of("actor", &agent.actor.net),
            NetRecord::of("target_actor", &agent.target_actor.net),
            NetRecord::of("critic1", &agent.critics[0]),
            NetRecord::of("critic2", &agent.critics[1]),
            NetRecord::of("target_critic1", &agent.target_critics[0]),
            NetRecord::of("target_critic2", &agent.target_critics[1]),
        ],
    }
}

/// Trains `variant` with run seed `seed`, which also seeds the scenario.
/// With `out_dir` set, writes the metrics CSV and checkpoints there.
/// `progress` sees every epoch row as it is produced.
pub fn train(
    cfg: &Config,
    variant: PolicyVariant,
    seed: u64,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.trainer.precision {
        Precision::F32 => train_in::<f32>(cfg, variant, seed, out_dir, progress, AnyActor::F32),
        Precision::F64 => train_in::<f64>(cfg, variant, seed, out_dir, progress, AnyActor::F64),
    }
}

fn train_in<F: Real>(
    cfg: &Config,
    variant: PolicyVariant,
    seed: u64,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochMetrics),
    wrap: fn(DiffusionActor<F>) -> AnyActor,
) -> Result<TrainOutcome> {
    let tr = &cfg.trainer;
    let world = scenario_for(cfg, seed)?;
    let mut env = MigrationEnv::new(world.clone());
    let layout = ActionLayout::new(cfg.world.vehicles, cfg.world.servers);
    let mut agent = Agent::<F>::new(cfg, env.observation_len(), seed)?;
    let mut buffer = ReplayBuffer::new(tr.buffer_capacity);
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11));
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12));

    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(MetricsWriter::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let mut metrics = Vec::with_capacity(tr.epochs);

    let mut episode = 0u64;
    let mut obs = env.reset(derive_seed(seed, 1_000_000));
    for epoch in 1..=tr.epochs {
        let policy = current_policy(variant, &agent, wrap);
        let mut tally = StepTally::default();
        for _ in 0..tr.transitions_per_epoch {
            let masks = env.masks();
            let reps = env.reputations();
            let action = policy.act(&obs, &masks, Mode::Train, &mut act_rng)?;
            let result = env.step(&action)?;
            tally.record(&result, &reps);
            if variant.is_learned() {
                buffer.push(Transition {
                    obs: std::mem::take(&mut obs),
                    next_obs: result.observation.clone(),
                    encoding: layout.encode(&executed_action(&action, &result)),
                    keep: layout.keep_mask(&masks),
                    next_keep: layout.keep_mask(&env.masks()),
                    reward: result.reward * tr.reward_scale,
                    terminal: result.terminal,
                });
            }
            obs = if result.terminal {
                episode += 1;
                env.reset(derive_seed(seed, 1_000_000 + episode))
            } else {
                result.observation
            };
        }

        let mut stats: Option<UpdateStats> = None;
        if variant.is_learned() && buffer.len() >= tr.batch_size {
            let mut sum = UpdateStats::default();
            for _ in 0..tr.updates_per_epoch {
                let items = buffer.sample(tr.batch_size, &mut sample_rng);
                let batch = Batch::<F>::from_transitions(&items, &layout)?;
                match agent.update(&batch, &mut update_rng, epoch) {
                    Ok(s) => {
                        sum.actor_loss += s.actor_loss / tr.updates_per_epoch as f64;
                        sum.critic_loss += s.critic_loss / tr.updates_per_epoch as f64;
                    }
                    Err(e @ Error::Divergence { .. }) => {
                        if let Some(dir) = out_dir {
                            bundle(&agent, seed, epoch).save(&dir.join(DIVERGED_CHECKPOINT))?;
                        }
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            stats = Some(sum);
        }

        let eval_reward_mean = if epoch % tr.eval_interval.max(1) == 0 || epoch == tr.epochs {
            let policy = current_policy(variant, &agent, wrap);
            Some(evaluate(&policy, &world, tr.eval_episodes, tr.eval_seed)?.reward_mean)
        } else {
            None
        };
        let row = EpochMetrics {
            epoch,
            train_reward_mean: tally.reward_mean(),
            eval_reward_mean,
            actor_loss: stats.map(|s| s.actor_loss),
            critic_loss: stats.map(|s| s.critic_loss),
            mean_selected_reputation: tally.reputation_mean(),
            mean_latency: tally.latency_mean(),
            violation_count: tally.violations,
        };
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        progress(&row);
        metrics.push(row);

        if let Some(dir) = out_dir {
            if variant.is_learned() && tr.checkpoint_interval > 0 && epoch % tr.checkpoint_interval == 0 {
                let path = dir.join(format!("epoch_{epoch:06}.bin"));
                bundle(&agent, seed, epoch).save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        if variant.is_learned() {
            let path = dir.join(FINAL_CHECKPOINT);
            bundle(&agent, seed, tr.epochs).save(&path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome {
        variant,
        seed,
        world,
        policy: current_policy(variant, &agent, wrap),
        metrics,
        checkpoints,
    })
}

fn current_policy<F: Real>(variant: PolicyVariant, agent: &Agent<F>, wrap: fn(DiffusionActor<F>) -> AnyActor) -> Policy {
    if variant.is_learned() {
        Policy::Learned {
            variant,
            actor: wrap(agent.actor.clone()),
        }
    } else {
        Policy::Random
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Config {
        let mut c = Config::desk();
        c.world.vehicles = 2;
        c.world.servers = 3;
        c.world.satellites = 1;
        c.world.slots_per_episode = 5;
        c.diffusion.hidden = vec![16];
        c.trainer.critic_hidden = vec![16];
        c.trainer.epochs = 3;
        c.trainer.transitions_per_epoch = 8;
        c.trainer.batch_size = 8;
        c.trainer.eval_interval = 2;
        c.trainer.eval_episodes = 1;
        c.trainer.checkpoint_interval = 2;
        c
    }

    #[test]
    fn zero_epochs_returns_the_initial_actor() {
        let mut c = tiny();
        c.trainer.epochs = 0;
        let out = train(&c, PolicyVariant::HybridGdm, 4, None, &mut |_| {}).unwrap();
        assert!(out.metrics.is_empty());
        let fresh = Agent::<f32>::new(&c, crate::env::observation_len(2, 3), 4).unwrap();
        match out.policy {
            Policy::Learned {
                actor: AnyActor::F32(a),
                ..
            } => assert_eq!(a.net.params(), fresh.actor.net.params()),
            _ => panic!("expected an f32 actor"),
        }
    }

    #[test]
    fn metrics_and_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(), PolicyVariant::HybridGdm, 1, Some(dir.path()), &mut |_| {}).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert!(out.metrics[0].actor_loss.is_some());
        assert!(out.metrics[0].eval_reward_mean.is_none());
        assert!(out.metrics[1].eval_reward_mean.is_some());
        assert!(out.metrics[2].eval_reward_mean.is_some());
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_SCHEMA));
        assert_eq!(
            lines.next(),
            Some(
                "epoch,train_reward_mean,eval_reward_mean,actor_loss,critic_loss,\
                 mean_selected_reputation,mean_latency,violation_count"
            )
        );
        assert_eq!(lines.count(), 3);
        assert!(dir.path().join("epoch_000002.bin").exists());
        let ck = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(ck.epoch, 3);
        assert_eq!(ck.nets.len(), 6);
        let actor = AnyActor::from_checkpoint(&tiny(), &ck).unwrap();
        let a = evaluate(
            &Policy::Learned {
                variant: PolicyVariant::HybridGdm,
                actor,
            },
            &out.world,
            1,
            9,
        )
        .unwrap();
        let b = evaluate(&out.policy, &out.world, 1, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeat_runs_are_identical() {
        let a = train(&tiny(), PolicyVariant::NoPre, 2, None, &mut |_| {}).unwrap();
        let b = train(&tiny(), PolicyVariant::NoPre, 2, None, &mut |_| {}).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn random_variant_has_no_losses() {
        let out = train(&tiny(), PolicyVariant::Random, 0, None, &mut |_| {}).unwrap();
        assert!(out.metrics.iter().all(|m| m.actor_loss.is_none()));
        assert!(matches!(out.policy, Policy::Random));
    }
}
