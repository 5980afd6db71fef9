//! Run orchestration: manifests, training runs, evaluation traces and
//! parameter sweeps.
//!
//! Output layout of a training run under `out`:
//!
//! ```text
//! manifest.toml            written before any training
//! completion.toml          written once every seed has finished
//! seed_<n>/metrics.csv     one row per epoch
//! seed_<n>/epoch_*.bin     periodic checkpoints
//! seed_<n>/final.bin       final checkpoint
//! seed_<n>/attacks.csv     attack schedule of the first training episode
//! ```
//!
//! Every CSV starts with a `# schema=...` line naming its versioned layout.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::write_schedule_csv;
use crate::baselines::PolicyVariant;
use crate::config::{AttackScenario, Config, Span};
use crate::diffusion::Mode;
use crate::env::{Executed, MigrationEnv};
use crate::error::{Error, Result};
use crate::grad::Checkpoint;
use crate::trainer::{derive_seed, evaluate, scenario_for, train, AnyActor, EvalSummary, Policy, FINAL_CHECKPOINT};
use crate::world::World;

pub const SWEEP_SCHEMA: &str = "# schema=twinmig.sweep/1";
pub const EVAL_SCHEMA: &str = "# schema=twinmig.eval/1";
pub const SLOTS_SCHEMA: &str = "# schema=twinmig.slots/1";
pub const REPUTATION_SCHEMA: &str = "# schema=twinmig.reputation/1";
pub const ATTACKS_SCHEMA: &str = "# schema=twinmig.attacks/1";

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const COMPLETION_FILE: &str = "completion.toml";

/// Written once, before any work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started_at: String,
    pub variants: Vec<PolicyVariant>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub config: Config,
}

/// Written once, after the work finished or failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCompletion {
    pub finished_at: String,
    pub status: String,
    pub outputs: Vec<PathBuf>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, variants: &[PolicyVariant], seeds: &[u64], outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            variants: variants.to_vec(),
            seeds: seeds.to_vec(),
            outputs,
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        write_toml(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(toml::from_str(&text)?)
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, toml::to_string(value)?).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn finish(dir: &Path, status: &str, outputs: Vec<PathBuf>) -> Result<()> {
    let done = RunCompletion {
        finished_at: now(),
        status: status.to_string(),
        outputs,
    };
    write_toml(&dir.join(COMPLETION_FILE), &done).map(|_| ())
}

/// CSV writer whose first line is `schema`.
pub fn csv_writer(path: &Path, schema: &str) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{schema}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains `variant` once per seed (in parallel) under `out`.
pub fn cmd_train(cfg: &Config, variant: PolicyVariant, seeds: &[u64], out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let planned: Vec<PathBuf> = seeds
        .iter()
        .map(|&s| seed_dir(out, s).join(crate::trainer::METRICS_FILE))
        .collect();
    RunManifest::new("train", cfg, &[variant], seeds, planned).write(out)?;
    let results: Vec<Result<Vec<PathBuf>>> = seeds
        .par_iter()
        .map(|&seed| {
            let dir = seed_dir(out, seed);
            let run = train(cfg, variant, seed, Some(&dir), &mut |_| {})?;
            let attacks = dir.join("attacks.csv");
            write_first_episode_attacks(&run.world, seed, &attacks)?;
            let mut files = vec![dir.join(crate::trainer::METRICS_FILE), attacks];
            files.extend(run.checkpoints);
            Ok(files)
        })
        .collect();
    let mut outputs = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(files) => outputs.extend(files),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    match failure {
        Some(e) => {
            finish(out, &format!("failed: {e}"), outputs)?;
            Err(e)
        }
        None => {
            finish(out, "ok", outputs.clone())?;
            Ok(outputs)
        }
    }
}

fn write_first_episode_attacks(world: &World, seed: u64, path: &Path) -> Result<()> {
    let mut env = MigrationEnv::new(world.clone());
    env.reset(derive_seed(seed, 1_000_000));
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{ATTACKS_SCHEMA}").map_err(|e| Error::io(path, e))?;
    write_schedule_csv(env.attacks(), file)
}

/// Policy for `variant`, loading the actor from `checkpoint` when learned.
pub fn load_policy(cfg: &Config, variant: PolicyVariant, checkpoint: Option<&Path>) -> Result<Policy> {
    if !variant.is_learned() {
        return Ok(Policy::Random);
    }
    let path = checkpoint.ok_or_else(|| Error::Config(format!("variant {variant} needs a checkpoint")))?;
    let ckpt = Checkpoint::load(path)?;
    Ok(Policy::Learned {
        variant,
        actor: AnyActor::from_checkpoint(cfg, &ckpt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub variant: PolicyVariant,
    pub seed: u64,
    pub eval_seed: u64,
    pub episodes: usize,
    pub reward_mean: f64,
    pub latency_mean: Option<f64>,
    pub reputation_mean: Option<f64>,
    pub violations: usize,
}

/// One row per (slot, vehicle).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRow {
    pub episode: usize,
    pub slot: usize,
    pub vehicle: usize,
    pub reward: f64,
    pub served: bool,
    pub current: Option<usize>,
    pub pre: Option<usize>,
    pub pre_fraction: Option<f64>,
    pub latency: Option<f64>,
    pub rep_current: Option<f64>,
    pub rep_pre: Option<f64>,
    pub violations: usize,
}

/// One row per (slot, server), after the slot's reputation update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReputationRow {
    pub episode: usize,
    pub slot: usize,
    pub server: usize,
    pub satellite: bool,
    pub attacked: bool,
    pub net: f64,
    pub interaction: f64,
    pub combined: f64,
    pub current: f64,
}

/// Plays eval-mode episodes and records per-slot and reputation traces.
pub fn trace_episodes(
    policy: &Policy,
    world: &World,
    episodes: usize,
    eval_seed: u64,
) -> Result<(Vec<SlotRow>, Vec<ReputationRow>)> {
    let mut env = MigrationEnv::new(world.clone());
    let (mut slots, mut reps) = (Vec::new(), Vec::new());
    for ep in 0..episodes {
        let mut obs = env.reset(derive_seed(eval_seed, ep as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(eval_seed ^ 0x5EED, ep as u64));
        let mut slot = 0;
        while !env.is_done() {
            let before = env.reputations();
            let action = policy.act(&obs, &env.masks(), Mode::Eval, &mut rng)?;
            let attacked: Vec<bool> = env.effects().iter().map(|e| !e.is_zero()).collect();
            let result = env.step(&action)?;
            for (v, e) in result.executed.iter().enumerate() {
                let served = match e {
                    Executed::Served { action, .. } => Some(*action),
                    Executed::Dropped => None,
                };
                slots.push(SlotRow {
                    episode: ep,
                    slot,
                    vehicle: v,
                    reward: result.reward,
                    served: served.is_some(),
                    current: served.map(|a| a.current),
                    pre: served.map(|a| a.pre),
                    pre_fraction: served.map(|a| a.pre_fraction),
                    latency: result.latencies[v].map(|l| l.total),
                    rep_current: served.map(|a| before[a.current]),
                    rep_pre: served.map(|a| before[a.pre]),
                    violations: result.violations,
                });
            }
            for (s, r) in env.reputation_records().iter().enumerate() {
                reps.push(ReputationRow {
                    episode: ep,
                    slot,
                    server: s,
                    satellite: world.servers[s].is_satellite(),
                    attacked: attacked[s],
                    net: r.net,
                    interaction: r.interaction,
                    combined: r.combined,
                    current: r.current,
                });
            }
            obs = result.observation;
            slot += 1;
        }
    }
    Ok((slots, reps))
}

fn write_rows<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path, schema)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Evaluates `variant` in each seed's scenario. Learned variants read
/// `checkpoint`, or `<checkpoint_root>/seed_<n>/final.bin` per seed when
/// `checkpoint` is a directory. Writes `eval.csv`, `slots.csv` and
/// `reputation.csv` under `out`.
pub fn cmd_eval(
    cfg: &Config,
    variant: PolicyVariant,
    seeds: &[u64],
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    let outputs = vec![out.join("eval.csv"), out.join("slots.csv"), out.join("reputation.csv")];
    RunManifest::new("eval", cfg, &[variant], seeds, outputs.clone()).write(out)?;
    let tr = &cfg.trainer;
    let mut rows = Vec::new();
    let (mut slots, mut reps) = (Vec::new(), Vec::new());
    for &seed in seeds {
        let ckpt = checkpoint.map(|p| {
            if p.is_dir() {
                seed_dir(p, seed).join(FINAL_CHECKPOINT)
            } else {
                p.to_path_buf()
            }
        });
        let policy = load_policy(cfg, variant, ckpt.as_deref())?;
        let world = scenario_for(cfg, seed)?;
        let s = evaluate(&policy, &world, tr.eval_episodes, tr.eval_seed)?;
        rows.push(eval_row(variant, seed, tr.eval_seed, tr.eval_episodes, &s));
        if seed == seeds[0] {
            (slots, reps) = trace_episodes(&policy, &world, 1, tr.eval_seed)?;
        }
    }
    write_rows(&outputs[0], EVAL_SCHEMA, &rows)?;
    write_rows(&outputs[1], SLOTS_SCHEMA, &slots)?;
    write_rows(&outputs[2], REPUTATION_SCHEMA, &reps)?;
    finish(out, "ok", outputs)?;
    Ok(rows)
}

fn eval_row(variant: PolicyVariant, seed: u64, eval_seed: u64, episodes: usize, s: &EvalSummary) -> EvalRow {
    EvalRow {
        variant,
        seed,
        eval_seed,
        episodes,
        reward_mean: s.reward_mean,
        latency_mean: s.latency_mean,
        reputation_mean: s.reputation_mean,
        violations: s.violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Utility weight ratio `lambda / mu`, applied by scaling `lambda`.
    Rho,
    /// Fixed upload (and thus processing) size in MB.
    TaskSize,
    /// Fixed inter-server bandwidth in Mbps.
    MigrationBandwidth,
    AttackType,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::TaskSize => "task_size",
            SweepParam::MigrationBandwidth => "migration_bandwidth",
            SweepParam::AttackType => "attack_type",
        }
    }

    pub fn default_values(&self) -> Vec<String> {
        let list: &[&str] = match self {
            SweepParam::Rho => &["0.25", "0.5", "1", "2", "4", "8"],
            SweepParam::TaskSize => &["25", "50", "75", "100", "125", "150", "175", "200"],
            SweepParam::MigrationBandwidth => &["100", "200", "300", "400", "500", "600", "700", "800", "900"],
            SweepParam::AttackType => &["direct", "indirect", "coresident", "hybrid"],
        };
        list.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &Config, value: &str) -> Result<Config> {
        let mut cfg = base.clone();
        let number = || -> Result<f64> {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("{}: `{value}` is not a number", self.name())))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{}: value must be positive, got {v}", self.name())));
            }
            Ok(v)
        };
        match self {
            SweepParam::Rho => cfg.env.lambda = number()? * cfg.env.mu,
            SweepParam::TaskSize => cfg.world.upload_size_mb = Span::fixed(number()?),
            SweepParam::MigrationBandwidth => cfg.world.inter_server_bandwidth_mbps = Span::fixed(number()?),
            SweepParam::AttackType => cfg.attack.scenario = value.parse::<AttackScenario>()?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepParam::Rho),
            "task_size" => Ok(SweepParam::TaskSize),
            "migration_bandwidth" => Ok(SweepParam::MigrationBandwidth),
            "attack_type" => Ok(SweepParam::AttackType),
            other => Err(Error::Config(format!(
                "unknown sweep parameter `{other}` (expected rho, task_size, migration_bandwidth or attack_type)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub variants: Vec<PolicyVariant>,
    /// Evaluate one trained run per seed (`<dir>/seed_<n>/final.bin`)
    /// instead of training a fresh agent per point.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub variant: PolicyVariant,
    pub reward_mean: f64,
    pub latency_mean: Option<f64>,
    pub reputation_mean: Option<f64>,
    pub violations: usize,
}

fn sweep_point(base: &Config, spec: &SweepSpec, value: &str, seed: u64, variant: PolicyVariant) -> Result<SweepRow> {
    let cfg = spec.param.apply(base, value)?;
    let tr = &cfg.trainer;
    let (policy, world) = match (&spec.checkpoint_dir, variant.is_learned()) {
        (Some(dir), true) => {
            let path = seed_dir(dir, seed).join(FINAL_CHECKPOINT);
            (load_policy(&cfg, variant, Some(&path))?, scenario_for(&cfg, seed)?)
        }
        (None, true) => {
            let run = train(&cfg, variant, seed, None, &mut |_| {})?;
            (run.policy, run.world)
        }
        (_, false) => (Policy::Random, scenario_for(&cfg, seed)?),
    };
    let s = evaluate(&policy, &world, tr.eval_episodes, tr.eval_seed)?;
    Ok(SweepRow {
        param: spec.param.name().to_string(),
        value: value.to_string(),
        seed,
        variant,
        reward_mean: s.reward_mean,
        latency_mean: s.latency_mean,
        reputation_mean: s.reputation_mean,
        violations: s.violations,
    })
}

/// Runs every (value, seed, variant) point in parallel and returns the rows
/// in value-list, seed-list, variant-list order.
pub fn run_sweep(base: &Config, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    for v in &spec.values {
        spec.param.apply(base, v)?;
    }
    let mut points = Vec::new();
    for (vi, value) in spec.values.iter().enumerate() {
        for (si, &seed) in spec.seeds.iter().enumerate() {
            for (ki, &variant) in spec.variants.iter().enumerate() {
                points.push(((vi, si, ki), value.clone(), seed, variant));
            }
        }
    }
    let mut rows: Vec<((usize, usize, usize), SweepRow)> = points
        .into_par_iter()
        .map(|(key, value, seed, variant)| Ok((key, sweep_point(base, spec, &value, seed, variant)?)))
        .collect::<Result<_>>()?;
    rows.sort_by_key(|(k, _)| *k);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Runs the sweep and writes `sweep.csv` under `out`.
pub fn cmd_sweep(base: &Config, spec: &SweepSpec, out: &Path) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let path = out.join("sweep.csv");
    RunManifest::new(
        &format!("sweep {}", spec.param.name()),
        base,
        &spec.variants,
        &spec.seeds,
        vec![path.clone()],
    )
    .write(out)?;
    let rows = match run_sweep(base, spec) {
        Ok(rows) => rows,
        Err(e) => {
            finish(out, &format!("failed: {e}"), vec![])?;
            return Err(e);
        }
    };
    let mut w = csv_writer(&path, SWEEP_SCHEMA)?;
    if rows.is_empty() {
        w.write_record([
            "param",
            "value",
            "seed",
            "variant",
            "reward_mean",
            "latency_mean",
            "reputation_mean",
            "violations",
        ])?;
    }
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    finish(out, "ok", vec![path])?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Config {
        let mut c = Config::desk();
        c.world.vehicles = 2;
        c.world.servers = 3;
        c.world.slots_per_episode = 4;
        c.diffusion.hidden = vec![8];
        c.trainer.critic_hidden = vec![8];
        c.trainer.epochs = 2;
        c.trainer.transitions_per_epoch = 8;
        c.trainer.batch_size = 4;
        c.trainer.eval_interval = 1;
        c.trainer.eval_episodes = 1;
        c.trainer.checkpoint_interval = 1;
        c
    }

    #[test]
    fn sweep_params_apply() {
        let base = Config::desk();
        assert_eq!(SweepParam::Rho.apply(&base, "8").unwrap().env.lambda, 8.0);
        let c = SweepParam::AttackType.apply(&base, "co-resident").unwrap();
        assert_eq!(c.attack.scenario, AttackScenario::Coresident);
        assert!(SweepParam::TaskSize.apply(&base, "-1").is_err());
        assert!(SweepParam::AttackType.apply(&base, "ddos").is_err());
        assert_eq!(SweepParam::Rho.default_values().len(), 6);
        assert_eq!(SweepParam::AttackType.default_values().len(), 4);
    }

    #[test]
    fn rows_cover_every_point_in_order() {
        let spec = SweepSpec {
            param: SweepParam::AttackType,
            values: vec!["direct".into(), "hybrid".into()],
            seeds: vec![3, 1],
            variants: vec![PolicyVariant::Random],
            checkpoint_dir: None,
        };
        let rows = run_sweep(&tiny(), &spec).unwrap();
        let keys: Vec<(String, u64)> = rows.iter().map(|r| (r.value.clone(), r.seed)).collect();
        assert_eq!(
            keys,
            vec![("direct".into(), 3), ("direct".into(), 1), ("hybrid".into(), 3), ("hybrid".into(), 1)]
        );
    }

    #[test]
    fn train_then_eval_from_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let files = cmd_train(&cfg, PolicyVariant::HybridGdm, &[5], dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let m = RunManifest::read(dir.path()).unwrap();
        assert_eq!(m.seeds, vec![5]);
        assert_eq!(m.config, cfg);
        assert!(dir.path().join(COMPLETION_FILE).exists());
        let eval_dir = dir.path().join("eval");
        let rows = cmd_eval(&cfg, PolicyVariant::HybridGdm, &[5], Some(dir.path()), &eval_dir).unwrap();
        assert_eq!(rows.len(), 1);
        let slots = std::fs::read_to_string(eval_dir.join("slots.csv")).unwrap();
        assert_eq!(slots.lines().count(), 2 + 4 * 2);
        let reps = std::fs::read_to_string(eval_dir.join("reputation.csv")).unwrap();
        assert_eq!(reps.lines().count(), 2 + 4 * 3);
    }

    #[test]
    fn learned_eval_without_checkpoint_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = cmd_eval(&tiny(), PolicyVariant::NoPre, &[0], None, dir.path());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
