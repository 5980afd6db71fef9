//! Run configuration.
//!
//! A [`Config`] is a set of sections named after the modules that consume
//! them. Files are TOML; any key left out of a file keeps the value of the
//! selected [`Profile`], so a config file only needs to list overrides.
//!
//! Two profiles ship: `paper` (the reference parameter table: 10 vehicles,
//! 22 servers, 1e5 epochs) and `desk` (4 vehicles, 6 servers, 2000 epochs)
//! which is small enough to train on a laptop CPU.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[min, max]`, written in files as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    pub const fn fixed(value: f64) -> Self {
        Span(value, value)
    }

    pub fn min(&self) -> f64 {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.1
    }

    pub fn scaled(&self, factor: f64) -> Span {
        Span(self.0 * factor, self.1 * factor)
    }

    fn check(&self, name: &str) -> Result<()> {
        if !self.0.is_finite() || !self.1.is_finite() {
            return Err(Error::Config(format!("{name}: range bounds must be finite")));
        }
        if self.0 > self.1 {
            return Err(Error::Config(format!(
                "{name}: min {} exceeds max {}",
                self.0, self.1
            )));
        }
        Ok(())
    }

    fn check_positive(&self, name: &str) -> Result<()> {
        self.check(name)?;
        if self.0 <= 0.0 {
            return Err(Error::Config(format!("{name}: values must be > 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}`"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

/// Scenario layout and the ranges world quantities are sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub vehicles: usize,
    pub servers: usize,
    pub satellites: usize,
    pub map_width: f64,
    pub map_height: f64,
    pub slots_per_episode: usize,
    pub slot_seconds: f64,
    pub rsu_height: f64,
    /// RSU jitter as a fraction of the grid cell size.
    pub rsu_jitter: f64,
    pub satellite_altitude: f64,
    /// Factor mapping the physical satellite altitude into map coordinates.
    pub satellite_altitude_scale: f64,
    pub compute_capability_mhz: Span,
    /// L^max expressed as seconds of work at the server's own capability.
    pub max_load_seconds: Span,
    /// Mean background load as a fraction of L^max.
    pub base_load_fraction: Span,
    pub load_reversion: f64,
    /// Standard deviation of the background-load noise, fraction of L^max.
    pub load_noise_fraction: f64,
    pub rsu_range: Span,
    pub uplink_bandwidth: Span,
    pub downlink_bandwidth: Span,
    pub inter_server_bandwidth_mbps: Span,
    pub upload_size_mb: Span,
    /// D^task = ratio * D^up.
    pub process_ratio: f64,
    pub vehicle_speed: Span,
    pub transmit_power: f64,
    pub cycles_per_bit: Span,
}

/// Physical channel constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub speed_of_light: f64,
    pub rsu_carrier_frequency: f64,
    pub satellite_carrier_frequency: f64,
    pub noise_power: f64,
    pub rsu_gain: f64,
    pub satellite_los_gain: f64,
    pub satellite_nlos_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackScenario {
    None,
    Direct,
    Indirect,
    Coresident,
    Hybrid,
}

impl FromStr for AttackScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "direct" => Ok(Self::Direct),
            "indirect" => Ok(Self::Indirect),
            "coresident" | "co-resident" => Ok(Self::Coresident),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(Error::Config(format!("unknown attack scenario `{other}`"))),
        }
    }
}

impl fmt::Display for AttackScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Direct => "direct",
            Self::Indirect => "indirect",
            Self::Coresident => "coresident",
            Self::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Which attack kinds are enabled; rates of disabled kinds are ignored.
    pub scenario: AttackScenario,
    /// Mean arrivals per slot.
    pub direct_rate: f64,
    pub indirect_rate: f64,
    pub coresident_rate: f64,
    /// Duration range in slots (integers).
    pub duration_slots: Span,
    pub direct_abnormal_add: f64,
    pub direct_failure_add: f64,
    pub indirect_neighbors: usize,
    pub indirect_load_fraction: f64,
    pub indirect_failure_add: f64,
    pub coresident_load_fraction: f64,
    pub coresident_abnormal_add: f64,
    pub coresident_failure_add: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub penalty: f64,
    pub data_weight: f64,
    pub layer_weight: f64,
    pub update_rate: f64,
    pub reputation_threshold: f64,
    pub initial_reputation: f64,
    pub baseline_abnormal_rate: f64,
    pub baseline_failure_rate: f64,
    pub detection_packets: u64,
    pub packet_bits: f64,
    pub detection_requests: u64,
    /// Historical attack count range per server.
    pub defense_attacks: Span,
    /// Successful-defense ratio range per server.
    pub defense_ratio: Span,
    /// A served slot earns a positive evaluation below this total latency.
    pub evaluation_latency_threshold: f64,
    pub malicious_evaluator_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Money per reputation unit.
    pub lambda: f64,
    /// Money per second of latency.
    pub mu: f64,
    pub violation_penalty: f64,
    /// Previous-slot delays are divided by this before entering observations.
    pub delay_scale: f64,
    /// Upper clip of the normalized delay entry.
    pub delay_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// `(beta_tilde / 2)^2`.
    HalfSquared,
    /// `sqrt(beta_tilde)`, the conventional DDPM posterior std.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub noise_scale: NoiseScale,
    pub hidden: Vec<usize>,
    pub time_embedding: usize,
    pub exploration_std: f64,
    pub mask_logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// How the actor objective treats the critic's dependence on the actor's
/// own pre-migration fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorQGradient {
    /// Q is a constant; only the distribution carries gradient.
    Detached,
    /// Gradient also flows into the critic's fraction inputs (critic frozen).
    ThroughCritic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub transitions_per_epoch: usize,
    /// Gradient updates after each collection phase.
    pub updates_per_epoch: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub critic_hidden: Vec<usize>,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub checkpoint_interval: usize,
    pub precision: Precision,
    pub actor_q_gradient: ActorQGradient,
    /// Rewards are multiplied by this before entering the replay buffer.
    pub reward_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub world: WorldConfig,
    pub channel: ChannelConfig,
    pub attack: AttackConfig,
    pub trust: TrustConfig,
    pub env: EnvConfig,
    pub diffusion: DiffusionConfig,
    pub trainer: TrainerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config::paper()
    }
}

impl Config {
    /// Reference-scale profile.
    pub fn paper() -> Self {
        Config {
            world: WorldConfig {
                seed: 0,
                vehicles: 10,
                servers: 22,
                satellites: 2,
                map_width: 1000.0,
                map_height: 1000.0,
                slots_per_episode: 50,
                slot_seconds: 5.0,
                rsu_height: 10.0,
                rsu_jitter: 0.15,
                satellite_altitude: 500_000.0,
                satellite_altitude_scale: 0.004,
                compute_capability_mhz: Span(100.0, 200.0),
                max_load_seconds: Span(6.0, 10.0),
                base_load_fraction: Span(0.05, 0.35),
                load_reversion: 0.2,
                load_noise_fraction: 0.05,
                rsu_range: Span(400.0, 600.0),
                uplink_bandwidth: Span(30e6, 50e6),
                downlink_bandwidth: Span(30e6, 50e6),
                inter_server_bandwidth_mbps: Span(500.0, 900.0),
                upload_size_mb: Span(15.0, 175.0),
                process_ratio: 1.0,
                vehicle_speed: Span(8.0, 16.0),
                transmit_power: 0.5,
                cycles_per_bit: Span::fixed(0.4),
            },
            channel: ChannelConfig {
                speed_of_light: 2.998e8,
                rsu_carrier_frequency: 2.4e9,
                satellite_carrier_frequency: 12e9,
                noise_power: 1e-13,
                rsu_gain: 4.0,
                satellite_los_gain: 2.0,
                satellite_nlos_gain: 0.5,
            },
            attack: AttackConfig {
                scenario: AttackScenario::Hybrid,
                direct_rate: 0.02,
                indirect_rate: 0.02,
                coresident_rate: 0.03,
                duration_slots: Span(3.0, 10.0),
                direct_abnormal_add: 0.6,
                direct_failure_add: 0.7,
                indirect_neighbors: 2,
                indirect_load_fraction: 0.4,
                indirect_failure_add: 0.3,
                coresident_load_fraction: 0.1,
                coresident_abnormal_add: 0.1,
                coresident_failure_add: 0.05,
            },
            trust: TrustConfig {
                theta1: 0.3,
                theta2: 0.7,
                penalty: 0.5,
                data_weight: 0.5,
                layer_weight: 0.5,
                update_rate: 0.3,
                reputation_threshold: 0.3,
                initial_reputation: 0.5,
                baseline_abnormal_rate: 0.02,
                baseline_failure_rate: 0.02,
                detection_packets: 1000,
                packet_bits: 1000.0,
                detection_requests: 100,
                defense_attacks: Span(10.0, 40.0),
                defense_ratio: Span(0.2, 1.0),
                evaluation_latency_threshold: 6.0,
                malicious_evaluator_fraction: 0.0,
            },
            env: EnvConfig {
                lambda: 4.0,
                mu: 1.0,
                violation_penalty: 1.0,
                delay_scale: 10.0,
                delay_clip: 5.0,
            },
            diffusion: DiffusionConfig {
                steps: 5,
                beta_min: 0.05,
                beta_max: 0.5,
                noise_scale: NoiseScale::HalfSquared,
                hidden: vec![256, 256],
                time_embedding: 16,
                exploration_std: 0.1,
                mask_logit: -1e9,
            },
            trainer: TrainerConfig {
                epochs: 100_000,
                transitions_per_epoch: 1000,
                updates_per_epoch: 1,
                buffer_capacity: 1_000_000,
                batch_size: 256,
                actor_lr: 1e-4,
                critic_lr: 1e-3,
                tau: 0.005,
                gamma: 0.95,
                critic_hidden: vec![256, 256],
                eval_interval: 1000,
                eval_episodes: 5,
                eval_seed: 10_000,
                checkpoint_interval: 10_000,
                precision: Precision::F32,
                actor_q_gradient: ActorQGradient::ThroughCritic,
                reward_scale: 1.0,
            },
        }
    }

    /// Laptop-scale profile used by the test suite.
    pub fn desk() -> Self {
        let mut cfg = Config::paper();
        cfg.world.vehicles = 4;
        cfg.world.servers = 6;
        cfg.world.satellites = 1;
        cfg.trainer.epochs = 2000;
        cfg.trainer.transitions_per_epoch = 200;
        cfg.trainer.eval_interval = 100;
        cfg.trainer.checkpoint_interval = 500;
        // Narrower networks with more updates per collection phase learn
        // faster per wall-clock second at this size.
        cfg.diffusion.hidden = vec![128, 128];
        cfg.trainer.critic_hidden = vec![128, 128];
        cfg.trainer.updates_per_epoch = 4;
        cfg.trainer.actor_lr = 3e-4;
        cfg
    }

    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Config::desk(),
            Profile::Paper => Config::paper(),
        }
    }

    /// Parses `text` as overrides on top of `base`.
    pub fn from_toml_overrides(text: &str, base: &Config) -> Result<Config> {
        let overrides: toml::Table = toml::from_str(text)?;
        let mut merged = toml::Table::try_from(base)?;
        merge_tables(&mut merged, overrides);
        let cfg: Config = toml::Value::Table(merged).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_overrides(&text, &Config::profile(profile))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if w.vehicles == 0 || w.servers == 0 {
            return Err(Error::Config("need at least one vehicle and one server".into()));
        }
        if w.satellites > w.servers {
            return Err(Error::Config("more satellites than servers".into()));
        }
        if w.slots_per_episode == 0 {
            return Err(Error::Config("slots_per_episode must be >= 1".into()));
        }
        for (name, v) in [
            ("world.map_width", w.map_width),
            ("world.map_height", w.map_height),
            ("world.slot_seconds", w.slot_seconds),
            ("world.transmit_power", w.transmit_power),
            ("world.process_ratio", w.process_ratio),
            ("world.satellite_altitude", w.satellite_altitude),
            ("world.satellite_altitude_scale", w.satellite_altitude_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a positive number")));
            }
        }
        for (name, s) in [
            ("world.compute_capability_mhz", w.compute_capability_mhz),
            ("world.max_load_seconds", w.max_load_seconds),
            ("world.rsu_range", w.rsu_range),
            ("world.uplink_bandwidth", w.uplink_bandwidth),
            ("world.downlink_bandwidth", w.downlink_bandwidth),
            ("world.inter_server_bandwidth_mbps", w.inter_server_bandwidth_mbps),
            ("world.upload_size_mb", w.upload_size_mb),
            ("world.vehicle_speed", w.vehicle_speed),
            ("world.cycles_per_bit", w.cycles_per_bit),
        ] {
            s.check_positive(name)?;
        }
        w.base_load_fraction.check("world.base_load_fraction")?;
        if w.base_load_fraction.min() < 0.0 || w.base_load_fraction.max() > 1.0 {
            return Err(Error::Config("world.base_load_fraction must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&w.load_reversion) || w.load_noise_fraction < 0.0 {
            return Err(Error::Config("world load dynamics out of range".into()));
        }

        let c = &self.channel;
        for (name, v) in [
            ("channel.speed_of_light", c.speed_of_light),
            ("channel.rsu_carrier_frequency", c.rsu_carrier_frequency),
            ("channel.satellite_carrier_frequency", c.satellite_carrier_frequency),
            ("channel.noise_power", c.noise_power),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if c.rsu_gain < 0.0 || c.satellite_los_gain < 0.0 || c.satellite_nlos_gain < 0.0 {
            return Err(Error::Config("channel gains must be >= 0".into()));
        }

        let a = &self.attack;
        a.duration_slots.check("attack.duration_slots")?;
        if a.duration_slots.min() < 1.0 {
            return Err(Error::Config("attack durations must be >= 1 slot".into()));
        }
        for (name, v) in [
            ("attack.direct_rate", a.direct_rate),
            ("attack.indirect_rate", a.indirect_rate),
            ("attack.coresident_rate", a.coresident_rate),
            ("attack.indirect_load_fraction", a.indirect_load_fraction),
            ("attack.coresident_load_fraction", a.coresident_load_fraction),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        for (name, v) in [
            ("attack.direct_abnormal_add", a.direct_abnormal_add),
            ("attack.direct_failure_add", a.direct_failure_add),
            ("attack.indirect_failure_add", a.indirect_failure_add),
            ("attack.coresident_abnormal_add", a.coresident_abnormal_add),
            ("attack.coresident_failure_add", a.coresident_failure_add),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1]")));
            }
        }

        let t = &self.trust;
        if !(0.0 < t.theta1 && t.theta1 < t.theta2 && t.theta2 < 1.0) {
            return Err(Error::Config("trust thresholds need 0 < theta1 < theta2 < 1".into()));
        }
        if !(0.0 < t.penalty && t.penalty < 1.0) {
            return Err(Error::Config("trust.penalty must lie in (0,1)".into()));
        }
        for (name, v) in [
            ("trust.data_weight", t.data_weight),
            ("trust.layer_weight", t.layer_weight),
            ("trust.initial_reputation", t.initial_reputation),
            ("trust.baseline_abnormal_rate", t.baseline_abnormal_rate),
            ("trust.baseline_failure_rate", t.baseline_failure_rate),
            ("trust.malicious_evaluator_fraction", t.malicious_evaluator_fraction),
            ("trust.reputation_threshold", t.reputation_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1]")));
            }
        }
        if !(0.0 < t.update_rate && t.update_rate <= 1.0) {
            return Err(Error::Config("trust.update_rate must lie in (0,1]".into()));
        }
        if t.detection_packets == 0 || t.detection_requests == 0 || !(t.packet_bits > 0.0) {
            return Err(Error::Config("detection totals must be > 0".into()));
        }
        t.defense_attacks.check("trust.defense_attacks")?;
        t.defense_ratio.check("trust.defense_ratio")?;
        if t.defense_ratio.min() < 0.0 || t.defense_ratio.max() > 1.0 {
            return Err(Error::Config("trust.defense_ratio must lie in [0,1]".into()));
        }

        let e = &self.env;
        if !(e.lambda > 0.0 && e.mu > 0.0) {
            return Err(Error::Config("env.lambda and env.mu must be > 0".into()));
        }
        if !(e.delay_scale > 0.0 && e.delay_clip > 0.0) || e.violation_penalty < 0.0 {
            return Err(Error::Config("env normalization constants out of range".into()));
        }

        let d = &self.diffusion;
        if d.steps == 0 {
            return Err(Error::Config("diffusion.steps must be >= 1".into()));
        }
        if !(0.0 < d.beta_min && d.beta_min <= d.beta_max && d.beta_max < 1.0) {
            return Err(Error::Config("diffusion betas need 0 < min <= max < 1".into()));
        }
        if d.hidden.contains(&0) || !d.time_embedding.is_multiple_of(2) {
            return Err(Error::Config(
                "diffusion.hidden widths must be > 0 and time_embedding even".into(),
            ));
        }
        if d.exploration_std < 0.0 {
            return Err(Error::Config("diffusion.exploration_std must be >= 0".into()));
        }

        let tr = &self.trainer;
        if tr.transitions_per_epoch == 0 || tr.updates_per_epoch == 0 || tr.batch_size == 0 || tr.buffer_capacity == 0 {
            return Err(Error::Config("trainer sizes must be >= 1".into()));
        }
        if !(0.0 < tr.tau && tr.tau <= 1.0) || !(0.0..=1.0).contains(&tr.gamma) {
            return Err(Error::Config("trainer.tau must be in (0,1], gamma in [0,1]".into()));
        }
        if tr.actor_lr < 0.0 || tr.critic_lr < 0.0 || !(tr.reward_scale > 0.0) {
            return Err(Error::Config("trainer learning rates/reward scale out of range".into()));
        }
        if tr.critic_hidden.contains(&0) {
            return Err(Error::Config("trainer.critic_hidden widths must be > 0".into()));
        }
        if tr.eval_episodes == 0 {
            return Err(Error::Config("trainer.eval_episodes must be >= 1".into()));
        }
        Ok(())
    }
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge_tables(dst, src),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        Config::paper().validate().unwrap();
        Config::desk().validate().unwrap();
    }

    #[test]
    fn paper_profile_carries_reference_table() {
        let c = Config::paper();
        assert_eq!((c.world.vehicles, c.world.servers, c.world.satellites), (10, 22, 2));
        assert_eq!(c.world.compute_capability_mhz, Span(100.0, 200.0));
        assert_eq!(c.world.upload_size_mb, Span(15.0, 175.0));
        assert_eq!(c.world.inter_server_bandwidth_mbps, Span(500.0, 900.0));
        assert_eq!(c.trust.layer_weight, 0.5);
        assert_eq!((c.env.lambda, c.env.mu), (4.0, 1.0));
        assert_eq!(c.trainer.epochs, 100_000);
        assert_eq!(c.diffusion.steps, 5);
        assert_eq!(c.trainer.buffer_capacity, 1_000_000);
        assert_eq!(c.trainer.transitions_per_epoch, 1000);
        assert_eq!((c.trainer.actor_lr, c.trainer.critic_lr), (1e-4, 1e-3));
        assert_eq!((c.trainer.tau, c.trainer.gamma), (0.005, 0.95));
    }

    #[test]
    fn overrides_keep_unlisted_values() {
        let text = "[world]\nvehicles = 3\n\n[env]\nlambda = 2.0\n";
        let cfg = Config::from_toml_overrides(text, &Config::desk()).unwrap();
        assert_eq!(cfg.world.vehicles, 3);
        assert_eq!(cfg.world.servers, 6);
        assert_eq!(cfg.env.lambda, 2.0);
        assert_eq!(cfg.trainer.epochs, 2000);
    }

    #[test]
    fn inverted_range_is_rejected() {
        let text = "[world]\nrsu_range = [600.0, 400.0]\n";
        let err = Config::from_toml_overrides(text, &Config::desk()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[world]\nvehicels = 3\n";
        assert!(Config::from_toml_overrides(text, &Config::desk()).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config::desk();
        let text = cfg.to_toml().unwrap();
        let back = Config::from_toml_overrides(&text, &Config::paper()).unwrap();
        assert_eq!(back, cfg);
    }
}
