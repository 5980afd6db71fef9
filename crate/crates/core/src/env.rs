//! The migration environment: observations, feasibility masks, action
//! repair, utility and reward.
//!
//! Observation layout for `V` vehicles and `S` servers (length `4V + 2S`):
//!
//! | block | length | content |
//! |---|---|---|
//! | positions | `3V` | `x / width`, `y / height`, `z / width` per vehicle |
//! | delays | `V` | previous-slot total delay / `delay_scale`, clipped at `delay_clip` |
//! | loads | `S` | `load / max_load` per server |
//! | reputations | `S` | current reputation per server |
//!
//! Indices are 0-based throughout.

use serde::Serialize;

use crate::attack::{apply_attacks, schedule_attacks, AttackEffects, AttackEvent};
use crate::channel::{
    channel_gain, distance, link_rate, migration_latency, ChannelConstants, LatencyBreakdown, LinkRates,
    MigrationRequest, Site,
};
use crate::error::{Error, Result};
use crate::trust::{
    combine_and_update, interaction_layer_reputation, network_layer_reputation, synthesize_detection_report,
    InteractionLog, ReputationRecord, TrustParams,
};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleAction {
    pub current: usize,
    pub pre: usize,
    pub pre_fraction: f64,
}

/// One decision per vehicle, in vehicle order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridAction(pub Vec<VehicleAction>);

/// What the environment actually ran for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Executed {
    Served {
        action: VehicleAction,
        /// Roles replaced by the repair rule.
        repairs: usize,
    },
    /// No feasible server: the task is not served this slot.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub latencies: Vec<Option<LatencyBreakdown>>,
    pub utilities: Vec<f64>,
    pub executed: Vec<Executed>,
    pub violations: usize,
}

impl StepResult {
    /// Mean reputation of the servers used (both roles) across served vehicles.
    pub fn selected_reputation(&self, reputations: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for e in &self.executed {
            if let Executed::Served { action, .. } = e {
                total += reputations[action.current] + reputations[action.pre];
                n += 2;
            }
        }
        (n > 0).then(|| total / n as f64)
    }

    pub fn mean_latency(&self) -> Option<f64> {
        let served: Vec<f64> = self.latencies.iter().flatten().map(|l| l.total).collect();
        (!served.is_empty()).then(|| served.iter().sum::<f64>() / served.len() as f64)
    }
}

pub fn observation_len(vehicles: usize, servers: usize) -> usize {
    3 * vehicles + vehicles + servers + servers
}

/// `U = lambda (rep_s + rep_sp) - mu T`.
pub fn utility(lambda: f64, mu: f64, rep_current: f64, rep_pre: f64, total_delay: f64) -> f64 {
    lambda * (rep_current + rep_pre) - mu * total_delay
}

#[derive(Debug, Clone)]
pub struct MigrationEnv {
    world: World,
    trust: TrustParams,
    attacks: Vec<AttackEvent>,
    effects: Vec<AttackEffects>,
    reputations: Vec<ReputationRecord>,
    logs: Vec<InteractionLog>,
    prev_delay: Vec<f64>,
    done: bool,
}

impl MigrationEnv {
    pub fn new(world: World) -> Self {
        let trust = TrustParams::from(&world.config.trust);
        let s = world.num_servers();
        let v = world.num_vehicles();
        let init = ReputationRecord::initial(world.config.trust.initial_reputation);
        MigrationEnv {
            trust,
            attacks: Vec::new(),
            effects: vec![AttackEffects::default(); s],
            reputations: vec![init; s],
            logs: vec![InteractionLog::new(); s],
            prev_delay: vec![0.0; v],
            done: false,
            world,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn attacks(&self) -> &[AttackEvent] {
        &self.attacks
    }

    pub fn effects(&self) -> &[AttackEffects] {
        &self.effects
    }

    pub fn reputation_records(&self) -> &[ReputationRecord] {
        &self.reputations
    }

    pub fn reputations(&self) -> Vec<f64> {
        self.reputations.iter().map(|r| r.current).collect()
    }

    pub fn trust_params(&self) -> &TrustParams {
        &self.trust
    }

    pub fn observation_len(&self) -> usize {
        observation_len(self.world.num_vehicles(), self.world.num_servers())
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode: the world rewinds, draws fresh tasks and an
    /// attack schedule from `seed`, and reputations return to their prior.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.world.reseed(seed);
        self.world.rewind();
        self.world.draw_tasks();
        let horizon = self.world.episode_length();
        let servers = self.world.num_servers();
        let attack_cfg = self.world.config.attack.clone();
        self.attacks = schedule_attacks(&attack_cfg, horizon, servers, self.world.rng());
        let init = ReputationRecord::initial(self.world.config.trust.initial_reputation);
        self.reputations = vec![init; servers];
        self.logs = vec![InteractionLog::new(); servers];
        self.prev_delay = vec![0.0; self.world.num_vehicles()];
        self.done = false;
        self.refresh_effects();
        self.observation()
    }

    fn refresh_effects(&mut self) {
        self.effects = apply_attacks(&self.world, &self.world.config.attack, &self.attacks, self.world.slot);
        let adds: Vec<f64> = self.effects.iter().map(|e| e.load_add).collect();
        self.world.apply_load_effects(&adds);
    }

    pub fn observation(&self) -> Vec<f64> {
        let w = &self.world;
        let wc = &w.config.world;
        let ec = &w.config.env;
        let mut obs = Vec::with_capacity(self.observation_len());
        for v in &w.vehicles {
            obs.push((v.position.x / wc.map_width).clamp(0.0, 1.0));
            obs.push((v.position.y / wc.map_height).clamp(0.0, 1.0));
            obs.push((v.position.z / wc.map_width).clamp(0.0, 1.0));
        }
        for &d in &self.prev_delay {
            obs.push((d / ec.delay_scale).min(ec.delay_clip));
        }
        for s in &w.servers {
            obs.push(s.load / s.max_load);
        }
        for r in &self.reputations {
            obs.push(r.current);
        }
        obs
    }

    /// Whether `server` may serve `vehicle` now: in range, reputation at or
    /// above the threshold, and load below capacity.
    pub fn is_feasible(&self, vehicle: usize, server: usize) -> bool {
        let s = &self.world.servers[server];
        let v = &self.world.vehicles[vehicle];
        distance(v.position, s.position) <= s.comm_range
            && self.reputations[server].current >= self.trust.threshold
            && s.load < s.max_load
    }

    /// Feasibility of every server for `vehicle`; shared by both roles.
    pub fn feasible_mask(&self, vehicle: usize) -> Vec<bool> {
        (0..self.world.num_servers()).map(|s| self.is_feasible(vehicle, s)).collect()
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        (0..self.world.num_vehicles()).map(|v| self.feasible_mask(v)).collect()
    }

    /// Highest-reputation feasible server, lowest index on ties.
    fn fallback(&self, mask: &[bool]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (s, _) in mask.iter().enumerate().filter(|(_, &ok)| ok) {
            if best.is_none_or(|b| self.reputations[s].current > self.reputations[b].current) {
                best = Some(s);
            }
        }
        best
    }

    fn validate(&self, action: &HybridAction) -> Result<()> {
        let (nv, ns) = (self.world.num_vehicles(), self.world.num_servers());
        if action.0.len() != nv {
            return Err(Error::Contract(format!(
                "action covers {} vehicles, scenario has {nv}",
                action.0.len()
            )));
        }
        for (v, a) in action.0.iter().enumerate() {
            if a.current >= ns || a.pre >= ns {
                return Err(Error::Contract(format!(
                    "vehicle {v}: server index out of range 0..{ns}"
                )));
            }
            if !a.pre_fraction.is_finite() {
                return Err(Error::Contract(format!("vehicle {v}: pre-migration fraction is not finite")));
            }
        }
        Ok(())
    }

    fn rates(&self, vehicle: usize, current: usize, pre: usize) -> Result<LinkRates> {
        let v = &self.world.vehicles[vehicle];
        let c = self.world.config.channel.speed_of_light;
        let link = |server: usize, uplink: bool| -> Result<f64> {
            let s = &self.world.servers[server];
            let consts = ChannelConstants::for_server(s, c);
            let gain = channel_gain(s, distance(v.position, s.position), &consts)?;
            let bw = if uplink {
                s.uplink_bandwidth
            } else {
                s.downlink_bandwidth
            };
            Ok(link_rate(bw, v.transmit_power, gain, s.noise_power))
        };
        Ok(LinkRates {
            uplink: link(current, true)?,
            downlink_current: link(current, false)?,
            downlink_pre: link(pre, false)?,
        })
    }

    /// Executes one slot.
    pub fn step(&mut self, action: &HybridAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Contract("step called after the terminal slot".into()));
        }
        self.validate(action)?;
        let ns = self.world.num_servers();
        let ec = self.world.config.env.clone();
        let eval_threshold = self.world.config.trust.evaluation_latency_threshold;
        let slot = self.world.slot;

        let mut assigned = vec![0.0; ns];
        let mut latencies = Vec::with_capacity(action.0.len());
        let mut utilities = Vec::with_capacity(action.0.len());
        let mut executed = Vec::with_capacity(action.0.len());
        let mut violations = 0usize;
        let mut evaluations: Vec<(usize, usize, bool)> = Vec::new();

        for (vi, a) in action.0.iter().enumerate() {
            let mask = self.feasible_mask(vi);
            let Some(fallback) = self.fallback(&mask) else {
                violations += 2;
                latencies.push(None);
                utilities.push(0.0);
                executed.push(Executed::Dropped);
                self.prev_delay[vi] = ec.delay_clip * ec.delay_scale;
                continue;
            };
            let mut repairs = 0;
            let current = if mask[a.current] {
                a.current
            } else {
                repairs += 1;
                fallback
            };
            let pre = if mask[a.pre] {
                a.pre
            } else {
                repairs += 1;
                fallback
            };
            violations += repairs;
            let fraction = a.pre_fraction.clamp(0.0, 1.0);
            let same = current == pre;

            let vehicle = &self.world.vehicles[vi];
            let task = vehicle.task(slot);
            let site = |s: usize| Site {
                compute_capability: self.world.servers[s].compute_capability,
                load: self.world.servers[s].load + assigned[s],
            };
            let req = MigrationRequest {
                task,
                pre_fraction: fraction,
                current: site(current),
                pre: site(pre),
                same_server: same,
                migration_bandwidth: if same {
                    f64::INFINITY
                } else {
                    self.world.inter_server_bandwidth[current][pre]
                },
                rates: self.rates(vi, current, pre)?,
                cycles_per_bit: vehicle.cycles_per_bit,
            };
            let lat = migration_latency(&req);
            let k = if same { 0.0 } else { fraction };
            let migrated = k * task.process_size;
            assigned[current] += vehicle.cycles_per_bit * (task.process_size - migrated);
            assigned[pre] += vehicle.cycles_per_bit * migrated;

            let (rep_s, rep_sp) = (self.reputations[current].current, self.reputations[pre].current);
            utilities.push(utility(ec.lambda, ec.mu, rep_s, rep_sp, lat.total));

            let flip = vehicle.malicious_evaluator;
            let mut evaluate = |server: usize| {
                let honest = lat.total < eval_threshold && !self.effects[server].force_negative_evaluations;
                evaluations.push((server, vi, honest != flip));
            };
            evaluate(current);
            if !same && k > 0.0 {
                evaluate(pre);
            }
            self.prev_delay[vi] = lat.total;
            latencies.push(Some(lat));
            executed.push(Executed::Served {
                action: VehicleAction {
                    current,
                    pre,
                    pre_fraction: fraction,
                },
                repairs,
            });
        }

        for (server, vehicle, positive) in evaluations {
            self.logs[server].record(vehicle, positive);
        }
        self.update_reputations()?;

        let reward = utilities.iter().sum::<f64>() - ec.violation_penalty * violations as f64;
        self.world.advance_slot(&assigned)?;
        let terminal = self.world.slot >= self.world.episode_length();
        self.done = terminal;
        self.refresh_effects();

        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal,
            latencies,
            utilities,
            executed,
            violations,
        })
    }

    /// One detection report per server from this slot's attack effects, then
    /// the two-layer score folded into each running reputation.
    fn update_reputations(&mut self) -> Result<()> {
        let trust_cfg = self.world.config.trust.clone();
        for s in 0..self.world.num_servers() {
            let report = synthesize_detection_report(&trust_cfg, &self.effects[s], self.world.rng());
            let net = network_layer_reputation(&report, &self.world.servers[s].defense, &self.trust)?;
            let int = interaction_layer_reputation(&self.logs[s]);
            self.reputations[s] = combine_and_update(net, int, self.reputations[s].current, &self.trust);
        }
        Ok(())
    }
}
