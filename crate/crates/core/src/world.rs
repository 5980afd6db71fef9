//! Scenario state: edge servers, vehicles, trajectories and load dynamics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{Config, Span};
use crate::error::{Error, Result};
use crate::trust::DefenseHistory;

const BITS_PER_MB: f64 = 8e6;

pub const SNAPSHOT_FORMAT: &str = "twinmig-world";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn lerp(self, to: Position, frac: f64) -> Position {
        Position {
            x: self.x + (to.x - self.x) * frac,
            y: self.y + (to.y - self.y) * frac,
            z: self.z + (to.z - self.z) * frac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ServerKind {
    Rsu,
    Satellite,
}

/// Path-loss gain coefficients of a server's radio link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ChannelGains {
    Rsu { gain: f64 },
    Satellite { los: f64, nlos: f64 },
}

impl ChannelGains {
    pub fn coefficient(&self) -> f64 {
        match *self {
            ChannelGains::Rsu { gain } => gain,
            ChannelGains::Satellite { los, nlos } => los + nlos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeServer {
    pub id: usize,
    pub kind: ServerKind,
    pub position: Position,
    /// cycles/s
    pub compute_capability: f64,
    /// cycles
    pub max_load: f64,
    /// Mean of the background-load process, cycles.
    pub base_load: f64,
    pub background_load: f64,
    /// Queued migration work not yet processed, cycles.
    pub backlog: f64,
    /// Current load L_s(t) including attack effects, cycles.
    pub load: f64,
    /// meters
    pub comm_range: f64,
    /// Hz
    pub uplink_bandwidth: f64,
    /// Hz
    pub downlink_bandwidth: f64,
    pub gains: ChannelGains,
    pub carrier_frequency: f64,
    /// watts
    pub noise_power: f64,
    pub defense: DefenseHistory,
}

impl EdgeServer {
    pub fn is_satellite(&self) -> bool {
        self.kind == ServerKind::Satellite
    }
}

/// Task offloaded by one vehicle in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskSpec {
    /// bits
    pub upload_size: f64,
    /// bits
    pub process_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vehicle {
    pub id: usize,
    pub waypoints: Vec<Position>,
    /// m/s
    pub speed: f64,
    /// watts
    pub transmit_power: f64,
    pub cycles_per_bit: f64,
    /// Flips every evaluation it reports.
    pub malicious_evaluator: bool,
    pub position: Position,
    /// One task per slot of the current episode.
    pub tasks: Vec<TaskSpec>,
}

impl Vehicle {
    /// Position after travelling `distance` meters along the waypoint polyline.
    pub fn position_along(&self, distance: f64) -> Position {
        let mut left = distance.max(0.0);
        for pair in self.waypoints.windows(2) {
            let seg = crate::channel::distance(pair[0], pair[1]);
            if left <= seg {
                let frac = if seg > 0.0 { left / seg } else { 0.0 };
                return pair[0].lerp(pair[1], frac);
            }
            left -= seg;
        }
        *self.waypoints.last().expect("trajectory has waypoints")
    }

    /// Index of the segment the vehicle is on after `distance` meters.
    pub fn segment_at(&self, distance: f64) -> usize {
        let mut left = distance.max(0.0);
        for (i, pair) in self.waypoints.windows(2).enumerate() {
            let seg = crate::channel::distance(pair[0], pair[1]);
            if left <= seg {
                return i;
            }
            left -= seg;
        }
        self.waypoints.len().saturating_sub(2)
    }

    pub fn trajectory_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|p| crate::channel::distance(p[0], p[1]))
            .sum()
    }

    pub fn task(&self, slot: usize) -> TaskSpec {
        self.tasks[slot.min(self.tasks.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct World {
    pub config: Config,
    pub servers: Vec<EdgeServer>,
    pub vehicles: Vec<Vehicle>,
    /// Wired/wireless backhaul rate between server pairs, bits/s.
    pub inter_server_bandwidth: Vec<Vec<f64>>,
    pub slot: usize,
    #[serde(skip)]
    rng: ChaCha8Rng,
}

fn sample(rng: &mut ChaCha8Rng, span: Span) -> f64 {
    if span.min() == span.max() {
        span.min()
    } else {
        rng.random_range(span.min()..=span.max())
    }
}

/// Builds a world from `config`, drawing every random quantity from a
/// generator seeded with `config.world.seed`.
pub fn build_scenario(config: &Config) -> Result<World> {
    config.validate()?;
    let wc = &config.world;
    let cc = &config.channel;
    let mut rng = ChaCha8Rng::seed_from_u64(wc.seed);

    let n_sat = wc.satellites;
    let n_rsu = wc.servers - n_sat;
    let cols = ((n_rsu as f64 * wc.map_width / wc.map_height).sqrt().ceil() as usize).max(1);
    let rows = n_rsu.div_ceil(cols).max(1);
    let cell_w = wc.map_width / cols as f64;
    let cell_h = wc.map_height / rows as f64;
    let map_diag = (wc.map_width.powi(2) + wc.map_height.powi(2)).sqrt();
    let sat_height = wc.satellite_altitude * wc.satellite_altitude_scale;

    let mut servers = Vec::with_capacity(wc.servers);
    for id in 0..wc.servers {
        let kind = if id < n_rsu {
            ServerKind::Rsu
        } else {
            ServerKind::Satellite
        };
        let position = match kind {
            ServerKind::Rsu => {
                let (r, c) = (id / cols, id % cols);
                let jx = rng.random_range(-1.0..=1.0) * wc.rsu_jitter * cell_w;
                let jy = rng.random_range(-1.0..=1.0) * wc.rsu_jitter * cell_h;
                Position::new(
                    ((c as f64 + 0.5) * cell_w + jx).clamp(0.0, wc.map_width),
                    ((r as f64 + 0.5) * cell_h + jy).clamp(0.0, wc.map_height),
                    wc.rsu_height,
                )
            }
            ServerKind::Satellite => {
                let k = (id - n_rsu) as f64;
                let x = wc.map_width * (k + 1.0) / (n_sat as f64 + 1.0);
                Position::new(x, wc.map_height / 2.0, sat_height)
            }
        };
        let compute_capability = sample(&mut rng, wc.compute_capability_mhz) * 1e6;
        let max_load = compute_capability * sample(&mut rng, wc.max_load_seconds);
        let base_load = max_load * sample(&mut rng, wc.base_load_fraction);
        let comm_range = match kind {
            ServerKind::Rsu => sample(&mut rng, wc.rsu_range),
            ServerKind::Satellite => (map_diag.powi(2) + sat_height.powi(2)).sqrt() + 1.0,
        };
        let uplink_bandwidth = sample(&mut rng, wc.uplink_bandwidth);
        let downlink_bandwidth = sample(&mut rng, wc.downlink_bandwidth);
        let (gains, carrier_frequency) = match kind {
            ServerKind::Rsu => (ChannelGains::Rsu { gain: cc.rsu_gain }, cc.rsu_carrier_frequency),
            ServerKind::Satellite => (
                ChannelGains::Satellite {
                    los: cc.satellite_los_gain,
                    nlos: cc.satellite_nlos_gain,
                },
                cc.satellite_carrier_frequency,
            ),
        };
        let attacks = sample(&mut rng, config.trust.defense_attacks).round() as u64;
        let ratio = sample(&mut rng, config.trust.defense_ratio);
        let successes = ((attacks as f64) * ratio).round() as u64;
        servers.push(EdgeServer {
            id,
            kind,
            position,
            compute_capability,
            max_load,
            base_load,
            background_load: base_load,
            backlog: 0.0,
            load: base_load,
            comm_range,
            uplink_bandwidth,
            downlink_bandwidth,
            gains,
            carrier_frequency,
            noise_power: cc.noise_power,
            defense: DefenseHistory {
                successful_defenses: successes.min(attacks),
                total_attacks: attacks,
            },
        });
    }

    let mut bandwidth = vec![vec![0.0; wc.servers]; wc.servers];
    for a in 0..wc.servers {
        for b in (a + 1)..wc.servers {
            let bw = sample(&mut rng, wc.inter_server_bandwidth_mbps) * 1e6;
            bandwidth[a][b] = bw;
            bandwidth[b][a] = bw;
        }
    }

    let horizon = wc.slots_per_episode as f64 * wc.slot_seconds;
    let mut vehicles = Vec::with_capacity(wc.vehicles);
    for id in 0..wc.vehicles {
        let speed = sample(&mut rng, wc.vehicle_speed);
        let needed = speed * (horizon + wc.slot_seconds);
        let ground = |rng: &mut ChaCha8Rng| {
            Position::new(
                rng.random_range(0.0..=wc.map_width),
                rng.random_range(0.0..=wc.map_height),
                0.0,
            )
        };
        let mut waypoints = vec![ground(&mut rng)];
        let mut length = 0.0;
        while length < needed {
            let next = ground(&mut rng);
            length += crate::channel::distance(*waypoints.last().unwrap(), next);
            waypoints.push(next);
        }
        let cycles_per_bit = sample(&mut rng, wc.cycles_per_bit);
        let malicious = rng.random_bool(config.trust.malicious_evaluator_fraction);
        vehicles.push(Vehicle {
            id,
            position: waypoints[0],
            waypoints,
            speed,
            transmit_power: wc.transmit_power,
            cycles_per_bit,
            malicious_evaluator: malicious,
            tasks: Vec::new(),
        });
    }

    let mut world = World {
        config: config.clone(),
        servers,
        vehicles,
        inter_server_bandwidth: bandwidth,
        slot: 0,
        rng,
    };
    world.draw_tasks();
    Ok(world)
}

impl World {
    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn episode_length(&self) -> usize {
        self.config.world.slots_per_episode
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Restarts the world's random stream, keeping the built layout.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Draws a fresh per-slot task stream for every vehicle.
    pub fn draw_tasks(&mut self) {
        let wc = &self.config.world;
        let span = wc.upload_size_mb.scaled(BITS_PER_MB);
        let slots = wc.slots_per_episode;
        let ratio = wc.process_ratio;
        for v in &mut self.vehicles {
            v.tasks = (0..slots)
                .map(|_| {
                    let up = sample(&mut self.rng, span);
                    TaskSpec {
                        upload_size: up,
                        process_size: up * ratio,
                    }
                })
                .collect();
        }
    }

    /// Rewinds to slot 0: vehicles at their trajectory start, loads at base.
    pub fn rewind(&mut self) {
        self.slot = 0;
        for v in &mut self.vehicles {
            v.position = v.position_along(0.0);
        }
        for s in &mut self.servers {
            s.background_load = s.base_load;
            s.backlog = 0.0;
            s.load = s.base_load;
        }
    }

    pub fn travelled(&self, vehicle: usize, slot: usize) -> f64 {
        self.vehicles[vehicle].speed * self.config.world.slot_seconds * slot as f64
    }

    /// Moves time forward one slot.
    ///
    /// Background load follows `L <- clamp(L + a (L_base - L) + noise, 0, L^max)`;
    /// the migration backlog gains `assigned` cycles and drains `c_s` cycles
    /// per second of slot. Attack effects are layered on afterwards through
    /// [`World::apply_load_effects`].
    pub fn advance_slot(&mut self, assigned: &[f64]) -> Result<()> {
        if assigned.len() != self.servers.len() {
            return Err(Error::Contract(format!(
                "assigned loads has {} entries for {} servers",
                assigned.len(),
                self.servers.len()
            )));
        }
        self.slot += 1;
        let slot = self.slot;
        let seconds = self.config.world.slot_seconds;
        for i in 0..self.vehicles.len() {
            let d = self.travelled(i, slot);
            self.vehicles[i].position = self.vehicles[i].position_along(d);
        }
        let reversion = self.config.world.load_reversion;
        let noise_frac = self.config.world.load_noise_fraction;
        for (s, &add) in self.servers.iter_mut().zip(assigned) {
            let noise = if noise_frac > 0.0 {
                Normal::new(0.0, noise_frac * s.max_load)
                    .expect("finite std")
                    .sample(&mut self.rng)
            } else {
                0.0
            };
            s.background_load = (s.background_load
                + reversion * (s.base_load - s.background_load)
                + noise)
                .clamp(0.0, s.max_load);
            s.backlog =
                (s.backlog + add.max(0.0) - s.compute_capability * seconds).clamp(0.0, s.max_load);
            s.load = (s.background_load + s.backlog).min(s.max_load);
        }
        Ok(())
    }

    /// Adds per-server attack load on top of the background and backlog.
    pub fn apply_load_effects(&mut self, extra: &[f64]) {
        for (s, &add) in self.servers.iter_mut().zip(extra) {
            s.load = (s.background_load + s.backlog + add.max(0.0)).min(s.max_load);
        }
    }

    /// Versioned JSON dump for debugging.
    pub fn snapshot_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            format: &'a str,
            version: u32,
            world: &'a World,
        }
        Ok(serde_json::to_string_pretty(&Snapshot {
            format: SNAPSHOT_FORMAT,
            version: SNAPSHOT_VERSION,
            world: self,
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> Config {
        Config::desk()
    }

    #[test]
    fn reference_layout_has_expected_counts() {
        let world = build_scenario(&Config::paper()).unwrap();
        assert_eq!(world.num_servers(), 22);
        assert_eq!(world.num_vehicles(), 10);
        let sats = world.servers.iter().filter(|s| s.is_satellite()).count();
        assert_eq!(sats, 2);
    }

    #[test]
    fn single_server_world() {
        let mut cfg = desk();
        cfg.world.vehicles = 1;
        cfg.world.servers = 1;
        cfg.world.satellites = 0;
        let world = build_scenario(&cfg).unwrap();
        assert_eq!(world.num_servers(), 1);
        assert_eq!(world.num_vehicles(), 1);
    }

    #[test]
    fn same_seed_same_world() {
        let a = build_scenario(&desk()).unwrap();
        let b = build_scenario(&desk()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshot_json().unwrap(), b.snapshot_json().unwrap());
        let mut cfg = desk();
        cfg.world.seed = 1;
        assert_ne!(a, build_scenario(&cfg).unwrap());
    }

    #[test]
    fn invalid_range_is_a_config_error() {
        let mut cfg = desk();
        cfg.world.compute_capability_mhz = Span(200.0, 100.0);
        assert!(matches!(build_scenario(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sampled_values_stay_in_table_ranges() {
        let world = build_scenario(&Config::paper()).unwrap();
        for s in &world.servers {
            assert!((100e6..=200e6).contains(&s.compute_capability));
            assert!(s.load >= 0.0 && s.load <= s.max_load);
        }
        for row in &world.inter_server_bandwidth {
            for (j, &bw) in row.iter().enumerate() {
                if bw != 0.0 {
                    assert!((500e6..=900e6).contains(&bw), "{j}: {bw}");
                }
            }
        }
        for v in &world.vehicles {
            for t in &v.tasks {
                assert!((15.0 * 8e6..=175.0 * 8e6).contains(&t.upload_size));
                assert_eq!(t.process_size, t.upload_size);
            }
        }
        let sat = world.servers.iter().find(|s| s.is_satellite()).unwrap();
        for v in &world.vehicles {
            assert!(crate::channel::distance(v.position, sat.position) <= sat.comm_range);
        }
    }

    #[test]
    fn mean_reversion_fixed_point() {
        let mut cfg = desk();
        cfg.world.load_noise_fraction = 0.0;
        let mut world = build_scenario(&cfg).unwrap();
        let before: Vec<f64> = world.servers.iter().map(|s| s.load).collect();
        world.advance_slot(&vec![0.0; world.num_servers()]).unwrap();
        let after: Vec<f64> = world.servers.iter().map(|s| s.load).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn assigned_load_is_clamped_at_capacity() {
        let mut world = build_scenario(&desk()).unwrap();
        let huge: Vec<f64> = world.servers.iter().map(|s| s.max_load * 10.0).collect();
        world.advance_slot(&huge).unwrap();
        for s in &world.servers {
            assert_eq!(s.load, s.max_load);
        }
    }

    #[test]
    fn load_traces_repeat_under_fixed_seed() {
        let trace = || {
            let mut world = build_scenario(&desk()).unwrap();
            let mut out = Vec::new();
            for k in 0..100 {
                let assigned: Vec<f64> = world
                    .servers
                    .iter()
                    .map(|s| if k % 3 == 0 { s.compute_capability } else { 0.0 })
                    .collect();
                world.advance_slot(&assigned).unwrap();
                out.extend(world.servers.iter().map(|s| s.load));
            }
            out
        };
        assert_eq!(trace(), trace());
    }

    #[test]
    fn positions_stay_on_their_segment() {
        let mut world = build_scenario(&desk()).unwrap();
        for _ in 0..world.episode_length() {
            world.advance_slot(&vec![0.0; world.num_servers()]).unwrap();
            for (i, v) in world.vehicles.iter().enumerate() {
                let d = world.travelled(i, world.slot);
                let k = v.segment_at(d);
                let (a, b) = (v.waypoints[k], v.waypoints[k + 1]);
                let ab = crate::channel::distance(a, b);
                let via = crate::channel::distance(a, v.position)
                    + crate::channel::distance(v.position, b);
                assert!((via - ab).abs() <= 1e-6 * ab.max(1.0));
            }
        }
    }
}
