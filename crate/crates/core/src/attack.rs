//! Attack scheduling and per-slot attack effects on edge servers.
//!
//! Three attack kinds are modelled:
//!
//! * direct DDoS saturates the target's load and inflates abnormal traffic
//!   and failed responses; users of the target report negative evaluations;
//! * indirect DDoS hits the `k` nearest RSUs of the target with direct-like
//!   effects while the target itself sees extra load and fewer responses;
//! * co-resident attacks add a small amount of load and anomalies and never
//!   touch user evaluations.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::channel::distance;
use crate::config::{AttackConfig, AttackScenario};
use crate::error::{Error, Result};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AttackKind {
    DirectDdos,
    IndirectDdos,
    CoResident,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::DirectDdos => "direct_ddos",
            AttackKind::IndirectDdos => "indirect_ddos",
            AttackKind::CoResident => "co_resident",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttackEvent {
    pub kind: AttackKind,
    pub target: usize,
    pub start: usize,
    pub duration: usize,
}

impl AttackEvent {
    pub fn is_active(&self, slot: usize) -> bool {
        slot >= self.start && slot < self.start + self.duration
    }
}

/// Attack impact on one server for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AttackEffects {
    /// cycles
    pub load_add: f64,
    pub abnormal_data_rate_add: f64,
    pub response_failure_rate_add: f64,
    pub force_negative_evaluations: bool,
}

impl AttackEffects {
    pub fn is_zero(&self) -> bool {
        *self == AttackEffects::default()
    }

    fn absorb(&mut self, other: AttackEffects) {
        self.load_add += other.load_add;
        self.abnormal_data_rate_add = (self.abnormal_data_rate_add + other.abnormal_data_rate_add).min(1.0);
        self.response_failure_rate_add =
            (self.response_failure_rate_add + other.response_failure_rate_add).min(1.0);
        self.force_negative_evaluations |= other.force_negative_evaluations;
    }
}

fn rate_for(cfg: &AttackConfig, kind: AttackKind) -> f64 {
    let enabled = match cfg.scenario {
        AttackScenario::None => false,
        AttackScenario::Hybrid => true,
        AttackScenario::Direct => kind == AttackKind::DirectDdos,
        AttackScenario::Indirect => kind == AttackKind::IndirectDdos,
        AttackScenario::Coresident => kind == AttackKind::CoResident,
    };
    if !enabled {
        return 0.0;
    }
    match kind {
        AttackKind::DirectDdos => cfg.direct_rate,
        AttackKind::IndirectDdos => cfg.indirect_rate,
        AttackKind::CoResident => cfg.coresident_rate,
    }
}

/// Draws an episode's attacks: Poisson arrivals per slot for every enabled
/// kind, uniform targets and uniform integer durations.
pub fn schedule_attacks(
    cfg: &AttackConfig,
    episode_length: usize,
    num_servers: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<AttackEvent> {
    let mut events = Vec::new();
    if num_servers == 0 {
        return events;
    }
    let (dmin, dmax) = (
        cfg.duration_slots.min().round().max(1.0) as usize,
        cfg.duration_slots.max().round().max(1.0) as usize,
    );
    for kind in [AttackKind::DirectDdos, AttackKind::IndirectDdos, AttackKind::CoResident] {
        let rate = rate_for(cfg, kind);
        if rate <= 0.0 {
            continue;
        }
        let arrivals = Poisson::new(rate).expect("positive rate");
        for start in 0..episode_length {
            let n = arrivals.sample(rng) as usize;
            for _ in 0..n {
                events.push(AttackEvent {
                    kind,
                    target: rng.random_range(0..num_servers),
                    start,
                    duration: rng.random_range(dmin..=dmax.max(dmin)),
                });
            }
        }
    }
    events.sort_by_key(|e| (e.start, e.kind, e.target, e.duration));
    events
}

/// The `k` RSUs closest to `target` (excluding it), ties broken by index.
pub fn nearest_rsus(world: &World, target: usize, k: usize) -> Vec<usize> {
    let origin = world.servers[target].position;
    let mut others: Vec<(f64, usize)> = world
        .servers
        .iter()
        .filter(|s| s.id != target && !s.is_satellite())
        .map(|s| (distance(origin, s.position), s.id))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Combined effects of `events` on every server at `slot`.
pub fn apply_attacks(
    world: &World,
    cfg: &AttackConfig,
    events: &[AttackEvent],
    slot: usize,
) -> Vec<AttackEffects> {
    let mut effects = vec![AttackEffects::default(); world.num_servers()];
    let direct_like = |max_load: f64| AttackEffects {
        load_add: max_load,
        abnormal_data_rate_add: cfg.direct_abnormal_add,
        response_failure_rate_add: cfg.direct_failure_add,
        force_negative_evaluations: true,
    };
    for ev in events.iter().filter(|e| e.is_active(slot)) {
        let target = &world.servers[ev.target];
        match ev.kind {
            AttackKind::DirectDdos => effects[ev.target].absorb(direct_like(target.max_load)),
            AttackKind::IndirectDdos => {
                for n in nearest_rsus(world, ev.target, cfg.indirect_neighbors) {
                    effects[n].absorb(direct_like(world.servers[n].max_load));
                }
                effects[ev.target].absorb(AttackEffects {
                    load_add: cfg.indirect_load_fraction * target.max_load,
                    abnormal_data_rate_add: 0.0,
                    response_failure_rate_add: cfg.indirect_failure_add,
                    force_negative_evaluations: false,
                });
            }
            AttackKind::CoResident => effects[ev.target].absorb(AttackEffects {
                load_add: cfg.coresident_load_fraction * target.max_load,
                abnormal_data_rate_add: cfg.coresident_abnormal_add,
                response_failure_rate_add: cfg.coresident_failure_add,
                force_negative_evaluations: false,
            }),
        }
    }
    effects
}

/// Writes a schedule as CSV (`kind,target,start,duration`).
pub fn write_schedule_csv<W: Write>(events: &[AttackEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "target", "start", "duration"])?;
    for e in events {
        w.write_record([
            e.kind.name().to_string(),
            e.target.to_string(),
            e.start.to_string(),
            e.duration.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("attack schedule", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::world::build_scenario;
    use rand::SeedableRng;

    fn cfg() -> Config {
        Config::desk()
    }

    #[test]
    fn zero_rates_schedule_nothing() {
        let mut c = cfg().attack;
        c.direct_rate = 0.0;
        c.indirect_rate = 0.0;
        c.coresident_rate = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(schedule_attacks(&c, 100, 6, &mut rng).is_empty());
        let mut c = cfg().attack;
        c.scenario = AttackScenario::None;
        assert!(schedule_attacks(&c, 100, 6, &mut rng).is_empty());
    }

    #[test]
    fn high_rate_almost_surely_attacks() {
        let mut c = cfg().attack;
        c.direct_rate = 0.1;
        let hits = (0..1000u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                !schedule_attacks(&c, 100, 6, &mut rng).is_empty()
            })
            .count();
        // P(no arrival of any kind in 100 slots) = exp(-100 * 0.15) ~ 3e-7.
        assert_eq!(hits, 1000);
    }

    #[test]
    fn schedule_is_deterministic() {
        let c = cfg().attack;
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            schedule_attacks(&c, 200, 6, &mut rng)
        };
        assert_eq!(run(), run());
        for e in run() {
            assert!(e.duration >= 1 && e.target < 6);
        }
    }

    #[test]
    fn direct_attack_saturates_target_for_its_window() {
        let config = cfg();
        let world = build_scenario(&config).unwrap();
        let ev = AttackEvent {
            kind: AttackKind::DirectDdos,
            target: 1,
            start: 3,
            duration: 2,
        };
        for slot in 0..8 {
            let fx = apply_attacks(&world, &config.attack, &[ev], slot);
            let mut w = world.clone();
            w.apply_load_effects(&fx.iter().map(|e| e.load_add).collect::<Vec<_>>());
            if ev.is_active(slot) {
                assert_eq!(w.servers[1].load, w.servers[1].max_load);
                assert!(fx[1].force_negative_evaluations);
            } else {
                assert!(fx.iter().all(AttackEffects::is_zero));
            }
        }
    }

    #[test]
    fn indirect_attack_hits_nearest_rsus() {
        let config = Config::paper();
        let world = build_scenario(&config).unwrap();
        for target in 0..world.num_servers() {
            let ev = AttackEvent {
                kind: AttackKind::IndirectDdos,
                target,
                start: 0,
                duration: 1,
            };
            let fx = apply_attacks(&world, &config.attack, &[ev], 0);
            let hit: Vec<usize> = (0..world.num_servers())
                .filter(|&i| fx[i].force_negative_evaluations)
                .collect();
            assert_eq!(hit.len(), 2);
            // brute force: every non-hit RSU is at least as far as every hit one
            let p = world.servers[target].position;
            let far_hit = hit
                .iter()
                .map(|&i| distance(p, world.servers[i].position))
                .fold(0.0, f64::max);
            for s in world.servers.iter().filter(|s| !s.is_satellite() && s.id != target) {
                if !hit.contains(&s.id) {
                    assert!(distance(p, s.position) >= far_hit);
                }
            }
            assert!(hit.iter().all(|&i| !world.servers[i].is_satellite() && i != target));
            assert!(!fx[target].force_negative_evaluations);
        }
    }

    #[test]
    fn coresident_is_stealthy() {
        let config = cfg();
        let world = build_scenario(&config).unwrap();
        let ev = AttackEvent {
            kind: AttackKind::CoResident,
            target: 0,
            start: 0,
            duration: 5,
        };
        let fx = apply_attacks(&world, &config.attack, &[ev], 2);
        assert!(!fx[0].force_negative_evaluations);
        assert!(fx[0].load_add > 0.0 && fx[0].load_add < world.servers[0].max_load);
    }

    #[test]
    fn schedule_csv_has_header_and_rows() {
        let ev = AttackEvent {
            kind: AttackKind::CoResident,
            target: 2,
            start: 4,
            duration: 3,
        };
        let mut buf = Vec::new();
        write_schedule_csv(&[ev], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "kind,target,start,duration\nco_resident,2,4,3\n"
        );
    }
}
