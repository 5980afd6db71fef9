//! Link budget and the migration latency pipeline.
//!
//! Everything here is a pure function of its arguments.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::world::{EdgeServer, Position, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConstants {
    /// m/s
    pub speed_of_light: f64,
    /// Hz
    pub carrier_frequency: f64,
}

impl ChannelConstants {
    pub fn for_server(server: &EdgeServer, speed_of_light: f64) -> Self {
        ChannelConstants {
            speed_of_light,
            carrier_frequency: server.carrier_frequency,
        }
    }
}

/// Per-slot delay components for one vehicle, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LatencyBreakdown {
    pub uplink: f64,
    pub migration: f64,
    pub queue_current: f64,
    pub queue_pre: f64,
    pub process_current: f64,
    pub process_pre: f64,
    pub process: f64,
    pub downlink: f64,
    pub total: f64,
}

/// 3-D Euclidean distance.
pub fn distance(a: Position, b: Position) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Free-space path gain scaled by the server's gain coefficients.
pub fn path_gain(coefficient: f64, dist: f64, consts: &ChannelConstants) -> Result<f64> {
    if !(dist > 0.0) {
        return Err(Error::Domain(format!(
            "channel gain needs a positive distance (colocated endpoints, got {dist})"
        )));
    }
    let ratio = consts.speed_of_light / (4.0 * PI * consts.carrier_frequency * dist);
    Ok(coefficient * ratio * ratio)
}

pub fn channel_gain(server: &EdgeServer, dist: f64, consts: &ChannelConstants) -> Result<f64> {
    path_gain(server.gains.coefficient(), dist, consts)
}

/// Shannon rate `B log2(1 + p h / sigma^2)` in bits/s.
pub fn link_rate(bandwidth: f64, power: f64, gain: f64, noise: f64) -> f64 {
    bandwidth * (1.0 + power * gain / noise).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRates {
    pub uplink: f64,
    pub downlink_current: f64,
    pub downlink_pre: f64,
}

/// Compute state of one processing server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    /// cycles/s
    pub compute_capability: f64,
    /// cycles
    pub load: f64,
}

impl Site {
    pub fn of(server: &EdgeServer) -> Self {
        Site {
            compute_capability: server.compute_capability,
            load: server.load,
        }
    }

    pub fn queue_delay(&self) -> f64 {
        self.load / self.compute_capability
    }
}

/// Everything the latency pipeline needs for one vehicle's decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MigrationRequest {
    pub task: TaskSpec,
    pub pre_fraction: f64,
    pub current: Site,
    pub pre: Site,
    /// `s == s_p`: nothing is pre-migrated.
    pub same_server: bool,
    /// bits/s between current and pre-migration server
    pub migration_bandwidth: f64,
    pub rates: LinkRates,
    pub cycles_per_bit: f64,
}

/// Upload, parallel split processing and download delays of one migration.
pub fn migration_latency(req: &MigrationRequest) -> LatencyBreakdown {
    let k = if req.same_server {
        0.0
    } else {
        req.pre_fraction.clamp(0.0, 1.0)
    };
    let d_task = req.task.process_size;
    let d_mig = k * d_task;
    let d_local = d_task - d_mig;

    let uplink = req.task.upload_size / req.rates.uplink;
    let migration = if d_mig > 0.0 {
        d_mig / req.migration_bandwidth
    } else {
        0.0
    };
    let queue_current = req.current.queue_delay();
    let queue_pre = req.pre.queue_delay();
    let process_current =
        queue_current + req.cycles_per_bit * d_local / req.current.compute_capability;
    let process_pre =
        migration + queue_pre + req.cycles_per_bit * d_mig / req.pre.compute_capability;
    let process = process_current.max(process_pre);
    let mut downlink = d_local / req.rates.downlink_current;
    if d_mig > 0.0 {
        downlink += d_mig / req.rates.downlink_pre;
    }
    LatencyBreakdown {
        uplink,
        migration,
        queue_current,
        queue_pre,
        process_current,
        process_pre,
        process,
        downlink,
        total: uplink + process + downlink,
    }
}
