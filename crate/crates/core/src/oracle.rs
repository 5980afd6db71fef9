//! Brute-force self-checks behind the `oracle-check` command.
//!
//! Each check recomputes a quantity along an independent path (straight-line
//! formulas, central finite differences, a variance recursion) and compares
//! it with the library.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{migration_latency, LinkRates, MigrationRequest, Site};
use crate::config::{Config, NoiseScale};
use crate::diffusion::{ActionLayout, ChainNoise, DiffusionActor};
use crate::error::Result;
use crate::grad::Matrix;
use crate::trainer::{Agent, Batch, Transition};
use crate::trust::{
    combine_and_update, interaction_layer_reputation, network_layer_reputation, DefenseHistory,
    DetectionReport, InteractionLog, TrustParams,
};
use crate::world::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<10} {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleOptions {
    pub seed: u64,
    /// Perturbs the partial-defense penalty inside the library call so the
    /// trust check must fail.
    pub mutate_trust: bool,
}

pub fn run_all(opts: &OracleOptions) -> Vec<CheckResult> {
    vec![
        check_trust(opts.seed, 1000, opts.mutate_trust),
        check_latency(opts.seed, 1000),
        check_gradients(opts.seed),
        check_diffusion(opts.seed, 100_000),
    ]
}

/// Inputs for one trust evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustCase {
    pub params: TrustParams,
    pub report: DetectionReport,
    pub history: DefenseHistory,
    pub positives: usize,
    pub negatives: usize,
    pub past: f64,
}

impl TrustCase {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let theta1 = rng.random_range(0.05..0.5);
        let total_attacks = rng.random_range(1..200u64);
        let requests = rng.random_range(1..500u64);
        let total_data = rng.random_range(1.0..1e7);
        TrustCase {
            params: TrustParams {
                theta1,
                theta2: rng.random_range(theta1..0.95),
                penalty: rng.random_range(0.0..1.0),
                data_weight: rng.random_range(0.0..1.0),
                layer_weight: rng.random_range(0.0..1.0),
                update_rate: rng.random_range(0.0..1.0),
                threshold: 0.3,
            },
            report: DetectionReport {
                total_data,
                abnormal_data: rng.random_range(0.0..=total_data),
                total_requests: requests,
                successful_responses: rng.random_range(0..=requests),
            },
            history: DefenseHistory {
                successful_defenses: rng.random_range(0..=total_attacks),
                total_attacks,
            },
            positives: rng.random_range(0..50),
            negatives: rng.random_range(0..50),
            past: rng.random_range(0.0..1.0),
        }
    }

    /// Straight-line evaluation of both layers and the update.
    pub fn expected(&self) -> f64 {
        let p = &self.params;
        let r = &self.report;
        let p_data = (r.total_data - r.abnormal_data) / r.total_data;
        let p_ser = r.successful_responses as f64 / r.total_requests as f64;
        let beta = self.history.successful_defenses as f64 / self.history.total_attacks as f64;
        let full = p.data_weight * p_data + (1.0 - p.data_weight) * p_ser;
        let net = if beta >= p.theta2 {
            full
        } else if beta >= p.theta1 {
            p.penalty * full
        } else {
            0.0
        };
        let n = (self.positives + self.negatives) as f64;
        let int = (self.positives as f64 + 1.0) / (n + 2.0);
        let mixed = p.layer_weight * net + (1.0 - p.layer_weight) * int;
        p.update_rate * mixed + (1.0 - p.update_rate) * self.past
    }

    pub fn actual(&self, params: &TrustParams) -> Result<f64> {
        let mut log = InteractionLog::new();
        for i in 0..self.positives + self.negatives {
            log.record(i % 3, i < self.positives);
        }
        let net = network_layer_reputation(&self.report, &self.history, params)?;
        Ok(combine_and_update(net, interaction_layer_reputation(&log), self.past, params).current)
    }
}

pub fn check_trust(seed: u64, cases: usize, mutate: bool) -> CheckResult {
    timed("trust", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut all: Vec<TrustCase> = (0..cases).map(|_| TrustCase::random(&mut rng)).collect();
        for (i, c) in all.iter_mut().take(2).enumerate() {
            let (num, den) = (3, 10);
            c.params.theta1 = 0.3;
            c.params.theta2 = 0.7;
            c.history = DefenseHistory {
                successful_defenses: if i == 0 { num } else { 7 },
                total_attacks: den,
            };
        }
        for c in &all {
            let mut params = c.params;
            if mutate {
                params.penalty = (params.penalty + 0.05).min(1.0) * 0.9;
            }
            worst = worst.max((c.actual(&params)? - c.expected()).abs());
        }
        Ok((worst <= 1e-12, format!("{cases} cases, max abs error {worst:.3e}")))
    })
}

pub fn random_request(rng: &mut ChaCha8Rng) -> MigrationRequest {
    let same = rng.random_bool(0.2);
    MigrationRequest {
        task: TaskSpec {
            upload_size: rng.random_range(1e6..2e9),
            process_size: rng.random_range(1e6..2e9),
        },
        pre_fraction: rng.random_range(0.0..=1.0),
        current: Site {
            compute_capability: rng.random_range(5e7..5e8),
            load: rng.random_range(0.0..5e9),
        },
        pre: Site {
            compute_capability: rng.random_range(5e7..5e8),
            load: rng.random_range(0.0..5e9),
        },
        same_server: same,
        migration_bandwidth: if same {
            f64::INFINITY
        } else {
            rng.random_range(1e8..1e9)
        },
        rates: LinkRates {
            uplink: rng.random_range(1e6..1e9),
            downlink_current: rng.random_range(1e6..1e9),
            downlink_pre: rng.random_range(1e6..1e9),
        },
        cycles_per_bit: rng.random_range(0.1..2.0),
    }
}

/// Total delay by direct substitution.
pub fn expected_total_delay(r: &MigrationRequest) -> f64 {
    let k = if r.same_server { 0.0 } else { r.pre_fraction };
    let size = r.task.process_size;
    let moved = k * size;
    let kept = size - moved;
    let t_up = r.task.upload_size / r.rates.uplink;
    let t_mig = if moved > 0.0 { moved / r.migration_bandwidth } else { 0.0 };
    let t_here = r.current.load / r.current.compute_capability + r.cycles_per_bit * kept / r.current.compute_capability;
    let t_there = t_mig + r.pre.load / r.pre.compute_capability + r.cycles_per_bit * moved / r.pre.compute_capability;
    let t_down = kept / r.rates.downlink_current + if moved > 0.0 { moved / r.rates.downlink_pre } else { 0.0 };
    t_up + t_here.max(t_there) + t_down
}

pub fn worked_example() -> MigrationRequest {
    MigrationRequest {
        task: TaskSpec {
            upload_size: 100.0,
            process_size: 100.0,
        },
        pre_fraction: 0.2,
        current: Site {
            compute_capability: 10.0,
            load: 50.0,
        },
        pre: Site {
            compute_capability: 10.0,
            load: 0.0,
        },
        same_server: false,
        migration_bandwidth: 10.0,
        rates: LinkRates {
            uplink: 50.0,
            downlink_current: 40.0,
            downlink_pre: 40.0,
        },
        cycles_per_bit: 1.0,
    }
}

pub fn check_latency(seed: u64, cases: usize) -> CheckResult {
    timed("latency", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let req = random_request(&mut rng);
            let (got, want) = (migration_latency(&req).total, expected_total_delay(&req));
            worst = worst.max((got - want).abs() / want.abs());
        }
        let example = migration_latency(&worked_example()).total;
        Ok((
            worst <= 1e-9 && example == 17.5,
            format!("{cases} cases, max rel error {worst:.3e}, worked example {example}"),
        ))
    })
}

/// Configuration of the miniature agent used for gradient checks.
pub fn miniature_config() -> Config {
    let mut c = Config::desk();
    c.world.vehicles = 1;
    c.world.servers = 2;
    c.world.satellites = 0;
    c.diffusion.steps = 2;
    c.diffusion.hidden = vec![8];
    c.trainer.critic_hidden = vec![8];
    c.trainer.precision = crate::config::Precision::F64;
    c
}

/// A random batch in the miniature layout with one server masked in some rows.
pub fn miniature_batch(layout: &ActionLayout, obs_dim: usize, rows: usize, rng: &mut ChaCha8Rng) -> Result<Batch<f64>> {
    let mut items = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut masks = vec![vec![true; layout.servers]; layout.vehicles];
        if r % 3 == 1 {
            masks[0][rng.random_range(0..layout.servers)] = false;
        }
        let mut encoding = vec![0.0; layout.width()];
        for v in 0..layout.vehicles {
            encoding[layout.current_start(v) + rng.random_range(0..layout.servers)] = 1.0;
            encoding[layout.pre_start(v) + rng.random_range(0..layout.servers)] = 1.0;
            encoding[layout.fraction_index(v)] = rng.random_range(0.0..1.0);
        }
        items.push(Transition {
            obs: (0..obs_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            next_obs: (0..obs_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            encoding,
            keep: layout.keep_mask(&masks),
            next_keep: vec![true; layout.width()],
            reward: rng.random_range(-5.0..5.0),
            terminal: r == rows - 1,
        });
    }
    let refs: Vec<&Transition> = items.iter().collect();
    Batch::from_transitions(&refs, layout)
}

/// Actor objective along the plain forward path (no tape).
pub fn actor_objective(agent: &Agent<f64>, batch: &Batch<f64>, noise: &ChainNoise<f64>) -> Result<f64> {
    let l = agent.layout();
    let dist = agent.actor.distribution(&batch.obs, &batch.keep, noise)?;
    let mut fractions = Matrix::zeros(batch.len(), l.vehicles);
    for r in 0..batch.len() {
        for v in 0..l.vehicles {
            fractions.set(r, v, dist.get(r, l.fraction_index(v)));
        }
    }
    let input = Matrix::hcat(&[&batch.obs, &fractions])?;
    let q1 = agent.critics[0].forward(&input)?;
    let q2 = agent.critics[1].forward(&input)?;
    let mut total = 0.0;
    for (i, &p) in dist.data().iter().enumerate() {
        total += p * q1.data()[i].min(q2.data()[i]);
    }
    Ok(-total / batch.len() as f64)
}

/// Critic objective along the plain forward path.
pub fn critic_objective(agent: &Agent<f64>, i: usize, batch: &Batch<f64>, targets: &[f64]) -> Result<f64> {
    let q = agent.critics[i].forward(&Matrix::hcat(&[&batch.obs, &batch.fractions])?)?;
    let mut total = 0.0;
    for r in 0..batch.len() {
        let y: f64 = q.row(r).iter().zip(batch.encoding.row(r)).map(|(a, b)| a * b).sum();
        total += (y - targets[r]).powi(2);
    }
    Ok(total / batch.len() as f64)
}

/// Central differences of `f` over every entry of `params`.
pub fn central_differences(params: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let x = params[i];
        params[i] = x + h;
        let up = f(params)?;
        params[i] = x - h;
        let down = f(params)?;
        params[i] = x;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Below this magnitude gradients are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Worst relative errors of the actor and critic gradients on the
/// miniature agent.
pub fn gradient_errors(seed: u64) -> Result<(f64, f64)> {
    let cfg = miniature_config();
    let obs_dim = crate::env::observation_len(1, 2);
    let agent = Agent::<f64>::new(&cfg, obs_dim, seed)?;
    let layout = agent.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AD);
    let batch = miniature_batch(&layout, obs_dim, 6, &mut rng)?;
    let noise = ChainNoise::draw(batch.len(), layout.width(), agent.actor.schedule.steps(), &mut rng);
    let h = 1e-5;

    let (_, tape_grad) = agent.actor_loss(&batch, &noise)?;
    let mut probe = agent.clone();
    let mut params = agent.actor.net.params().to_vec();
    let fd = central_differences(&mut params, h, |p| {
        probe.actor.net.params_mut().copy_from_slice(p);
        actor_objective(&probe, &batch, &noise)
    })?;
    let actor_err = max_relative_error(&tape_grad, &fd, GRADIENT_FLOOR);

    let targets: Vec<f64> = (0..batch.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut critic_err = 0.0f64;
    for i in 0..2 {
        let (_, tape_grad) = agent.critic_loss(i, &batch, &targets)?;
        let mut probe = agent.clone();
        let mut params = agent.critics[i].params().to_vec();
        let fd = central_differences(&mut params, h, |p| {
            probe.critics[i].params_mut().copy_from_slice(p);
            critic_objective(&probe, i, &batch, &targets)
        })?;
        critic_err = critic_err.max(max_relative_error(&tape_grad, &fd, GRADIENT_FLOOR));
    }
    Ok((actor_err, critic_err))
}

pub fn check_gradients(seed: u64) -> CheckResult {
    timed("gradients", || {
        let (a, c) = gradient_errors(seed)?;
        Ok((
            a < 1e-4 && c < 1e-4,
            format!("actor max rel error {a:.3e}, critic {c:.3e}"),
        ))
    })
}

/// `x_0` variance for a zero noise predictor by the backward recursion
/// `v_{t-1} = v_t / alpha_t + s_t^2`, `v_T = 1`, with the schedule rebuilt
/// from its defining formulas.
pub fn zero_net_variance_recursion(steps: usize, beta_min: f64, beta_max: f64, scale: NoiseScale) -> f64 {
    let beta = |t: usize| {
        if steps == 1 {
            beta_min
        } else {
            beta_min + (beta_max - beta_min) * (t - 1) as f64 / (steps - 1) as f64
        }
    };
    let alpha_bar = |t: usize| (1..=t).map(|l| 1.0 - beta(l)).product::<f64>();
    let mut v = 1.0;
    for t in (1..=steps).rev() {
        let tilde = (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
        let s = match scale {
            NoiseScale::HalfSquared => (tilde / 2.0).powi(2),
            NoiseScale::Standard => tilde.sqrt(),
        };
        v = v / (1.0 - beta(t)) + s * s;
    }
    v
}

/// Per-dimension sample mean and variance of `x_0` with every actor
/// parameter zeroed.
pub fn zero_net_statistics(cfg: &Config, samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let layout = ActionLayout::new(1, 2);
    let mut small = cfg.diffusion.clone();
    small.hidden = vec![4];
    let obs_dim = 3;
    let mut actor = DiffusionActor::<f64>::new(&small, layout, obs_dim, seed)?;
    actor.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = layout.width();
    let noise = ChainNoise::draw(samples, w, actor.schedule.steps(), &mut rng);
    let obs = Matrix::zeros(samples, obs_dim);
    let x = actor.raw_sample(&obs, &noise)?;
    let mut mean = vec![0.0; w];
    let mut var = vec![0.0; w];
    for r in 0..samples {
        for (c, &v) in x.row(r).iter().enumerate() {
            mean[c] += v / samples as f64;
        }
    }
    for r in 0..samples {
        for (c, &v) in x.row(r).iter().enumerate() {
            var[c] += (v - mean[c]).powi(2) / (samples - 1) as f64;
        }
    }
    Ok((mean, var))
}

pub fn check_diffusion(seed: u64, samples: usize) -> CheckResult {
    timed("diffusion", || {
        let cfg = Config::desk();
        let d = &cfg.diffusion;
        let want = zero_net_variance_recursion(d.steps, d.beta_min, d.beta_max, d.noise_scale);
        let (mean, var) = zero_net_statistics(&cfg, samples, seed)?;
        let std = want.sqrt();
        let worst_mean = mean.iter().map(|m| m.abs() / std).fold(0.0, f64::max);
        let worst_var = var.iter().map(|v| (v - want).abs() / want).fold(0.0, f64::max);
        Ok((
            worst_mean <= 0.02 && worst_var <= 0.02,
            format!(
                "{samples} samples, variance {want:.4}, max |mean|/std {worst_mean:.4}, max var rel error {worst_var:.4}"
            ),
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trust_and_latency_checks_pass_and_mutation_fails() {
        assert!(check_trust(1, 200, false).passed);
        assert!(!check_trust(1, 200, true).passed);
        assert!(check_latency(1, 200).passed);
    }

    #[test]
    fn recursion_matches_closed_form() {
        let cfg = Config::desk();
        let s = crate::diffusion::DiffusionSchedule::from_config(&cfg.diffusion).unwrap();
        let d = &cfg.diffusion;
        let r = zero_net_variance_recursion(d.steps, d.beta_min, d.beta_max, d.noise_scale);
        assert!((r - s.zero_net_variance()).abs() < 1e-12 * r);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[1e-9], &[2e-9], 1e-6), 1e-9 / 1e-6);
        assert_eq!(max_relative_error(&[2.0], &[1.0], 1e-6), 0.5);
    }
}
