//! Diffusion-policy actor.
//!
//! The actor turns Gaussian noise into a composite action vector by running
//! a short reverse-denoising chain conditioned on the observation. Per
//! vehicle the vector holds `S` logits for the serving server, `S` logits
//! for the pre-migration server and one entry for the pre-migration
//! fraction. Processing masks infeasible logits, softmaxes both logit blocks
//! and maps the fraction entry through `(tanh(x) + 1) / 2`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::config::{DiffusionConfig, NoiseScale};
use crate::env::{HybridAction, VehicleAction};
use crate::error::{Error, Result};
use crate::grad::tape::softmax_in_place;
use crate::grad::{time_embedding, Activation, DenseNet, Matrix, ParamId, Real, Segment, Tape, Var};

/// Noise tables for `T` denoising steps, indexed by `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[0] = 1`, `alpha_bars[t] = prod_{l <= t} alphas[l]`.
    alpha_bars: Vec<f64>,
    posterior: Vec<f64>,
    noise_scale: NoiseScale,
}

impl DiffusionSchedule {
    /// Linear betas from `beta_min` at `t = 1` to `beta_max` at `t = T`.
    pub fn new(steps: usize, beta_min: f64, beta_max: f64, noise_scale: NoiseScale) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("a schedule needs at least one step".into()));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "betas need 0 < min <= max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut betas = vec![0.0];
        for i in 0..steps {
            let frac = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            betas.push(beta_min + (beta_max - beta_min) * frac);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = vec![1.0];
        for t in 1..=steps {
            alpha_bars.push(alpha_bars[t - 1] * alphas[t]);
        }
        let mut posterior = vec![0.0];
        for t in 1..=steps {
            posterior.push((1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t]);
        }
        Ok(DiffusionSchedule {
            betas,
            alphas,
            alpha_bars,
            posterior,
            noise_scale,
        })
    }

    pub fn from_config(cfg: &DiffusionConfig) -> Result<Self> {
        Self::new(cfg.steps, cfg.beta_min, cfg.beta_max, cfg.noise_scale)
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `((1 - abar_{t-1}) / (1 - abar_t)) beta_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior[t]
    }

    /// Scale applied to the fresh Gaussian noise at step `t`.
    pub fn noise_std(&self, t: usize) -> f64 {
        let v = self.posterior[t];
        match self.noise_scale {
            NoiseScale::HalfSquared => (v / 2.0).powi(2),
            NoiseScale::Standard => v.sqrt(),
        }
    }

    /// Variance of `x_0` when the noise predictor is identically zero:
    /// `1 / abar_T + sum_t s_t^2 / abar_{t-1}`. The mean is zero.
    pub fn zero_net_variance(&self) -> f64 {
        let t_max = self.steps();
        let mut v = 1.0 / self.alpha_bars[t_max];
        for t in 1..=t_max {
            v += self.noise_std(t).powi(2) / self.alpha_bars[t - 1];
        }
        v
    }

    /// One-shot forward noising `x_t ~ N(sqrt(abar_t) x_0, (1 - abar_t) I)`.
    pub fn forward_noise(&self, x0: &[f64], t: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if t == 0 || t > self.steps() {
            return Err(Error::Contract(format!("step {t} outside 1..={}", self.steps())));
        }
        let (mean, std) = (self.alpha_bars[t].sqrt(), (1.0 - self.alpha_bars[t]).sqrt());
        Ok(x0
            .iter()
            .map(|&x| {
                let e: f64 = StandardNormal.sample(rng);
                mean * x + std * e
            })
            .collect())
    }
}

/// Index arithmetic for the composite action vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ActionLayout {
    pub vehicles: usize,
    pub servers: usize,
}

impl ActionLayout {
    pub fn new(vehicles: usize, servers: usize) -> Self {
        ActionLayout { vehicles, servers }
    }

    pub fn block(&self) -> usize {
        2 * self.servers + 1
    }

    pub fn width(&self) -> usize {
        self.vehicles * self.block()
    }

    pub fn current_start(&self, v: usize) -> usize {
        v * self.block()
    }

    pub fn pre_start(&self, v: usize) -> usize {
        v * self.block() + self.servers
    }

    pub fn fraction_index(&self, v: usize) -> usize {
        v * self.block() + 2 * self.servers
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(3 * self.vehicles);
        for v in 0..self.vehicles {
            out.push(Segment::Softmax {
                start: self.current_start(v),
                len: self.servers,
            });
            out.push(Segment::Softmax {
                start: self.pre_start(v),
                len: self.servers,
            });
            out.push(Segment::HalfTanh {
                index: self.fraction_index(v),
            });
        }
        out
    }

    /// Which entries survive masking. A vehicle with no feasible server
    /// keeps every logit so its block stays a valid distribution.
    pub fn keep_mask(&self, masks: &[Vec<bool>]) -> Vec<bool> {
        let mut keep = vec![true; self.width()];
        for (v, m) in masks.iter().enumerate().take(self.vehicles) {
            if !m.iter().any(|&ok| ok) {
                continue;
            }
            for (s, &ok) in m.iter().enumerate() {
                keep[self.current_start(v) + s] = ok;
                keep[self.pre_start(v) + s] = ok;
            }
        }
        keep
    }

    /// One-hot server choices plus the fraction, in the composite layout.
    pub fn encode(&self, action: &HybridAction) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        for (v, a) in action.0.iter().enumerate() {
            out[self.current_start(v) + a.current] = 1.0;
            out[self.pre_start(v) + a.pre] = 1.0;
            out[self.fraction_index(v)] = a.pre_fraction;
        }
        out
    }

    pub fn fractions(&self, composite: &[f64]) -> Vec<f64> {
        (0..self.vehicles).map(|v| composite[self.fraction_index(v)]).collect()
    }
}

/// Masks logits, softmaxes both server blocks and squashes the fraction
/// entry.
pub fn process<F: Real>(layout: &ActionLayout, raw: &[F], keep: &[bool], mask_logit: f64) -> Vec<F> {
    let fill = F::of(mask_logit);
    let mut out: Vec<F> = raw
        .iter()
        .zip(keep)
        .map(|(&x, &k)| if k { x } else { fill })
        .collect();
    for v in 0..layout.vehicles {
        let n = layout.servers;
        softmax_in_place(&mut out[layout.current_start(v)..layout.current_start(v) + n]);
        softmax_in_place(&mut out[layout.pre_start(v)..layout.pre_start(v) + n]);
        let i = layout.fraction_index(v);
        out[i] = (out[i].tanh() + F::one()) * F::of(0.5);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Categorical server sampling and Gaussian exploration on the fraction.
    Train,
    /// Argmax servers and the processed fraction as is.
    Eval,
}

/// Gaussian draws for one reverse chain over a batch: the start `x_T` and
/// one noise matrix per step, `steps[i]` being used at `t = T - i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise<F> {
    pub start: Matrix<F>,
    pub steps: Vec<Matrix<F>>,
}

impl<F: Real> ChainNoise<F> {
    pub fn draw(rows: usize, width: usize, steps: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut gaussian = || {
            let data = (0..rows * width)
                .map(|_| F::of(StandardNormal.sample(&mut *rng)))
                .collect();
            Matrix::from_vec(rows, width, data).expect("sized")
        };
        let start = gaussian();
        let steps = (0..steps).map(|_| gaussian()).collect();
        ChainNoise { start, steps }
    }

    pub fn zeros(rows: usize, width: usize, steps: usize) -> Self {
        ChainNoise {
            start: Matrix::zeros(rows, width),
            steps: vec![Matrix::zeros(rows, width); steps],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyOutput {
    /// Processed composite distribution.
    pub distribution: Vec<f64>,
    pub action: HybridAction,
    /// Some vehicle had no feasible server; the environment will penalize.
    pub needs_repair: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionActor<F> {
    pub net: DenseNet<F>,
    pub schedule: DiffusionSchedule,
    pub layout: ActionLayout,
    obs_dim: usize,
    time_dim: usize,
    mask_logit: f64,
    exploration_std: f64,
}

impl<F: Real> DiffusionActor<F> {
    /// The noise predictor maps `[x_t, embed(t), observation]` through SiLU
    /// hidden layers to an unbounded output that the step squashes by tanh.
    pub fn new(cfg: &DiffusionConfig, layout: ActionLayout, obs_dim: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![layout.width() + cfg.time_embedding + obs_dim];
        dims.extend(&cfg.hidden);
        dims.push(layout.width());
        Ok(DiffusionActor {
            net: DenseNet::new(&dims, Activation::Silu, Activation::Identity, seed)?,
            schedule: DiffusionSchedule::from_config(cfg)?,
            layout,
            obs_dim,
            time_dim: cfg.time_embedding,
            mask_logit: cfg.mask_logit,
            exploration_std: cfg.exploration_std,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn with_net(&self, net: DenseNet<F>) -> Result<Self> {
        if net.dims() != self.net.dims() {
            return Err(Error::Contract("replacement network has a different shape".into()));
        }
        Ok(DiffusionActor { net, ..self.clone() })
    }

    fn embedding(&self, t: usize, rows: usize) -> Matrix<F> {
        let e: Vec<F> = time_embedding(t, self.time_dim).into_iter().map(F::of).collect();
        let mut m = Matrix::zeros(rows, self.time_dim);
        for i in 0..rows {
            m.row_mut(i).copy_from_slice(&e);
        }
        m
    }

    fn coefficients(&self, t: usize) -> (F, F, F) {
        let s = &self.schedule;
        (
            F::of(1.0 / s.alpha(t).sqrt()),
            F::of(s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt()),
            F::of(s.noise_std(t)),
        )
    }

    fn check(&self, obs: &Matrix<F>, noise: &ChainNoise<F>) -> Result<()> {
        let (rows, w) = (obs.rows(), self.layout.width());
        if obs.cols() != self.obs_dim {
            return Err(Error::Contract(format!(
                "actor expects {} observation entries, got {}",
                self.obs_dim,
                obs.cols()
            )));
        }
        if noise.start.shape() != (rows, w)
            || noise.steps.len() != self.schedule.steps()
            || noise.steps.iter().any(|n| n.shape() != (rows, w))
        {
            return Err(Error::Contract("chain noise does not match the batch".into()));
        }
        Ok(())
    }

    /// One reverse step `x_t -> x_{t-1}`.
    pub fn denoise_step(&self, x_t: &Matrix<F>, t: usize, obs: &Matrix<F>, noise: &Matrix<F>) -> Result<Matrix<F>> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::Contract(format!("step {t} outside the schedule")));
        }
        let input = Matrix::hcat(&[x_t, &self.embedding(t, x_t.rows()), obs])?;
        let eps = self.net.forward(&input)?;
        let (c_mean, c_eps, c_noise) = self.coefficients(t);
        let mut out = x_t.clone();
        for ((o, &e), &n) in out.data_mut().iter_mut().zip(eps.data()).zip(noise.data()) {
            *o = c_mean * (*o - c_eps * e.tanh()) + c_noise * n;
        }
        Ok(out)
    }

    /// Unprocessed `x_0` for a batch of observations.
    pub fn raw_sample(&self, obs: &Matrix<F>, noise: &ChainNoise<F>) -> Result<Matrix<F>> {
        self.check(obs, noise)?;
        let mut x = noise.start.clone();
        for (i, t) in (1..=self.schedule.steps()).rev().enumerate() {
            x = self.denoise_step(&x, t, obs, &noise.steps[i])?;
        }
        Ok(x)
    }

    /// Records the full chain and the processing head on `tape`. `keep` is
    /// the row-major keep mask for the whole batch.
    pub fn distribution_tape(
        &self,
        tape: &mut Tape<'_, F>,
        p: ParamId,
        obs: Var,
        keep: Vec<bool>,
        noise: &ChainNoise<F>,
    ) -> Result<Var> {
        self.check(tape.value(obs), noise)?;
        let rows = noise.start.rows();
        let mut x = tape.constant(noise.start.clone());
        for (i, t) in (1..=self.schedule.steps()).rev().enumerate() {
            let emb = tape.constant(self.embedding(t, rows));
            let input = tape.concat(&[x, emb, obs])?;
            let eps = self.net.forward_tape(tape, p, input)?;
            let (c_mean, c_eps, c_noise) = self.coefficients(t);
            let squashed = tape.tanh(eps);
            let scaled = tape.scale(squashed, c_eps);
            let centered = tape.sub(x, scaled)?;
            x = tape.scale(centered, c_mean);
            if c_noise != F::zero() {
                let n = tape.constant(noise.steps[i].map(|v| v * c_noise));
                x = tape.add(x, n)?;
            }
        }
        let masked = tape.mask_fill(x, keep, F::of(self.mask_logit))?;
        tape.hybrid_head(masked, self.layout.segments())
    }

    /// Processed distributions for a batch, in the actor's precision. `keep`
    /// is the row-major keep mask for the whole batch.
    pub fn distribution(&self, obs: &Matrix<F>, keep: &[bool], noise: &ChainNoise<F>) -> Result<Matrix<F>> {
        let raw = self.raw_sample(obs, noise)?;
        let w = self.layout.width();
        if keep.len() != raw.rows() * w {
            return Err(Error::Contract("keep mask does not match the batch".into()));
        }
        let mut out = Vec::with_capacity(raw.rows() * w);
        for r in 0..raw.rows() {
            out.extend(process(&self.layout, raw.row(r), &keep[r * w..(r + 1) * w], self.mask_logit));
        }
        Matrix::from_vec(raw.rows(), w, out)
    }

    /// Processed distributions and actions for a batch of observations.
    pub fn generate_batch(
        &self,
        obs: &Matrix<F>,
        masks: &[Vec<Vec<bool>>],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<PolicyOutput>> {
        if masks.len() != obs.rows() {
            return Err(Error::Contract("one mask set per observation row is required".into()));
        }
        let noise = ChainNoise::draw(obs.rows(), self.layout.width(), self.schedule.steps(), rng);
        let raw = self.raw_sample(obs, &noise)?;
        let mut out = Vec::with_capacity(obs.rows());
        for (r, m) in masks.iter().enumerate() {
            let raw_row: Vec<f64> = raw.row(r).iter().map(|v| v.as_f64()).collect();
            let keep = self.layout.keep_mask(m);
            let distribution = process(&self.layout, &raw_row, &keep, self.mask_logit);
            let action = self.select(&distribution, mode, rng);
            out.push(PolicyOutput {
                distribution,
                action,
                needs_repair: m.iter().any(|row| !row.iter().any(|&ok| ok)),
            });
        }
        Ok(out)
    }

    pub fn generate(&self, obs: &[f64], masks: &[Vec<bool>], mode: Mode, rng: &mut ChaCha8Rng) -> Result<PolicyOutput> {
        let o = Matrix::from_vec(1, obs.len(), obs.iter().map(|&v| F::of(v)).collect())?;
        Ok(self.generate_batch(&o, &[masks.to_vec()], mode, rng)?.remove(0))
    }

    fn select(&self, dist: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> HybridAction {
        let l = &self.layout;
        let n = l.servers;
        let pick = |block: &[f64], rng: &mut ChaCha8Rng| match mode {
            Mode::Eval => argmax(block),
            Mode::Train => sample_categorical(block, rng),
        };
        let mut actions = Vec::with_capacity(l.vehicles);
        for v in 0..l.vehicles {
            let current = pick(&dist[l.current_start(v)..l.current_start(v) + n], rng);
            let pre = pick(&dist[l.pre_start(v)..l.pre_start(v) + n], rng);
            let mut fraction = dist[l.fraction_index(v)];
            if mode == Mode::Train && self.exploration_std > 0.0 {
                let noise = Normal::new(0.0, self.exploration_std).expect("finite std");
                fraction = (fraction + noise.sample(rng)).clamp(0.0, 1.0);
            }
            actions.push(VehicleAction {
                current,
                pre,
                pre_fraction: fraction,
            });
        }
        HybridAction(actions)
    }
}

/// First index of the largest entry.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw that never returns a zero-probability entry.
pub fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = argmax(probs);
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn schedule() -> DiffusionSchedule {
        DiffusionSchedule::new(5, 0.05, 0.5, NoiseScale::HalfSquared).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = DiffusionSchedule::new(1, 0.2, 0.2, NoiseScale::HalfSquared).unwrap();
        assert_abs_diff_eq!(s.alpha_bar(1), 0.8);
        assert_eq!(s.posterior_variance(1), 0.0);
    }

    #[test]
    fn constant_betas_give_geometric_products() {
        let s = DiffusionSchedule::new(4, 0.1, 0.1, NoiseScale::Standard).unwrap();
        for t in 1..=4 {
            assert_abs_diff_eq!(s.alpha_bar(t), 0.9f64.powi(t as i32), epsilon = 1e-15);
        }
    }

    #[test]
    fn alpha_bar_strictly_decreases_and_bad_ranges_fail() {
        let s = schedule();
        for t in 1..=5 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(DiffusionSchedule::new(3, 0.5, 0.1, NoiseScale::HalfSquared).is_err());
        assert!(DiffusionSchedule::new(3, 0.0, 0.1, NoiseScale::HalfSquared).is_err());
        assert!(DiffusionSchedule::new(0, 0.1, 0.1, NoiseScale::HalfSquared).is_err());
    }

    #[test]
    fn noise_scale_variants() {
        let s = schedule();
        let std = DiffusionSchedule::new(5, 0.05, 0.5, NoiseScale::Standard).unwrap();
        for t in 1..=5 {
            let v = s.posterior_variance(t);
            assert_abs_diff_eq!(s.noise_std(t), (v / 2.0) * (v / 2.0));
            assert_abs_diff_eq!(std.noise_std(t), v.sqrt());
        }
    }

    #[test]
    fn forward_noise_limits() {
        let s = DiffusionSchedule::new(2, 1e-12, 1e-12, NoiseScale::HalfSquared).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = s.forward_noise(&[1.5, -2.0], 2, &mut rng).unwrap();
        assert_abs_diff_eq!(x[0], 1.5, epsilon = 1e-5);
        assert_abs_diff_eq!(x[1], -2.0, epsilon = 1e-5);
        let s = schedule();
        let a = s.forward_noise(&[0.0; 3], 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = s.forward_noise(&[0.0; 3], 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(s.forward_noise(&[0.0], 0, &mut rng).is_err());
    }

    #[test]
    fn forward_noise_variance() {
        let s = schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let x = s.forward_noise(&vec![0.0; n], 3, &mut rng).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let expected = 1.0 - s.alpha_bar(3);
        assert!((var - expected).abs() / expected < 0.02);
    }

    fn actor(servers: usize) -> DiffusionActor<f64> {
        let cfg = Config::desk().diffusion;
        let mut small = cfg.clone();
        small.hidden = vec![16];
        DiffusionActor::new(&small, ActionLayout::new(2, servers), 7, 3).unwrap()
    }

    #[test]
    fn zero_net_step_divides_by_root_alpha() {
        let mut a = actor(3);
        a.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let w = a.layout.width();
        let x = Matrix::from_vec(1, w, (0..w).map(|i| i as f64 - 3.0).collect()).unwrap();
        let obs = Matrix::zeros(1, 7);
        let out = a.denoise_step(&x, 3, &obs, &Matrix::zeros(1, w)).unwrap();
        let c = 1.0 / a.schedule.alpha(3).sqrt();
        for (o, i) in out.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(*o, i * c, epsilon = 1e-12);
        }
    }

    #[test]
    fn last_step_ignores_noise() {
        let a = actor(3);
        let w = a.layout.width();
        let x = Matrix::filled(1, w, 0.3);
        let obs = Matrix::filled(1, 7, 0.1);
        let quiet = a.denoise_step(&x, 1, &obs, &Matrix::zeros(1, w)).unwrap();
        let loud = a.denoise_step(&x, 1, &obs, &Matrix::filled(1, w, 5.0)).unwrap();
        assert_eq!(quiet, loud);
    }

    #[test]
    fn output_layout_and_validity() {
        let a = actor(4);
        assert_eq!(a.layout.width(), 2 * 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let masks = vec![vec![true, false, true, true], vec![false, false, true, false]];
        for mode in [Mode::Train, Mode::Eval] {
            let out = a.generate(&[0.2; 7], &masks, mode, &mut rng).unwrap();
            assert_eq!(out.distribution.len(), 18);
            let l = a.layout;
            for v in 0..2 {
                for start in [l.current_start(v), l.pre_start(v)] {
                    let block = &out.distribution[start..start + 4];
                    assert_abs_diff_eq!(block.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    for (s, &p) in block.iter().enumerate() {
                        if !masks[v][s] {
                            assert!(p <= 1e-12);
                        }
                    }
                }
                let k = out.action.0[v].pre_fraction;
                assert!((0.0..=1.0).contains(&k));
            }
            assert_eq!(out.action.0[1].current, 2);
            assert_eq!(out.action.0[1].pre, 2);
        }
    }

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let l = ActionLayout::new(1, 4);
        let d = process(&l, &[0.7; 9], &[true; 9], -1e9);
        for p in &d[0..8] {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(d[8], (0.7f64.tanh() + 1.0) / 2.0);
    }

    #[test]
    fn eval_generation_is_reproducible() {
        let a = actor(3);
        let masks = vec![vec![true; 3]; 2];
        let x = a.generate(&[0.5; 7], &masks, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let y = a.generate(&[0.5; 7], &masks, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn tape_chain_matches_plain_chain() {
        let a = actor(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = Matrix::from_vec(2, 7, (0..14).map(|i| i as f64 / 14.0).collect()).unwrap();
        let noise = ChainNoise::<f64>::draw(2, a.layout.width(), a.schedule.steps(), &mut rng);
        let masks = vec![vec![vec![true, false, true]; 2]; 2];
        let raw = a.raw_sample(&obs, &noise).unwrap();
        let mut tape = Tape::new();
        let p = tape.params(a.net.params(), true);
        let o = tape.constant(obs.clone());
        let keep: Vec<bool> = masks.iter().flat_map(|m| a.layout.keep_mask(m)).collect();
        let y = a.distribution_tape(&mut tape, p, o, keep.clone(), &noise).unwrap();
        for r in 0..2 {
            let raw_row: Vec<f64> = raw.row(r).to_vec();
            let expected = process(&a.layout, &raw_row, &a.layout.keep_mask(&masks[r]), -1e9);
            for (x, e) in tape.value(y).row(r).iter().zip(&expected) {
                assert_abs_diff_eq!(*x, *e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn categorical_sampling_skips_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
