//! Two-layer server reputation.
//!
//! The network layer scores data security and service performance from
//! detection reports, gated by the server's historical defense ratio. The
//! interaction layer is the beta-posterior mean of binary user evaluations.
//! Both are blended and folded into the running reputation once per slot.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::attack::AttackEffects;
use crate::config::TrustConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionReport {
    /// bits
    pub total_data: f64,
    /// bits
    pub abnormal_data: f64,
    pub total_requests: u64,
    pub successful_responses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DefenseHistory {
    pub successful_defenses: u64,
    pub total_attacks: u64,
}

impl DefenseHistory {
    /// Defense ratio; an empty history counts as a perfect record.
    pub fn ratio(&self) -> f64 {
        if self.total_attacks == 0 {
            1.0
        } else {
            self.successful_defenses as f64 / self.total_attacks as f64
        }
    }
}

/// Binary evaluations per user (VMU).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct InteractionLog {
    evaluations: Vec<Vec<bool>>,
    total: usize,
    positives: usize,
}

impl InteractionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, user: usize, positive: bool) {
        if self.evaluations.len() <= user {
            self.evaluations.resize(user + 1, Vec::new());
        }
        self.evaluations[user].push(positive);
        self.total += 1;
        self.positives += usize::from(positive);
    }

    pub fn evaluations(&self, user: usize) -> &[bool] {
        self.evaluations.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn users(&self) -> usize {
        self.evaluations.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn positives(&self) -> usize {
        self.positives
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustParams {
    pub theta1: f64,
    pub theta2: f64,
    pub penalty: f64,
    pub data_weight: f64,
    pub layer_weight: f64,
    pub update_rate: f64,
    pub threshold: f64,
}

impl From<&TrustConfig> for TrustParams {
    fn from(c: &TrustConfig) -> Self {
        TrustParams {
            theta1: c.theta1,
            theta2: c.theta2,
            penalty: c.penalty,
            data_weight: c.data_weight,
            layer_weight: c.layer_weight,
            update_rate: c.update_rate,
            threshold: c.reputation_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReputationRecord {
    pub net: f64,
    pub interaction: f64,
    pub combined: f64,
    pub current: f64,
}

impl ReputationRecord {
    pub fn initial(value: f64) -> Self {
        ReputationRecord {
            net: value,
            interaction: value,
            combined: value,
            current: value,
        }
    }
}

pub fn data_security(report: &DetectionReport) -> Result<f64> {
    if !(report.total_data > 0.0) {
        return Err(Error::Input("detection report has no data".into()));
    }
    Ok(((report.total_data - report.abnormal_data) / report.total_data).clamp(0.0, 1.0))
}

pub fn service_performance(report: &DetectionReport) -> Result<f64> {
    if report.total_requests == 0 {
        return Err(Error::Input("detection report has no requests".into()));
    }
    Ok(report.successful_responses as f64 / report.total_requests as f64)
}

/// Network-layer score from already-computed data/service ratios.
///
/// Intervals are closed on the left of the better case: a ratio exactly at
/// `theta1` takes the penalized branch and one at `theta2` the full branch.
pub fn network_score(defense_ratio: f64, p_data: f64, p_ser: f64, params: &TrustParams) -> f64 {
    let blended = params.data_weight * p_data + (1.0 - params.data_weight) * p_ser;
    if defense_ratio < params.theta1 {
        0.0
    } else if defense_ratio < params.theta2 {
        params.penalty * blended
    } else {
        blended
    }
}

pub fn network_layer_reputation(
    report: &DetectionReport,
    history: &DefenseHistory,
    params: &TrustParams,
) -> Result<f64> {
    Ok(network_score(
        history.ratio(),
        data_security(report)?,
        service_performance(report)?,
        params,
    ))
}

/// Beta-posterior mean `(positives + 1) / (total + 2)`.
pub fn interaction_layer_reputation(log: &InteractionLog) -> f64 {
    (log.positives() as f64 + 1.0) / (log.total() as f64 + 2.0)
}

pub fn combine_and_update(
    rep_net: f64,
    rep_int: f64,
    rep_past: f64,
    params: &TrustParams,
) -> ReputationRecord {
    let combined = params.layer_weight * rep_net + (1.0 - params.layer_weight) * rep_int;
    let current = params.update_rate * combined + (1.0 - params.update_rate) * rep_past;
    ReputationRecord {
        net: rep_net,
        interaction: rep_int,
        combined,
        current,
    }
}

/// Simulated detection-system output for one server under `effects`.
pub fn synthesize_detection_report(
    cfg: &TrustConfig,
    effects: &AttackEffects,
    rng: &mut ChaCha8Rng,
) -> DetectionReport {
    let abnormal_rate = (cfg.baseline_abnormal_rate + effects.abnormal_data_rate_add).clamp(0.0, 1.0);
    let failure_rate =
        (cfg.baseline_failure_rate + effects.response_failure_rate_add).clamp(0.0, 1.0);
    let abnormal_packets = Binomial::new(cfg.detection_packets, abnormal_rate)
        .expect("rate in [0,1]")
        .sample(rng);
    let failures = Binomial::new(cfg.detection_requests, failure_rate)
        .expect("rate in [0,1]")
        .sample(rng);
    DetectionReport {
        total_data: cfg.detection_packets as f64 * cfg.packet_bits,
        abnormal_data: abnormal_packets as f64 * cfg.packet_bits,
        total_requests: cfg.detection_requests,
        successful_responses: cfg.detection_requests - failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn report(tot: f64, abr: f64, req: u64, suc: u64) -> DetectionReport {
        DetectionReport {
            total_data: tot,
            abnormal_data: abr,
            total_requests: req,
            successful_responses: suc,
        }
    }

    fn params() -> TrustParams {
        TrustParams {
            theta1: 0.3,
            theta2: 0.8,
            penalty: 0.5,
            data_weight: 0.6,
            layer_weight: 0.5,
            update_rate: 0.5,
            threshold: 0.3,
        }
    }

    #[test]
    fn data_security_cases() {
        assert_eq!(data_security(&report(200.0, 0.0, 1, 1)).unwrap(), 1.0);
        assert_eq!(data_security(&report(200.0, 200.0, 1, 1)).unwrap(), 0.0);
        assert_abs_diff_eq!(data_security(&report(200.0, 30.0, 1, 1)).unwrap(), 0.85);
        assert!(matches!(data_security(&report(0.0, 0.0, 1, 1)), Err(Error::Input(_))));
    }

    #[test]
    fn service_performance_cases() {
        assert_eq!(service_performance(&report(1.0, 0.0, 50, 50)).unwrap(), 1.0);
        assert_eq!(service_performance(&report(1.0, 0.0, 50, 0)).unwrap(), 0.0);
        assert_abs_diff_eq!(service_performance(&report(1.0, 0.0, 50, 40)).unwrap(), 0.8);
        assert!(service_performance(&report(1.0, 0.0, 0, 0)).is_err());
    }

    #[test]
    fn network_layer_branches() {
        let p = params();
        assert_eq!(network_score(0.1, 0.9, 0.8, &p), 0.0);
        assert_abs_diff_eq!(network_score(0.5, 0.9, 0.8, &p), 0.43, epsilon = 1e-12);
        assert_abs_diff_eq!(network_score(0.9, 0.9, 0.8, &p), 0.86, epsilon = 1e-12);
    }

    #[test]
    fn network_layer_boundaries_resolve_upward() {
        let p = params();
        assert_abs_diff_eq!(network_score(0.3, 0.9, 0.8, &p), 0.43, epsilon = 1e-12);
        assert_abs_diff_eq!(network_score(0.8, 0.9, 0.8, &p), 0.86, epsilon = 1e-12);
    }

    #[test]
    fn empty_defense_history_counts_as_perfect() {
        let h = DefenseHistory {
            successful_defenses: 0,
            total_attacks: 0,
        };
        assert_eq!(h.ratio(), 1.0);
        let r = network_layer_reputation(&report(100.0, 10.0, 10, 9), &h, &params()).unwrap();
        assert_abs_diff_eq!(r, 0.6 * 0.9 + 0.4 * 0.9, epsilon = 1e-12);
    }

    #[test]
    fn interaction_layer_cases() {
        let mut log = InteractionLog::new();
        assert_eq!(interaction_layer_reputation(&log), 0.5);
        for e in [true, true, false, true] {
            log.record(0, e);
        }
        assert_abs_diff_eq!(interaction_layer_reputation(&log), 4.0 / 6.0);
        let mut log = InteractionLog::new();
        let mut last = 0.5;
        for n in 1..200 {
            log.record(n % 3, true);
            let r = interaction_layer_reputation(&log);
            assert!(r > last && r < 1.0);
            last = r;
        }
        assert_eq!(log.total(), (0..log.users()).map(|u| log.evaluations(u).len()).sum::<usize>());
    }

    #[test]
    fn combine_and_update_cases() {
        let mut p = params();
        assert_abs_diff_eq!(combine_and_update(0.8, 0.6, 0.0, &p).combined, 0.7);
        p.update_rate = 1.0;
        let r = combine_and_update(0.8, 0.6, 0.1, &p);
        assert_eq!(r.current, r.combined);
        p.update_rate = 0.5;
        p.layer_weight = 1.0;
        assert_abs_diff_eq!(combine_and_update(0.9, 0.0, 0.7, &p).current, 0.8);
    }

    #[test]
    fn clean_report_scores_one() {
        let mut cfg = Config::desk().trust;
        cfg.baseline_abnormal_rate = 0.0;
        cfg.baseline_failure_rate = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = synthesize_detection_report(&cfg, &AttackEffects::default(), &mut rng);
        assert_eq!(data_security(&r).unwrap(), 1.0);
        assert_eq!(service_performance(&r).unwrap(), 1.0);
    }

    #[test]
    fn direct_ddos_report_rates_match_in_mean() {
        let cfg = Config::desk().trust;
        let fx = AttackEffects {
            load_add: 0.0,
            abnormal_data_rate_add: 0.6,
            response_failure_rate_add: 0.7,
            force_negative_evaluations: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let (mut abr, mut fail) = (0.0, 0.0);
        for _ in 0..n {
            let r = synthesize_detection_report(&cfg, &fx, &mut rng);
            abr += r.abnormal_data / r.total_data;
            fail += 1.0 - service_performance(&r).unwrap();
        }
        assert_abs_diff_eq!(abr / n as f64, 0.62, epsilon = 0.01);
        assert_abs_diff_eq!(fail / n as f64, 0.72, epsilon = 0.01);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = Config::desk().trust;
        let fx = AttackEffects::default();
        let a = synthesize_detection_report(&cfg, &fx, &mut ChaCha8Rng::seed_from_u64(3));
        let b = synthesize_detection_report(&cfg, &fx, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
