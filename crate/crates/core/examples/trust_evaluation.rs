//! Walks a server's reputation through the two trust layers as its defense
//! record, detection report and user feedback change.
//!
//! Usage: `cargo run --example trust_evaluation`

use anyhow::Result;
use twinmig::trust::{
    combine_and_update, interaction_layer_reputation, network_layer_reputation, DefenseHistory, DetectionReport,
    InteractionLog, TrustParams,
};
use twinmig::Config;

fn main() -> Result<()> {
    let params = TrustParams::from(&Config::desk().trust);
    let report = DetectionReport {
        total_data: 1e6,
        abnormal_data: 5e4,
        total_requests: 200,
        successful_responses: 180,
    };
    println!("defended/attacks -> network-layer reputation");
    for ok in 0..=10 {
        let h = DefenseHistory {
            successful_defenses: ok,
            total_attacks: 10,
        };
        println!("  {ok:>2}/10 -> {:.3}", network_layer_reputation(&report, &h, &params)?);
    }
    let history = DefenseHistory {
        successful_defenses: 8,
        total_attacks: 10,
    };
    let network = network_layer_reputation(&report, &history, &params)?;
    let mut log = InteractionLog::new();
    let mut past = params.threshold;
    println!("\nslot  feedback  interaction  reputation");
    for slot in 0..12 {
        // Users grow unhappy halfway through, e.g. while the server is attacked.
        let positive = slot < 6;
        log.record(slot % 3, positive);
        let interaction = interaction_layer_reputation(&log);
        past = combine_and_update(network, interaction, past, &params).current;
        println!("{slot:>4}  {:>8}  {interaction:>11.3}  {past:>10.3}", if positive { "+" } else { "-" });
    }
    Ok(())
}
