//! Splits one migration's latency into its stages and shows how the
//! pre-migration fraction trades local work against transfer time.
//!
//! Usage: `cargo run --example latency_breakdown`

use twinmig::channel::{migration_latency, LinkRates, MigrationRequest, Site};
use twinmig::world::TaskSpec;

fn main() {
    let mut req = MigrationRequest {
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
    };
    println!("{:#?}", migration_latency(&req));
    println!("\n   K   migration  current  pre     total");
    for i in 0..=10 {
        req.pre_fraction = i as f64 / 10.0;
        let l = migration_latency(&req);
        println!(
            "{:>5.1} {:>9.2} {:>8.2} {:>7.2} {:>8.2}",
            req.pre_fraction, l.migration, l.process_current, l.process_pre, l.total
        );
    }
}
