//! Runs the built-in brute-force checks, once as shipped and once with a
//! perturbed trust constant that the trust check must catch.
//!
//! Usage: `cargo run --release --example oracle_check`

use twinmig::oracle::{run_all, OracleOptions};

fn main() {
    for mutate_trust in [false, true] {
        println!("mutate_trust = {mutate_trust}");
        for r in run_all(&OracleOptions { seed: 0, mutate_trust }) {
            println!("  {r}");
        }
    }
}
