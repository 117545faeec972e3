//! MRT, RZF-NS and the projected-ascent oracle on a few channel draws.
//!
//! cargo run --release --example baselines

use secure_cdm::baselines::{mrt, oracle_optimize, rzf_ns_best, OracleOptions};
use secure_cdm::env::sample_scenario;
use secure_cdm::metrics::{exact_sum_secrecy, total_power};
use secure_cdm::rng::Domain;
use secure_cdm::SystemConfig;

fn main() -> secure_cdm::Result<()> {
    let cfg = SystemConfig::desk();
    let opts = OracleOptions::default();
    println!("{:>4} {:>8} {:>8} {:>8}  oracle source", "draw", "MRT", "RZF-NS", "oracle");
    for i in 0..8 {
        let cs = sample_scenario(&cfg, Domain::Misc, i)?;
        let m = exact_sum_secrecy(&cs, &mrt(&cs, &cfg), &cfg)?;
        let (_, z, rho) = rzf_ns_best(&cs, &cfg)?;
        let o = oracle_optimize(&cs, &cfg, &opts)?;
        assert!(total_power(&o.strategy) <= 1.0 + 1e-9);
        println!("{i:>4} {m:8.3} {z:8.3} {:8.3}  {} (RZF-NS data share {rho:.2})", o.rsum, o.source);
    }
    Ok(())
}
