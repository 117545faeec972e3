//! Drop users and eavesdroppers, draw Rayleigh channels and print the
//! per-node path loss and channel gain.
//!
//! cargo run --release --example channels

use secure_cdm::env::{path_loss_db, sample_channels, sample_placement};
use secure_cdm::rng::{keyed_rng, Domain};
use secure_cdm::SystemConfig;

fn main() -> secure_cdm::Result<()> {
    let cfg = SystemConfig::desk();
    let mut rng = keyed_rng(cfg.seed, Domain::Misc, 0);
    let placement = sample_placement(&cfg, &mut rng)?;
    let cs = sample_channels(&cfg, &placement, &mut rng)?;

    println!("M={} K={} L={}", cfg.antennas, cfg.users, cfg.eves);
    for (k, d) in placement.user_dist.iter().enumerate() {
        let gain: f64 = cs.users.row(k).iter().map(|c| c.norm_sqr()).sum();
        println!("user {k}: {d:6.2} m, path loss {:7.2} dB, |h|^2 {gain:.3e}", path_loss_db(*d, &cfg)?);
    }
    for (l, d) in placement.eve_dist.iter().enumerate() {
        let gain: f64 = cs.eves.row(l).iter().map(|c| c.norm_sqr()).sum();
        println!(
            "eve  {l}: {d:6.2} m near user {}, path loss {:7.2} dB, |h|^2 {gain:.3e}",
            placement.eve_anchor[l],
            path_loss_db(*d, &cfg)?
        );
    }
    println!("real embedding length {}", cs.real_embedding().len());
    Ok(())
}
