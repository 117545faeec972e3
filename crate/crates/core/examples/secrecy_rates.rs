//! Rates, exact and smooth secrecy, and the analytic gradient at a
//! perturbed RZF-NS strategy.
//!
//! cargo run --release --example secrecy_rates

use secure_cdm::baselines::rzf_ns;
use secure_cdm::env::sample_scenario;
use secure_cdm::metrics::{RealStrategyVec, grad_sum_secrecy, project_power_real, real_to_strategy, strategy_to_real, sum_secrecy, RateMode};
use secure_cdm::rng::{keyed_rng, Domain};
use secure_cdm::SystemConfig;

use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> secure_cdm::Result<()> {
    let cfg = SystemConfig { power_dbm: 10.0, ..SystemConfig::desk() };
    let cs = sample_scenario(&cfg, Domain::Misc, 3)?;
    let mut rng = keyed_rng(1, Domain::Misc, 0);
    let mut z = strategy_to_real(&rzf_ns(&cs, &cfg, 0.8)?).0;
    for x in z.iter_mut() {
        *x += 0.05 * rng.sample::<f64, _>(StandardNormal);
    }
    project_power_real(&mut z);
    let s = real_to_strategy(&z, &cfg)?;

    for mode in [RateMode::Exact, RateMode::Smooth] {
        let r = sum_secrecy(&cs, &s, &cfg, mode)?;
        println!("{mode:?}: users {:?}", r.user.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());
        for (l, e) in r.eve.iter().enumerate() {
            println!("  eve {l} rates {:?}", e.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());
        }
        println!("  secrecy {:?}, sum {:.4}", r.secrecy.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(), r.sum);
    }

    let g = grad_sum_secrecy(&cs, &RealStrategyVec(z.clone()), &cfg)?;
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("gradient norm {norm:.4}; a small ascent step:");
    let step: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + 0.01 * b / norm).collect();
    let after = sum_secrecy(&cs, &real_to_strategy(&step, &cfg)?, &cfg, RateMode::Smooth)?.sum;
    println!("  smooth sum {:.4} -> {after:.4}", sum_secrecy(&cs, &s, &cfg, RateMode::Smooth)?.sum);
    Ok(())
}
