//! Score the classical methods and any checkpoints found in a model
//! directory (the train and finetune examples write one) on a fixed test
//! set.
//!
//! cargo run --release --example evaluate -- [models-dir]

use secure_cdm::datagen::test_channels;
use secure_cdm::experiments::{evaluate_method, CheckpointSet, EvalOptions, MethodId};
use secure_cdm::SystemConfig;

fn main() -> secure_cdm::Result<()> {
    let cfg = SystemConfig::desk();
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("secure-cdm-models"));
    let ckpts = CheckpointSet::load(&dir)?;
    let channels = test_channels(&cfg, 64)?;
    let opts = EvalOptions::default();
    for m in MethodId::ALL {
        if m.is_learned() && ckpts.get(m).is_none() {
            continue;
        }
        let r = evaluate_method(m, &ckpts, &channels, &cfg, &opts)?;
        println!("{:8} {:.3} [{:.3}, {:.3}] over {} channels", m.as_str(), r.summary.mean, r.summary.ci_low, r.summary.ci_high, r.summary.n);
    }
    Ok(())
}
