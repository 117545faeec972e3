//! Train a conditional diffusion model on freshly labeled data, print the
//! loss curve and held-out denoising loss, and save the checkpoint as
//! `<models-dir>/cdm` for the finetune and evaluate examples.
//!
//! cargo run --release --example train -- [records] [epochs] [models-dir]

use secure_cdm::baselines::OracleOptions;
use secure_cdm::datagen::generate_dataset;
use secure_cdm::nn::DenoiserSpec;
use secure_cdm::trainer::{evaluate_denoising, train, TrainConfig};
use secure_cdm::SystemConfig;

fn main() -> secure_cdm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(1024);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let dir = args.next().map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("secure-cdm-models"));

    let cfg = SystemConfig::desk();
    let oracle = OracleOptions { restarts: 2, ..Default::default() };
    let data = generate_dataset(&cfg, n, &oracle)?;
    let held_out = generate_dataset(&SystemConfig { seed: 99, ..cfg.clone() }, 128, &oracle)?;
    let tc = TrainConfig { epochs, batch_size: 64, learning_rate: 1e-3, ..TrainConfig::default() };
    let (model, curve) = train(&data, &DenoiserSpec::unet(&cfg, &[16, 32, 64]), &tc)?;
    for (e, l) in curve.epochs.iter().zip(&curve.loss) {
        if e % 10 == 0 || *e == 1 {
            println!("epoch {e:4}: loss {l:.4}");
        }
    }
    println!("held-out denoising loss {:.4}", evaluate_denoising(&model, &held_out, 0)?);
    model.save(&dir.join("cdm"))?;
    println!("saved {}", dir.join("cdm").display());
    Ok(())
}
