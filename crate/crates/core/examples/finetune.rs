//! Fine-tune a stage-1 checkpoint on the secrecy objective through a
//! differentiable 10-step DDIM chain and save it as `<models-dir>/cdm-f`.
//! Run the train example first. Fine-tuning needs a base model whose
//! samples already give positive secrecy on many users; the clamp in the
//! secrecy rate gives no gradient otherwise.
//!
//! cargo run --release --example finetune -- [models-dir] [epochs]

use secure_cdm::finetune::{finetune_with, FinetuneConfig};
use secure_cdm::nn::CdmModel;

fn main() -> secure_cdm::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("secure-cdm-models"));
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);

    let base = CdmModel::load(&dir.join("cdm"))?;
    let fc = FinetuneConfig { epochs, batch_size: 32, batches_per_epoch: 4, monitor_channels: 128, ..Default::default() };
    let (tuned, curve) = finetune_with(&base, &fc, &mut |epoch, score| println!("epoch {epoch}: monitor mean sum secrecy {score:.4}"))?;
    println!("start {:.4}, end {:.4}", curve.mean_rsum[0], curve.mean_rsum.last().unwrap());
    tuned.save(&dir.join("cdm-f"))?;
    println!("saved {}", dir.join("cdm-f").display());
    Ok(())
}
