//! Build the U-Net denoiser and its parameter-matched MLP, count
//! parameters, estimate complexity and run one forward pass.
//!
//! cargo run --release --example denoiser

use ndarray::Array2;
use secure_cdm::diffusion::{Denoiser, ScheduleParams};
use secure_cdm::datagen::Standardizer;
use secure_cdm::nn::{complexity_estimate, mlp_matched, CdmModel, DenoiserSpec, ModelMeta};
use secure_cdm::SystemConfig;

fn identity(dim: usize) -> Standardizer {
    Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim], epsilon: 1e-8 }
}

fn main() -> secure_cdm::Result<()> {
    let cfg = SystemConfig::desk();
    let schedule = ScheduleParams { steps: 200, beta_min: 5e-4, beta_max: 0.1 };
    let meta = ModelMeta { seed: 0, epochs: 0, finetune_epochs: 0, ddim_steps: 50, dataset_hash: None };
    let unet = DenoiserSpec::unet(&cfg, &[32, 64, 128]);
    let mlp = mlp_matched(&unet, 4)?;
    for spec in [unet.clone(), mlp, DenoiserSpec::paper(&SystemConfig::default())] {
        let h = identity(spec.channel_dim);
        let z = identity(spec.strategy_dim);
        let system = if spec.strategy_dim == cfg.real_strategy_len() { cfg.clone() } else { SystemConfig::default() };
        let model = CdmModel::new(spec.clone(), schedule, system, h, z, meta.clone())?;
        let out = model.predict(&Array2::zeros((4, spec.strategy_dim)), &[1, 50, 100, 200], &Array2::zeros((4, spec.channel_dim)))?;
        println!(
            "{:?}: strategy dim {}, channel dim {}, {} parameters, output {:?}",
            spec.backbone,
            spec.strategy_dim,
            spec.channel_dim,
            model.parameter_count(),
            out.dim()
        );
    }
    let c = complexity_estimate(&DenoiserSpec::paper(&SystemConfig::default()));
    println!("reference U-Net: {} conv terms + {} attention terms per step", c.conv_terms, c.attn_terms);
    println!("50-step inference: {:.3e} terms", c.inference_total(50) as f64);
    Ok(())
}
