//! The whole experiment at smoke scale: data, both backbones, fine-tuning,
//! evaluation, sweeps, figures and the run manifest.
//!
//! cargo run --release --example pipeline -- [out-dir]

use secure_cdm::experiments::{Pipeline, PipelineConfig};

fn main() -> secure_cdm::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("secure-cdm-smoke"));
    let pipeline = Pipeline::new(PipelineConfig::smoke().with_seed(7), &out)?;
    let manifest = pipeline.run_all()?;
    for line in std::fs::read_to_string(pipeline.metrics_dir().join("eval.csv"))?.lines() {
        println!("{line}");
    }
    println!("{} artifacts hashed in {}", manifest.artifacts.len(), out.join("manifest.json").display());
    Ok(())
}
