//! Label channels with the oracle, save the dataset and load it back.
//!
//! cargo run --release --example dataset -- [records] [dir]

use secure_cdm::baselines::OracleOptions;
use secure_cdm::datagen::{generate_dataset, load_dataset, save_dataset};
use secure_cdm::SystemConfig;

fn main() -> secure_cdm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(128);
    let dir = args.next().map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("secure-cdm-dataset"));

    let cfg = SystemConfig::desk();
    let bundle = generate_dataset(&cfg, n, &OracleOptions::default())?;
    save_dataset(&bundle, &dir)?;
    let back = load_dataset(&dir)?;
    let mean: f64 = back.records.iter().map(|r| r.rsum as f64).sum::<f64>() / back.len() as f64;
    println!("{} records in {}", back.len(), dir.display());
    println!("channel dim {}, strategy dim {}", back.records[0].h.len(), back.records[0].z.len());
    println!("mean oracle sum secrecy {mean:.3} bit/s/Hz");
    println!("strategy std per coordinate {:?}", back.z_standardizer.std.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());
    Ok(())
}
