//! Sweep transmit power for the classical methods, write the table and
//! render it.
//!
//! cargo run --release --example sweep -- [out-dir]

use secure_cdm::experiments::plot::emit_plots;
use secure_cdm::experiments::sweep::write_sweep_csv;
use secure_cdm::experiments::{run_sweep, Axis, CheckpointSet, EvalOptions, MethodId, SweepSpec};
use secure_cdm::SystemConfig;

fn main() -> secure_cdm::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("secure-cdm-sweep"));
    let spec = SweepSpec {
        axis: Axis::Power,
        values: vec![0.0, 10.0, 20.0, 30.0],
        fixed: SystemConfig::desk(),
        test_channels: 64,
        candidates: 1,
    };
    let methods = [MethodId::Opt, MethodId::RzfNs, MethodId::Mrt];
    let rows = run_sweep(&spec, &methods, &EvalOptions::default(), &mut |_| Ok(CheckpointSet::default()))?;
    for r in &rows {
        println!("{:5} dBm {:8} {:.3}", r.value, r.method.as_str(), r.summary.mean);
    }
    let csv = out.join("sweep_power.csv");
    write_sweep_csv(&csv, &rows)?;
    for f in emit_plots(&[csv], &out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
