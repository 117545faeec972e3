//! Experiment harness: method evaluation, sweeps, figures and the
//! end-to-end pipeline.

pub mod eval;
pub mod pipeline;
pub mod plot;
pub mod sweep;

pub use eval::{evaluate_method, summarize, CheckpointSet, EvalOptions, MethodId, MethodResult, Summary};
pub use pipeline::{Pipeline, PipelineConfig, Profile, RunManifest};
pub use sweep::{run_sweep, Axis, SweepRow, SweepSpec, Trend};
