//! Method evaluation on a shared channel set.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{mrt, oracle_optimize, rzf_ns_best, OracleOptions};
use crate::config::SystemConfig;
use crate::env::ChannelSet;
use crate::error::{Error, Result};
use crate::finetune::{channel_rows, ddim_chain};
use crate::metrics::{exact_sum_secrecy, project_power_real, real_to_strategy, total_power, Strategy};
use crate::nn::model::{from_tensor, to_tensor};
use crate::nn::CdmModel;
use crate::rng::{keyed_rng, stream_key, Domain};

/// Power tolerance every emitted strategy must meet.
pub const POWER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "cdm")]
    Cdm,
    #[serde(rename = "cdm-f")]
    CdmF,
    #[serde(rename = "cdm-mlp")]
    CdmMlp,
    #[serde(rename = "opt")]
    Opt,
    #[serde(rename = "rzf-ns")]
    RzfNs,
    #[serde(rename = "mrt")]
    Mrt,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Cdm,
        MethodId::CdmF,
        MethodId::CdmMlp,
        MethodId::Opt,
        MethodId::RzfNs,
        MethodId::Mrt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Cdm => "cdm",
            MethodId::CdmF => "cdm-f",
            MethodId::CdmMlp => "cdm-mlp",
            MethodId::Opt => "opt",
            MethodId::RzfNs => "rzf-ns",
            MethodId::Mrt => "mrt",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, MethodId::Cdm | MethodId::CdmF | MethodId::CdmMlp)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Trained models by method; any may be absent.
#[derive(Debug, Default)]
pub struct CheckpointSet {
    pub cdm: Option<CdmModel>,
    pub cdm_f: Option<CdmModel>,
    pub cdm_mlp: Option<CdmModel>,
}

impl CheckpointSet {
    /// Load whichever of `cdm/`, `cdm-f/`, `cdm-mlp/` exist under `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let get = |m: MethodId| -> Result<Option<CdmModel>> {
            let d = dir.join(m.as_str());
            if d.join(crate::nn::model::MANIFEST_FILE).exists() {
                Ok(Some(CdmModel::load(&d)?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            cdm: get(MethodId::Cdm)?,
            cdm_f: get(MethodId::CdmF)?,
            cdm_mlp: get(MethodId::CdmMlp)?,
        })
    }

    pub fn get(&self, m: MethodId) -> Option<&CdmModel> {
        match m {
            MethodId::Cdm => self.cdm.as_ref(),
            MethodId::CdmF => self.cdm_f.as_ref(),
            MethodId::CdmMlp => self.cdm_mlp.as_ref(),
            _ => None,
        }
    }

    pub fn set(&mut self, m: MethodId, model: CdmModel) {
        match m {
            MethodId::Cdm => self.cdm = Some(model),
            MethodId::CdmF => self.cdm_f = Some(model),
            MethodId::CdmMlp => self.cdm_mlp = Some(model),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Best-of-B width for learned methods.
    pub candidates: usize,
    /// Overrides the sampler length stored in each checkpoint.
    pub ddim_steps: Option<usize>,
    pub oracle: OracleOptions,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            candidates: 8,
            ddim_steps: None,
            oracle: OracleOptions::default(),
            seed: 0,
        }
    }
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: MethodId,
    pub per_channel: Vec<f64>,
    pub summary: Summary,
}

/// SHA-256 over the exact bits of every channel coefficient.
pub fn channel_set_hash(channels: &[ChannelSet]) -> String {
    let mut h = Sha256::new();
    for cs in channels {
        for c in cs.users.iter().chain(cs.eves.iter()) {
            h.update(c.re.to_le_bytes());
            h.update(c.im.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Draw `candidates` de-standardized, power-projected strategies per
/// channel with the deterministic DDIM sampler.
pub fn sample_candidates(
    model: &CdmModel,
    channels: &[ChannelSet],
    candidates: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if candidates == 0 {
        return Err(Error::invalid("need at least one candidate"));
    }
    let d = model.spec.strategy_dim;
    let h = channel_rows(model, channels)?;
    let rows = channels.len() * candidates;
    let mut rng = keyed_rng(seed, Domain::Sampling, 0);
    let zt = Array2::from_shape_simple_fn((rows, d), || rng.sample::<f64, _>(StandardNormal));
    let mut out = vec![Vec::with_capacity(candidates); channels.len()];
    const CHUNK: usize = 512;
    for start in (0..rows).step_by(CHUNK) {
        let end = (start + CHUNK).min(rows);
        let mut hb = Array2::zeros((end - start, model.spec.channel_dim));
        for (r, i) in (start..end).enumerate() {
            hb.row_mut(r).assign(&h.row(i / candidates));
        }
        let zb = zt.slice(ndarray::s![start..end, ..]).to_owned();
        let u = from_tensor(&ddim_chain(
            model,
            &to_tensor(&zb, model.device())?,
            &to_tensor(&hb, model.device())?,
            steps,
            false,
        )?)?;
        for (r, row) in u.rows().into_iter().enumerate() {
            let mut v = row.to_vec();
            project_power_real(&mut v);
            out[(start + r) / candidates].push(v);
        }
    }
    Ok(out)
}

fn check_feasible(s: &Strategy, method: MethodId) -> Result<()> {
    let p = total_power(s);
    if !(p <= 1.0 + POWER_TOLERANCE) {
        return Err(Error::NonFinite {
            stage: "eval",
            detail: format!("{method} strategy power {p} exceeds budget"),
        });
    }
    Ok(())
}

/// Score one method on `channels`, keeping the best candidate per channel
/// for learned methods. Reported values are exact-mode rates.
pub fn evaluate_method(
    method: MethodId,
    checkpoints: &CheckpointSet,
    channels: &[ChannelSet],
    cfg: &SystemConfig,
    opts: &EvalOptions,
) -> Result<MethodResult> {
    if channels.is_empty() {
        return Err(Error::invalid("no test channels"));
    }
    let per_channel: Vec<f64> = if method.is_learned() {
        let model = checkpoints
            .get(method)
            .ok_or_else(|| Error::MissingCheckpoint(method.to_string()))?;
        if model.system.real_strategy_len() != cfg.real_strategy_len()
            || model.system.real_channel_len() != cfg.real_channel_len()
        {
            return Err(Error::ShapeMismatch(format!(
                "{method} checkpoint was trained for M={}, K={}, L={}, J={}",
                model.system.antennas, model.system.users, model.system.eves, model.system.an_streams
            )));
        }
        let steps = opts.ddim_steps.unwrap_or(model.meta.ddim_steps);
        let cands = sample_candidates(model, channels, opts.candidates, steps, stream_key(opts.seed, Domain::Sampling, method as u64))?;
        cands
            .par_iter()
            .zip(channels)
            .map(|(cs_cands, cs)| {
                let mut best = f64::NEG_INFINITY;
                for u in cs_cands {
                    let s = real_to_strategy(u, cfg)?;
                    check_feasible(&s, method)?;
                    best = best.max(exact_sum_secrecy(cs, &s, cfg)?);
                }
                Ok(best)
            })
            .collect::<Result<_>>()?
    } else {
        channels
            .par_iter()
            .enumerate()
            .map(|(i, cs)| {
                let s = match method {
                    MethodId::Opt => {
                        let o = OracleOptions {
                            seed: stream_key(opts.oracle.seed ^ opts.seed, Domain::Oracle, i as u64),
                            ..opts.oracle.clone()
                        };
                        oracle_optimize(cs, cfg, &o)?.strategy
                    }
                    MethodId::RzfNs => rzf_ns_best(cs, cfg)?.0,
                    MethodId::Mrt => mrt(cs, cfg),
                    _ => unreachable!("learned methods handled above"),
                };
                check_feasible(&s, method)?;
                exact_sum_secrecy(cs, &s, cfg)
            })
            .collect::<Result<_>>()?
    };
    let summary = summarize(&per_channel)?;
    Ok(MethodResult {
        method,
        per_channel,
        summary,
    })
}
