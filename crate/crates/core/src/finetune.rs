//! Stage-2 fine-tuning: push the sampler toward higher secrecy by
//! differentiating the smooth sum secrecy rate through a short
//! deterministic DDIM chain.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::diffusion::{ddim_coefficients, ddim_timesteps};
use crate::env::{sample_scenario, ChannelSet};
use crate::error::{Error, Result};
use crate::metrics::{exact_sum_secrecy, project_power_real, real_to_strategy, smooth_sum_and_grad};
use crate::nn::model::{from_tensor, to_tensor};
use crate::nn::CdmModel;
use crate::rng::{keyed_rng, stream_key, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Norm penalty weight λ.
    pub lambda: f64,
    /// Target norm δ.
    pub delta: f64,
    pub epochs: usize,
    /// DDIM steps the gradient flows through.
    pub chain_len: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
    /// Fixed channels scored after every epoch.
    pub monitor_channels: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            delta: 1.0,
            epochs: 60,
            chain_len: 10,
            batch_size: 64,
            batches_per_epoch: 8,
            learning_rate: 1e-5,
            monitor_channels: 256,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.delta > 0.0) {
            return Err(Error::invalid("lambda must be non-negative and delta positive"));
        }
        if self.chain_len == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::invalid("chain_len, batch_size and batches_per_epoch must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be non-negative"));
        }
        Ok(())
    }
}

/// `−mean R_sum(smooth) + λ·mean (||u0|| − δ)²` over a batch of
/// de-standardized, unprojected strategies.
pub fn finetune_loss(u0: &[Vec<f64>], channels: &[ChannelSet], cfg: &SystemConfig, fc: &FinetuneConfig) -> Result<f64> {
    Ok(finetune_loss_and_grad(u0, channels, cfg, fc)?.0)
}

/// Loss and its gradient with respect to every row of `u0`.
pub fn finetune_loss_and_grad(
    u0: &[Vec<f64>],
    channels: &[ChannelSet],
    cfg: &SystemConfig,
    fc: &FinetuneConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if u0.len() != channels.len() || u0.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} strategies for {} channels",
            u0.len(),
            channels.len()
        )));
    }
    let b = u0.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = u0
        .par_iter()
        .zip(channels)
        .map(|(u, cs)| {
            let (r, g) = smooth_sum_and_grad(cs, u, cfg)?;
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let gap = norm - fc.delta;
            let scale = if norm > 0.0 { 2.0 * fc.lambda * gap / norm } else { 0.0 };
            let grad = g.iter().zip(u).map(|(gi, ui)| (-gi + scale * ui) / b).collect();
            Ok((-r + fc.lambda * gap * gap, grad))
        })
        .collect::<Result<_>>()?;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / b;
    Ok((loss, parts.into_iter().map(|p| p.1).collect()))
}

/// Deterministic DDIM chain on tensors. Returns de-standardized strategies
/// (B, D). With `track` the autograd graph of every step is kept; without
/// it each step is detached so memory stays flat.
pub fn ddim_chain(model: &CdmModel, z_t: &Tensor, h_std: &Tensor, chain_len: usize, track: bool) -> Result<Tensor> {
    let sch = model.schedule.build()?;
    let steps = ddim_timesteps(sch.steps(), chain_len)?;
    let b = z_t.dim(0)?;
    let mut z = z_t.clone();
    for idx in (0..steps.len()).rev() {
        let t = steps[idx];
        let prev = if idx == 0 { 0 } else { steps[idx - 1] };
        let eps = model.forward(&z, &vec![t; b], h_std)?;
        let c = ddim_coefficients(&sch, t, prev, 0.0);
        z = ((z * c.z_coef)? + (eps * c.eps_coef)?)?;
        if !track {
            z = z.detach();
        }
    }
    destandardize(model, &z)
}

fn destandardize(model: &CdmModel, z: &Tensor) -> Result<Tensor> {
    let d = model.spec.strategy_dim;
    let dev = model.device();
    let f32v = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    let std = Tensor::from_vec(f32v(&model.z_standardizer.std), (1, d), dev)?;
    let mean = Tensor::from_vec(f32v(&model.z_standardizer.mean), (1, d), dev)?;
    Ok(z.broadcast_mul(&std)?.broadcast_add(&mean)?)
}

/// Standardized channel rows for a list of channel sets.
pub fn channel_rows(model: &CdmModel, channels: &[ChannelSet]) -> Result<Array2<f64>> {
    let mut h = Array2::zeros((channels.len(), model.spec.channel_dim));
    for (i, cs) in channels.iter().enumerate() {
        let v = model.standardized_channel(cs)?;
        h.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(h)
}

fn gaussian_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Mean exact sum secrecy rate of projected chain outputs on `channels`,
/// starting from `z_T` drawn with `key`.
pub fn chain_score(model: &CdmModel, channels: &[ChannelSet], chain_len: usize, key: u64) -> Result<f64> {
    let mut rng = keyed_rng(key, Domain::Finetune, u64::MAX);
    let zt = gaussian_rows(&mut rng, channels.len(), model.spec.strategy_dim);
    let h = channel_rows(model, channels)?;
    let mut total = 0.0;
    for start in (0..channels.len()).step_by(256) {
        let end = (start + 256).min(channels.len());
        let zb = to_tensor(&zt.slice(ndarray::s![start..end, ..]).to_owned(), model.device())?;
        let hb = to_tensor(&h.slice(ndarray::s![start..end, ..]).to_owned(), model.device())?;
        let u = from_tensor(&ddim_chain(model, &zb, &hb, chain_len, false)?)?;
        for (row, cs) in u.rows().into_iter().zip(&channels[start..end]) {
            total += score_projected(row.to_vec(), cs, &model.system)?;
        }
    }
    Ok(total / channels.len() as f64)
}

fn score_projected(mut u: Vec<f64>, cs: &ChannelSet, cfg: &SystemConfig) -> Result<f64> {
    project_power_real(&mut u);
    exact_sum_secrecy(cs, &real_to_strategy(&u, cfg)?, cfg)
}

/// Per-epoch monitor curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecrecyCurve {
    pub epochs: Vec<usize>,
    pub mean_rsum: Vec<f64>,
    /// Mean `| ||u0|| − δ |` over the epoch's training batches.
    pub norm_gap: Vec<f64>,
}

/// Fixed channels used to monitor progress.
pub fn monitor_set(cfg: &SystemConfig, fc: &FinetuneConfig) -> Result<Vec<ChannelSet>> {
    let monitor_cfg = SystemConfig {
        seed: stream_key(fc.seed, Domain::Finetune, u64::MAX - 1),
        ..cfg.clone()
    };
    (0..fc.monitor_channels as u64)
        .map(|i| sample_scenario(&monitor_cfg, Domain::Evaluation, i))
        .collect()
}

/// Fine-tune a copy of `model`; the input is left untouched. Entry 0 of the
/// curve scores the starting point.
pub fn finetune(model: &CdmModel, fc: &FinetuneConfig) -> Result<(CdmModel, SecrecyCurve)> {
    finetune_with(model, fc, &mut |_, _| {})
}

pub fn finetune_with(
    model: &CdmModel,
    fc: &FinetuneConfig,
    hook: &mut dyn FnMut(usize, f64),
) -> Result<(CdmModel, SecrecyCurve)> {
    fc.validate()?;
    let cfg = model.system.clone();
    let mut tuned = model.duplicate()?;
    let dev = tuned.device().clone();
    let monitor = monitor_set(&cfg, fc)?;
    let mut opt = AdamW::new(
        tuned.varmap().all_vars(),
        ParamsAdamW {
            lr: fc.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let channel_cfg = SystemConfig {
        seed: stream_key(fc.seed, Domain::Finetune, 0),
        ..cfg.clone()
    };
    let mut curve = SecrecyCurve::default();
    if fc.monitor_channels > 0 {
        let start = chain_score(&tuned, &monitor, fc.chain_len, fc.seed)?;
        curve.epochs.push(0);
        curve.mean_rsum.push(start);
        curve.norm_gap.push(f64::NAN);
        hook(0, start);
    }
    let start_epoch = tuned.meta.finetune_epochs;
    for epoch in 1..=fc.epochs {
        let mut gap_total = 0.0;
        for batch in 0..fc.batches_per_epoch {
            let step = ((start_epoch + epoch - 1) * fc.batches_per_epoch + batch) as u64;
            let base = step * fc.batch_size as u64;
            let channels: Vec<ChannelSet> = (0..fc.batch_size as u64)
                .map(|i| sample_scenario(&channel_cfg, Domain::Finetune, base + i))
                .collect::<Result<_>>()?;
            let mut rng = keyed_rng(fc.seed, Domain::Sampling, step);
            let zt = to_tensor(&gaussian_rows(&mut rng, fc.batch_size, tuned.spec.strategy_dim), &dev)?;
            let h = to_tensor(&channel_rows(&tuned, &channels)?, &dev)?;
            let u = ddim_chain(&tuned, &zt, &h, fc.chain_len, true)?;
            let u_rows: Vec<Vec<f64>> = from_tensor(&u)?.rows().into_iter().map(|r| r.to_vec()).collect();
            let (loss, grad) = finetune_loss_and_grad(&u_rows, &channels, &cfg, fc)?;
            if !loss.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "finetune".into(),
                    detail: format!("loss {loss} at epoch {epoch}, batch {batch}"),
                });
            }
            gap_total += u_rows
                .iter()
                .map(|r| (r.iter().map(|x| x * x).sum::<f64>().sqrt() - fc.delta).abs())
                .sum::<f64>();
            let g: Vec<f32> = grad.iter().flatten().map(|&x| x as f32).collect();
            let g = Tensor::from_vec(g, u.shape(), &dev)?;
            // d(surrogate)/du = g, so backprop carries the analytic gradient into the network
            let surrogate = (u * g)?.sum_all()?;
            opt.backward_step(&surrogate)?;
        }
        tuned.meta.finetune_epochs = start_epoch + epoch;
        let score = if fc.monitor_channels > 0 {
            chain_score(&tuned, &monitor, fc.chain_len, fc.seed)?
        } else {
            f64::NAN
        };
        if fc.monitor_channels > 0 && !score.is_finite() {
            return Err(Error::NonFinite {
                stage: "finetune".into(),
                detail: format!("monitor score {score} at epoch {epoch}"),
            });
        }
        curve.epochs.push(epoch);
        curve.mean_rsum.push(score);
        curve.norm_gap.push(gap_total / (fc.batch_size * fc.batches_per_epoch) as f64);
        log::info!("finetune epoch {epoch}: monitor R_sum {score:.4}");
        hook(epoch, score);
    }
    Ok((tuned, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{sum_secrecy, RateMode};
    use approx::assert_relative_eq;

    fn instance(cfg: &SystemConfig, i: u64) -> (ChannelSet, Vec<f64>) {
        let cs = sample_scenario(cfg, Domain::Misc, i).unwrap();
        let mut rng = keyed_rng(i, Domain::Misc, 1);
        let u: Vec<f64> = (0..cfg.real_strategy_len()).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3).collect();
        (cs, u)
    }

    #[test]
    fn penalty_off_gives_negative_mean_rate() {
        let cfg = SystemConfig::desk();
        let fc = FinetuneConfig { lambda: 0.0, ..FinetuneConfig::default() };
        let (cs, u) = instance(&cfg, 1);
        let (cs2, u2) = instance(&cfg, 2);
        let loss = finetune_loss(&[u.clone(), u2.clone()], &[cs.clone(), cs2.clone()], &cfg, &fc).unwrap();
        let r = |cs: &ChannelSet, u: &[f64]| sum_secrecy(cs, &real_to_strategy(u, &cfg).unwrap(), &cfg, RateMode::Smooth).unwrap().sum;
        assert_relative_eq!(loss, -(r(&cs, &u) + r(&cs2, &u2)) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn penalty_vanishes_on_the_target_sphere() {
        let cfg = SystemConfig::desk();
        let (cs, mut u) = instance(&cfg, 3);
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= n);
        let on = finetune_loss(&[u.clone()], &[cs.clone()], &cfg, &FinetuneConfig::default()).unwrap();
        let off = finetune_loss(&[u], &[cs], &cfg, &FinetuneConfig { lambda: 0.0, ..FinetuneConfig::default() }).unwrap();
        assert_eq!(on, off);
    }

    #[test]
    fn default_weights_compose_by_hand() {
        let cfg = SystemConfig::desk();
        let (cs, u) = instance(&cfg, 4);
        let r = sum_secrecy(&cs, &real_to_strategy(&u, &cfg).unwrap(), &cfg, RateMode::Smooth).unwrap().sum;
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected = -r + 0.001 * (norm - 1.0).powi(2);
        let loss = finetune_loss(&[u], &[cs], &cfg, &FinetuneConfig::default()).unwrap();
        assert_relative_eq!(loss, expected, max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SystemConfig {
            power_dbm: 0.0,
            ..SystemConfig::desk()
        };
        let fc = FinetuneConfig { lambda: 0.5, ..FinetuneConfig::default() };
        let mut checked = 0;
        for i in 0..40 {
            let (cs, u) = instance(&cfg, 100 + i);
            let (_, g) = finetune_loss_and_grad(&[u.clone()], &[cs.clone()], &cfg, &fc).unwrap();
            let f = |v: &[f64]| finetune_loss(&[v.to_vec()], &[cs.clone()], &cfg, &fc).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..u.len())
                .map(|j| {
                    let mut a = u.clone();
                    let mut b = u.clone();
                    a[j] += h;
                    b[j] -= h;
                    (f(&a) - f(&b)) / (2.0 * h)
                })
                .collect();
            let err: f64 = fd.iter().zip(&g[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            // skip points sitting on a clamp kink
            let margins_clear = {
                let s = real_to_strategy(&u, &cfg).unwrap();
                (0..cfg.users).all(|k| {
                    crate::metrics::secrecy_margin_of(&cs, &s, k, &cfg, RateMode::Smooth)
                        .unwrap()
                        .abs()
                        > 1e-3
                })
            };
            if margins_clear && scale > 1e-8 {
                assert!(err / scale < 1e-3, "instance {i}: rel err {}", err / scale);
                checked += 1;
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn rejects_misaligned_batches() {
        let cfg = SystemConfig::desk();
        let (cs, u) = instance(&cfg, 1);
        assert!(finetune_loss(&[u.clone(), u], &[cs], &cfg, &FinetuneConfig::default()).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for fc in [
            FinetuneConfig { lambda: -1.0, ..FinetuneConfig::default() },
            FinetuneConfig { delta: 0.0, ..FinetuneConfig::default() },
            FinetuneConfig { chain_len: 0, ..FinetuneConfig::default() },
        ] {
            assert!(fc.validate().is_err());
        }
    }
}
