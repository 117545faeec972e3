//! Stage-1 training: fit the noise predictor on oracle-labeled strategies.

use std::io::Write;
use std::path::Path;

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::DatasetBundle;
use crate::diffusion::{training_loss, ScheduleParams};
use crate::error::{Error, Result};
use crate::nn::model::to_tensor;
use crate::nn::{Backbone, CdmModel, DenoiserSpec, ModelMeta};
use crate::rng::{keyed_rng, Domain};

/// Learning-rate schedule across epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay to zero over the run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Diffusion length `T`.
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Log every this many epochs; 0 disables logging.
    pub eval_every: usize,
    pub seed: u64,
    pub backbone: Backbone,
    pub lr_schedule: LrSchedule,
    /// Exponential moving average decay of the weights, if any.
    pub ema_decay: Option<f64>,
    /// Independent `(t, ε)` draws per record in each epoch.
    pub draws_per_record: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 128,
            learning_rate: 1e-4,
            steps: 200,
            beta_min: 5e-4,
            beta_max: 0.1,
            eval_every: 10,
            seed: 0,
            backbone: Backbone::Unet,
            lr_schedule: LrSchedule::Constant,
            ema_decay: None,
            draws_per_record: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.draws_per_record == 0 {
            return Err(Error::invalid("epochs, batch_size and draws_per_record must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid("ema_decay must lie in [0, 1)"));
            }
        }
        self.schedule().build().map(|_| ())
    }

    pub fn schedule(&self) -> ScheduleParams {
        ScheduleParams {
            steps: self.steps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let p = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

/// Per-epoch mean training loss, epochs numbered from 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<usize>,
    pub loss: Vec<f64>,
}

impl LossCurve {
    pub fn push(&mut self, epoch: usize, loss: f64) {
        self.epochs.push(epoch);
        self.loss.push(loss);
    }

    pub fn first(&self) -> Option<f64> {
        self.loss.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.loss.last().copied()
    }

    /// Trailing moving average with the given window.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.loss
            .windows(w.min(self.loss.len().max(1)))
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }
}

/// Write `epoch,<column>` rows.
pub fn write_curve_csv(path: &Path, column: &str, epochs: &[usize], values: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,{column}")?;
    for (e, v) in epochs.iter().zip(values) {
        writeln!(f, "{e},{v}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_loss_csv(path: &Path, curve: &LossCurve) -> Result<()> {
    write_curve_csv(path, "loss", &curve.epochs, &curve.loss)
}

/// Read back a two-column curve written by [`write_curve_csv`].
pub fn read_curve_csv(path: &Path) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::CorruptData {
        path: path.to_path_buf(),
        reason: "empty file".into(),
    })?;
    let column = match header.split_once(',') {
        Some(("epoch", c)) => c.to_string(),
        _ => {
            return Err(Error::CorruptData {
                path: path.to_path_buf(),
                reason: format!("unexpected header `{header}`"),
            })
        }
    };
    let mut epochs = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || Error::CorruptData {
            path: path.to_path_buf(),
            reason: format!("malformed row {}", i + 2),
        };
        let (e, v) = line.split_once(',').ok_or_else(bad)?;
        epochs.push(e.trim().parse().map_err(|_| bad())?);
        values.push(v.trim().parse().map_err(|_| bad())?);
    }
    Ok((column, epochs, values))
}

/// Standardized strategies and channels of a bundle as f64 rows.
pub fn standardized_rows(model: &CdmModel, bundle: &DatasetBundle) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = bundle.len();
    let mut z = Array2::zeros((n, model.spec.strategy_dim));
    let mut h = Array2::zeros((n, model.spec.channel_dim));
    for (i, r) in bundle.records.iter().enumerate() {
        let zs = model.z_standardizer.apply(&r.z_f64())?;
        let hs = model.h_standardizer.apply(&r.h_f64())?;
        z.row_mut(i).assign(&ndarray::ArrayView1::from(&zs));
        h.row_mut(i).assign(&ndarray::ArrayView1::from(&hs));
    }
    Ok((z, h))
}

/// Called after every epoch with `(epoch, mean loss)`.
pub type EpochHook<'a> = dyn FnMut(usize, f64) + 'a;

/// Build a fresh model for `bundle` and train it.
pub fn train(bundle: &DatasetBundle, spec: &DenoiserSpec, tc: &TrainConfig) -> Result<(CdmModel, LossCurve)> {
    let mut spec = spec.clone();
    spec.backbone = tc.backbone;
    let meta = ModelMeta {
        seed: tc.seed,
        epochs: 0,
        finetune_epochs: 0,
        ddim_steps: 50,
        dataset_hash: None,
    };
    let mut model = CdmModel::new(
        spec,
        tc.schedule(),
        bundle.cfg.clone(),
        bundle.h_standardizer.clone(),
        bundle.z_standardizer.clone(),
        meta,
    )?;
    let curve = train_model(&mut model, bundle, tc, &mut |_, _| {})?;
    Ok((model, curve))
}

/// Continue training `model` on `bundle` for `tc.epochs` epochs.
pub fn train_model(
    model: &mut CdmModel,
    bundle: &DatasetBundle,
    tc: &TrainConfig,
    hook: &mut EpochHook,
) -> Result<LossCurve> {
    tc.validate()?;
    if bundle.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if bundle.cfg.real_strategy_len() != model.spec.strategy_dim || bundle.cfg.real_channel_len() != model.spec.channel_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset has dims ({}, {}), model expects ({}, {})",
            bundle.cfg.real_strategy_len(),
            bundle.cfg.real_channel_len(),
            model.spec.strategy_dim,
            model.spec.channel_dim
        )));
    }
    if model.schedule != tc.schedule() {
        return Err(Error::invalid("training schedule differs from the model's schedule"));
    }
    let sch = tc.schedule().build()?;
    let dev = model.device().clone();
    let (z_all, h_all) = standardized_rows(model, bundle)?;
    let n = bundle.len();
    let dim = model.spec.strategy_dim;
    let vars = model.varmap().all_vars();
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: tc.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut ema: Option<Vec<Tensor>> = match tc.ema_decay {
        Some(_) => Some(vars.iter().map(|v| v.as_tensor().copy()).collect::<candle_core::Result<_>>()?),
        None => None,
    };
    let start_epoch = model.meta.epochs;
    let mut curve = LossCurve::default();
    for epoch in 1..=tc.epochs {
        opt.set_learning_rate(tc.lr_at(epoch - 1));
        let mut rng = keyed_rng(tc.seed, Domain::Training, (start_epoch + epoch) as u64);
        let mut order: Vec<usize> = (0..n * tc.draws_per_record).map(|i| i % n).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let b = chunk.len();
            let mut zt = Array2::<f64>::zeros((b, dim));
            let mut eps = Array2::<f64>::zeros((b, dim));
            let mut h = Array2::<f64>::zeros((b, model.spec.channel_dim));
            let mut steps = Vec::with_capacity(b);
            for (row, &i) in chunk.iter().enumerate() {
                let t = rng.gen_range(1..=sch.steps());
                let ab = sch.alpha_bar(t);
                steps.push(t);
                for j in 0..dim {
                    let e: f64 = rng.sample(StandardNormal);
                    eps[[row, j]] = e;
                    zt[[row, j]] = ab.sqrt() * z_all[[i, j]] + (1.0 - ab).sqrt() * e;
                }
                h.row_mut(row).assign(&h_all.row(i));
            }
            let pred = model.forward(&to_tensor(&zt, &dev)?, &steps, &to_tensor(&h, &dev)?)?;
            let loss = ((pred - to_tensor(&eps, &dev)?)?.sqr()?.sum_all()? / b as f64)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    stage: "train".into(),
                    detail: format!("loss {value} at epoch {epoch}"),
                });
            }
            opt.backward_step(&loss)?;
            if let (Some(shadow), Some(decay)) = (ema.as_mut(), tc.ema_decay) {
                update_ema(shadow, &vars, decay)?;
            }
            total += value * b as f64;
        }
        let mean = total / order.len() as f64;
        curve.push(epoch, mean);
        model.meta.epochs = start_epoch + epoch;
        if tc.eval_every > 0 && epoch % tc.eval_every == 0 {
            log::info!("epoch {epoch}: loss {mean:.5}");
        }
        hook(epoch, mean);
    }
    if let Some(shadow) = ema {
        for (v, s) in vars.iter().zip(&shadow) {
            v.set(s)?;
        }
    }
    Ok(curve)
}

fn update_ema(shadow: &mut [Tensor], vars: &[Var], decay: f64) -> Result<()> {
    for (s, v) in shadow.iter_mut().zip(vars) {
        *s = ((&*s * decay)? + (v.as_tensor() * (1.0 - decay))?)?;
    }
    Ok(())
}

/// Denoising loss on `held_out` without updates, over a fixed noise stream.
pub fn evaluate_denoising(model: &CdmModel, held_out: &DatasetBundle, seed: u64) -> Result<f64> {
    let sch = model.schedule.build()?;
    let (z, h) = standardized_rows(model, held_out)?;
    let mut rng = keyed_rng(seed, Domain::Evaluation, 0);
    let n = z.nrows();
    let mut total = 0.0;
    for start in (0..n).step_by(512) {
        let end = (start + 512).min(n);
        let zb = z.slice(ndarray::s![start..end, ..]).to_owned();
        let hb = h.slice(ndarray::s![start..end, ..]).to_owned();
        total += training_loss(&zb, &hb, model, &sch, &mut rng)? * (end - start) as f64;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::OracleOptions;
    use crate::config::SystemConfig;
    use crate::datagen::generate_records;
    use crate::diffusion::Denoiser;

    fn tiny_spec(cfg: &SystemConfig) -> DenoiserSpec {
        let mut s = DenoiserSpec::unet(cfg, &[16, 32, 32]);
        s.cond_dim = 64;
        s.time_dim = 32;
        s.embed_hidden = 64;
        s
    }

    fn quick_oracle() -> OracleOptions {
        OracleOptions {
            restarts: 1,
            max_iters: 60,
            ..OracleOptions::default()
        }
    }

    fn bundle(cfg: &SystemConfig, n: usize) -> DatasetBundle {
        let (records, seeds) = generate_records(cfg, n, Domain::TrainChannels, &quick_oracle()).unwrap();
        DatasetBundle::from_records(cfg.clone(), records, seeds).unwrap()
    }

    #[test]
    fn single_record_is_memorized() {
        let cfg = SystemConfig::desk();
        let b = bundle(&cfg, 1);
        let tc = TrainConfig {
            epochs: 200,
            batch_size: 64,
            draws_per_record: 64,
            learning_rate: 3e-3,
            eval_every: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, curve) = train(&b, &tiny_spec(&cfg), &tc).unwrap();
        let head: f64 = curve.loss[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = curve.loss[190..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.05 * head, "head {head} tail {tail}");
    }

    #[test]
    fn training_is_reproducible_and_helps() {
        let cfg = SystemConfig::desk();
        let b = bundle(&cfg, 64);
        let held = bundle(&SystemConfig { seed: 99, ..cfg.clone() }, 32);
        let tc = TrainConfig {
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-3,
            eval_every: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let (m1, c1) = train(&b, &tiny_spec(&cfg), &tc).unwrap();
        let (_, c2) = train(&b, &tiny_spec(&cfg), &tc).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(m1.meta.epochs, 15);

        let untrained = CdmModel::new(
            m1.spec.clone(),
            m1.schedule,
            cfg.clone(),
            m1.h_standardizer.clone(),
            m1.z_standardizer.clone(),
            ModelMeta { epochs: 0, ..m1.meta.clone() },
        )
        .unwrap();
        let base = evaluate_denoising(&untrained, &held, 1).unwrap();
        let dim = untrained.dim() as f64;
        assert!((base - dim).abs() < 0.15 * dim, "untrained loss {base} vs dim {dim}");
        let after = evaluate_denoising(&m1, &held, 1).unwrap();
        assert!(after < base, "{after} !< {base}");
        assert_eq!(after, evaluate_denoising(&m1, &held, 1).unwrap());

        let dir = tempfile::tempdir().unwrap();
        m1.save(dir.path()).unwrap();
        let back = CdmModel::load(dir.path()).unwrap();
        assert_eq!(evaluate_denoising(&back, &held, 1).unwrap(), after);
    }

    #[test]
    fn ema_and_cosine_options_run() {
        let cfg = SystemConfig::desk();
        let b = bundle(&cfg, 8);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            eval_every: 0,
            lr_schedule: LrSchedule::Cosine,
            ema_decay: Some(0.9),
            ..TrainConfig::default()
        };
        let (_, curve) = train(&b, &tiny_spec(&cfg), &tc).unwrap();
        assert_eq!(curve.epochs, vec![1, 2]);
        assert!(curve.loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { beta_max: 1.5, ..TrainConfig::default() },
        ];
        for tc in bad {
            assert!(tc.validate().is_err());
        }
    }

    #[test]
    fn curve_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let mut c = LossCurve::default();
        c.push(1, 3.5);
        c.push(2, 0.125);
        write_loss_csv(&path, &c).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,loss\n1,3.5\n"));
        let (col, e, v) = read_curve_csv(&path).unwrap();
        assert_eq!((col.as_str(), e, v), ("loss", c.epochs, c.loss));
        std::fs::write(&path, "epoch,loss\n1,x\n").unwrap();
        assert!(read_curve_csv(&path).is_err());
    }
}
