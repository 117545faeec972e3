//! The full conditional noise predictor and its on-disk checkpoint.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::init::{parameter_count, SeededInit};
use super::layers::{device, ChannelEmbed, TimeEmbed};
use super::mlp::{width_for_params, MlpNet};
use super::spec::{Backbone, DenoiserSpec};
use super::unet::UNet1d;
use crate::config::SystemConfig;
use crate::datagen::Standardizer;
use crate::diffusion::{Denoiser, ScheduleParams};
use crate::env::ChannelSet;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Seed used for parameter initialization and training.
    pub seed: u64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    /// Sampler step count this model is meant to be evaluated with.
    pub ddim_steps: usize,
    /// Hash of the dataset manifest the standardizers were fitted on.
    pub dataset_hash: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    spec: DenoiserSpec,
    schedule: ScheduleParams,
    system: SystemConfig,
    h_standardizer: Standardizer,
    z_standardizer: Standardizer,
    meta: ModelMeta,
}

#[derive(Debug, Clone)]
enum Backend {
    Unet(UNet1d),
    Mlp(MlpNet),
}

/// Channel embedding, time embedding and backbone with their parameters.
pub struct CdmModel {
    pub spec: DenoiserSpec,
    pub schedule: ScheduleParams,
    pub system: SystemConfig,
    pub h_standardizer: Standardizer,
    pub z_standardizer: Standardizer,
    pub meta: ModelMeta,
    varmap: VarMap,
    embed: ChannelEmbed,
    time: TimeEmbed,
    backend: Backend,
    device: Device,
}

impl std::fmt::Debug for CdmModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CdmModel")
            .field("spec", &self.spec)
            .field("schedule", &self.schedule)
            .field("meta", &self.meta)
            .finish_non_exhaustive()
    }
}

impl CdmModel {
    pub fn new(
        spec: DenoiserSpec,
        schedule: ScheduleParams,
        system: SystemConfig,
        h_standardizer: Standardizer,
        z_standardizer: Standardizer,
        meta: ModelMeta,
    ) -> Result<Self> {
        spec.validate()?;
        schedule.build()?;
        if h_standardizer.dim() != spec.channel_dim || z_standardizer.dim() != spec.strategy_dim {
            return Err(Error::ShapeMismatch(format!(
                "standardizers have dims ({}, {}), network expects ({}, {})",
                h_standardizer.dim(),
                z_standardizer.dim(),
                spec.channel_dim,
                spec.strategy_dim
            )));
        }
        if spec.strategy_dim != system.real_strategy_len() || spec.channel_dim != system.real_channel_len() {
            return Err(Error::ShapeMismatch("network dimensions do not match the system config".into()));
        }
        let device = device();
        let varmap = VarMap::new();
        let vb = SeededInit::builder(&varmap, meta.seed, &device);
        let embed = ChannelEmbed::new(spec.channel_dim, spec.embed_hidden, spec.cond_dim, vb.pp("embed"))?;
        let time = TimeEmbed::new(spec.time_dim, vb.pp("time"))?;
        let backend = match spec.backbone {
            Backbone::Unet => Backend::Unet(UNet1d::new(&spec, vb.pp("net"))?),
            Backbone::Mlp => Backend::Mlp(MlpNet::new(&spec, vb.pp("net"))?),
        };
        Ok(Self {
            spec,
            schedule,
            system,
            h_standardizer,
            z_standardizer,
            meta,
            varmap,
            embed,
            time,
            backend,
            device,
        })
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.varmap)
    }

    /// Parameters of the backbone alone, excluding both embeddings.
    pub fn backbone_parameter_count(&self) -> usize {
        self.varmap
            .data()
            .lock()
            .unwrap()
            .iter()
            .filter(|(k, _)| k.starts_with("net."))
            .map(|(_, v)| v.as_tensor().elem_count())
            .sum()
    }

    /// Channel embedding `c` for standardized channels (B, channel_dim).
    pub fn condition(&self, h_std: &Tensor) -> Result<Tensor> {
        Ok(self.embed.forward(h_std)?)
    }

    /// Learned time encoding for 1-based steps.
    pub fn time_embedding(&self, t: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = t.iter().find(|&&t| t == 0 || t > self.schedule.steps) {
            return Err(Error::invalid(format!("step {bad} outside 1..={}", self.schedule.steps)));
        }
        let tt = Tensor::from_vec(t.iter().map(|&t| t as f32).collect::<Vec<_>>(), t.len(), &self.device)?;
        Ok(self.time.forward(&tt)?)
    }

    /// Noise prediction on tensors: `z` (B, D), `h_std` (B, channel_dim).
    pub fn forward(&self, z: &Tensor, t: &[usize], h_std: &Tensor) -> Result<Tensor> {
        let b = z.dim(0)?;
        if z.dims() != [b, self.spec.strategy_dim] || h_std.dims() != [b, self.spec.channel_dim] || t.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "forward got z {:?}, h {:?}, {} steps",
                z.dims(),
                h_std.dims(),
                t.len()
            )));
        }
        let temb = self.time_embedding(t)?;
        let c = self.condition(h_std)?;
        let out = match &self.backend {
            Backend::Unet(net) => {
                let tokens = c.reshape((b, self.spec.cond_tokens, self.spec.token_dim()))?;
                net.forward(z, &temb, &tokens)?
            }
            Backend::Mlp(net) => net.forward(z, &temb, &c)?,
        };
        Ok(out)
    }

    /// Standardized real channel embedding of one channel set.
    pub fn standardized_channel(&self, cs: &ChannelSet) -> Result<Vec<f64>> {
        self.h_standardizer.apply(&cs.real_embedding())
    }

    /// The channel embedding `c` of one channel set.
    pub fn embed_channel(&self, cs: &ChannelSet) -> Result<Vec<f64>> {
        let h = self.standardized_channel(cs)?;
        let t = Tensor::from_vec(h.iter().map(|&x| x as f32).collect::<Vec<_>>(), (1, h.len()), &self.device)?;
        let c = self.condition(&t)?;
        Ok(c.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            schedule: self.schedule,
            system: self.system.clone(),
            h_standardizer: self.h_standardizer.clone(),
            z_standardizer: self.z_standardizer.clone(),
            meta: self.meta.clone(),
        };
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingCheckpoint(dir.display().to_string()));
        }
        let text = std::fs::read_to_string(&manifest_path)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::CorruptManifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
        if m.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: m.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut model = Self::new(m.spec, m.schedule, m.system, m.h_standardizer, m.z_standardizer, m.meta)?;
        let weights = dir.join(WEIGHTS_FILE);
        if !weights.exists() {
            return Err(Error::MissingCheckpoint(weights.display().to_string()));
        }
        model.varmap.load(&weights)?;
        Ok(model)
    }

    /// A copy with identical parameters that trains independently.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = Self::new(
            self.spec.clone(),
            self.schedule,
            self.system.clone(),
            self.h_standardizer.clone(),
            self.z_standardizer.clone(),
            self.meta.clone(),
        )?;
        let src = self.varmap.data().lock().unwrap();
        let dst = copy.varmap.data().lock().unwrap();
        for (name, var) in src.iter() {
            match dst.get(name) {
                Some(d) => d.set(var.as_tensor())?,
                None => return Err(Error::ShapeMismatch(format!("parameter {name} missing in copy"))),
            }
        }
        drop(dst);
        Ok(copy)
    }
}

/// Convert rows of f64 values to an f32 tensor.
pub fn to_tensor(x: &Array2<f64>, device: &Device) -> Result<Tensor> {
    let (r, c) = x.dim();
    let v: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    Ok(Tensor::from_vec(v, (r, c), device)?)
}

/// Convert a 2-D f32 tensor back to f64 rows.
pub fn from_tensor(t: &Tensor) -> Result<Array2<f64>> {
    let (r, c) = t.dims2()?;
    let v: Vec<f64> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect();
    Array2::from_shape_vec((r, c), v).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

impl Denoiser for CdmModel {
    fn dim(&self) -> usize {
        self.spec.strategy_dim
    }

    /// `cond` holds standardized channel embeddings, one row per sample.
    fn predict(&self, z_t: &Array2<f64>, t: &[usize], cond: &Array2<f64>) -> Result<Array2<f64>> {
        let z = to_tensor(z_t, &self.device)?;
        let h = to_tensor(cond, &self.device)?;
        from_tensor(&self.forward(&z, t, &h)?)
    }
}

/// MLP backbone whose parameter count matches the U-Net of `unet` as
/// closely as the width granularity allows.
pub fn mlp_matched(unet: &DenoiserSpec, depth: usize) -> Result<DenoiserSpec> {
    let map = VarMap::new();
    let vb = SeededInit::builder(&map, 0, &device());
    UNet1d::new(unet, vb)?;
    let target = parameter_count(&map);
    let mut spec = unet.clone();
    spec.backbone = Backbone::Mlp;
    spec.mlp_depth = depth;
    spec.mlp_width = width_for_params(&spec, target);
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::fit_standardizer;
    use crate::nn::layers::sinusoid;
    use crate::rng::{keyed_rng, Domain};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn identity_std(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            epsilon: crate::datagen::STD_EPSILON,
        }
    }

    fn meta(seed: u64) -> ModelMeta {
        ModelMeta {
            seed,
            epochs: 0,
            finetune_epochs: 0,
            ddim_steps: 50,
            dataset_hash: None,
        }
    }

    fn schedule() -> ScheduleParams {
        ScheduleParams {
            steps: 200,
            beta_min: 5e-4,
            beta_max: 0.1,
        }
    }

    fn model(cfg: &SystemConfig, spec: DenoiserSpec, seed: u64) -> CdmModel {
        CdmModel::new(
            spec,
            schedule(),
            cfg.clone(),
            identity_std(cfg.real_channel_len()),
            identity_std(cfg.real_strategy_len()),
            meta(seed),
        )
        .unwrap()
    }

    fn random_rows(rows: usize, cols: usize, key: u64) -> Array2<f64> {
        let mut rng = keyed_rng(key, Domain::Misc, 0);
        Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
    }

    /// Replace the zero-initialized output layer with random weights.
    fn randomize_output(m: &CdmModel) {
        let data = m.varmap().data().lock().unwrap();
        for (name, var) in data.iter() {
            if name.starts_with("net.out.") && !name.starts_with("net.out_norm") {
                let r = Tensor::randn(0f32, 0.1, var.as_tensor().shape(), m.device()).unwrap();
                var.set(&r).unwrap();
            }
        }
    }

    fn small_unet(cfg: &SystemConfig) -> DenoiserSpec {
        let mut s = DenoiserSpec::unet(cfg, &[8, 16, 16]);
        s.cond_dim = 32;
        s.cond_tokens = 4;
        s.time_dim = 16;
        s.embed_hidden = 32;
        s
    }

    #[test]
    fn zero_output_layer_gives_zero_noise() {
        let cfg = SystemConfig::desk();
        let unet = DenoiserSpec::unet(&cfg, &[16, 32, 64]);
        for spec in [unet.clone(), mlp_matched(&unet, 3).unwrap()] {
            let m = model(&cfg, spec, 3);
            let z = random_rows(5, cfg.real_strategy_len(), 1);
            let h = random_rows(5, cfg.real_channel_len(), 2);
            let out = m.predict(&z, &[1, 50, 100, 150, 200], &h).unwrap();
            assert_eq!(out.dim(), (5, cfg.real_strategy_len()));
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reference_shapes() {
        let cfg = SystemConfig::default();
        let spec = DenoiserSpec::paper(&cfg);
        assert_eq!(spec.padded_positions(), 64);
        let m = model(&cfg, spec, 0);
        randomize_output(&m);
        let z = random_rows(2, 128, 1);
        let h = random_rows(2, cfg.real_channel_len(), 2);
        assert_eq!(m.predict(&z, &[3, 170], &h).unwrap().dim(), (2, 128));
        let cs = crate::env::sample_scenario(&cfg, Domain::Misc, 0).unwrap();
        assert_eq!(m.embed_channel(&cs).unwrap().len(), 256);
    }

    #[test]
    fn matched_mlp_is_within_ten_percent() {
        let cfg = SystemConfig::default();
        let unet = DenoiserSpec::paper(&cfg);
        let mlp = mlp_matched(&unet, 4).unwrap();
        let a = model(&cfg, unet, 0).parameter_count() as f64;
        let b = model(&cfg, mlp, 0).parameter_count() as f64;
        assert!((a - b).abs() / a < 0.1, "{a} vs {b}");
    }

    #[test]
    fn channel_embedding_is_deterministic_and_injective() {
        let cfg = SystemConfig::desk();
        let m = model(&cfg, small_unet(&cfg), 5);
        let d = cfg.real_channel_len();
        let a = random_rows(1000, d, 10);
        let b = random_rows(1000, d, 11);
        let ca = m.condition(&to_tensor(&a, m.device()).unwrap()).unwrap();
        let ca2 = m.condition(&to_tensor(&a, m.device()).unwrap()).unwrap();
        let cb = m.condition(&to_tensor(&b, m.device()).unwrap()).unwrap();
        assert_eq!(from_tensor(&ca).unwrap(), from_tensor(&ca2).unwrap());
        let (ca, cb) = (from_tensor(&ca).unwrap(), from_tensor(&cb).unwrap());
        for (ra, rb) in ca.rows().into_iter().zip(cb.rows()) {
            assert_ne!(ra, rb);
        }
    }

    #[test]
    fn time_encodings_are_distinct() {
        let dev = device();
        let t = Tensor::from_vec((1..=1000).map(|t| t as f32).collect::<Vec<_>>(), 1000, &dev).unwrap();
        let table = from_tensor(&sinusoid(&t, 128).unwrap()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for row in table.rows() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key));
        }
        let cfg = SystemConfig::desk();
        let m = model(&cfg, small_unet(&cfg), 1);
        let e = from_tensor(&m.time_embedding(&[1, 2, 199, 200]).unwrap()).unwrap();
        assert_eq!(e.ncols(), 16);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(e.row(i), e.row(j));
            }
        }
        assert!(m.time_embedding(&[0]).is_err());
        assert!(m.time_embedding(&[201]).is_err());
    }

    #[test]
    fn output_depends_on_condition() {
        let cfg = SystemConfig::desk();
        let m = model(&cfg, small_unet(&cfg), 2);
        randomize_output(&m);
        let z = random_rows(4, cfg.real_strategy_len(), 1);
        let h1 = random_rows(4, cfg.real_channel_len(), 2);
        let h2 = random_rows(4, cfg.real_channel_len(), 3);
        let a = m.predict(&z, &[10; 4], &h1).unwrap();
        let b = m.predict(&z, &[10; 4], &h2).unwrap();
        assert!((&a - &b).iter().map(|v| v.abs()).sum::<f64>() > 1e-4);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = SystemConfig::desk();
        let a = model(&cfg, small_unet(&cfg), 9);
        let b = model(&cfg, small_unet(&cfg), 9);
        let c = model(&cfg, small_unet(&cfg), 10);
        let get = |m: &CdmModel| {
            from_tensor(&m.varmap().data().lock().unwrap()["embed.l1.weight"].as_tensor().clone()).unwrap()
        };
        assert_eq!(get(&a), get(&b));
        assert_ne!(get(&a), get(&c));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let cfg = SystemConfig::desk();
        let z = random_rows(3, cfg.real_strategy_len(), 1);
        let h = random_rows(3, cfg.real_channel_len(), 2);
        let zs = fit_standardizer(&random_rows(10, cfg.real_strategy_len(), 3).rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let mut m = model(&cfg, small_unet(&cfg), 4);
        m.z_standardizer = zs;
        randomize_output(&m);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = CdmModel::load(dir.path()).unwrap();
        assert_eq!(back.z_standardizer, m.z_standardizer);
        assert_eq!(m.predict(&z, &[1, 2, 3], &h).unwrap(), back.predict(&z, &[1, 2, 3], &h).unwrap());
        let copy = m.duplicate().unwrap();
        assert_eq!(m.predict(&z, &[7; 3], &h).unwrap(), copy.predict(&z, &[7; 3], &h).unwrap());
        assert!(matches!(CdmModel::load(&dir.path().join("absent")), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let cfg = SystemConfig::desk();
        let m = model(&cfg, small_unet(&cfg), 4);
        let z = random_rows(2, cfg.real_strategy_len() + 2, 1);
        let h = random_rows(2, cfg.real_channel_len(), 2);
        assert!(matches!(m.predict(&z, &[1, 1], &h), Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]
        #[test]
        fn output_shape_matches_input(m in 1usize..5, k in 1usize..4, j in 1usize..4, mlp in any::<bool>()) {
            let k = k.min(m);
            let cfg = SystemConfig { an_streams: j, ..SystemConfig::with_dims(m, k, 1) };
            let mut spec = small_unet(&cfg);
            if mlp {
                spec = mlp_matched(&spec, 2).unwrap();
            }
            let md = model(&cfg, spec, 1);
            randomize_output(&md);
            let z = random_rows(3, cfg.real_strategy_len(), 1);
            let h = random_rows(3, cfg.real_channel_len(), 2);
            let out = md.predict(&z, &[1, 100, 200], &h).unwrap();
            prop_assert_eq!(out.dim(), z.dim());
            prop_assert!(out.iter().all(|v| v.is_finite()));
        }
    }
}
