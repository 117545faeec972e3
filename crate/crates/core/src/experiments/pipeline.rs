//! End-to-end runs: data generation, training, fine-tuning, evaluation,
//! sweeps and figures under one output directory.
//!
//! Layout of `out/`:
//! `data/train/`, `models/{cdm,cdm-f,cdm-mlp}/`, `models/cells/K<k>_L<l>/`,
//! `metrics/*.csv`, `figures/*.svg`, `config.toml`, `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::{evaluate_method, CheckpointSet, EvalOptions, MethodId, MethodResult};
use super::plot::emit_plots;
use super::sweep::{run_sweep, write_sweep_csv, Axis, SweepRow, SweepSpec};
use crate::baselines::OracleOptions;
use crate::config::SystemConfig;
use crate::datagen::{generate_dataset, load_dataset, save_dataset, test_channels, DatasetBundle};
use crate::error::{Error, Result};
use crate::finetune::{finetune_with, FinetuneConfig, SecrecyCurve};
use crate::nn::{mlp_matched, Backbone, CdmModel, DenoiserSpec};
use crate::trainer::{train, write_curve_csv, write_loss_csv, LossCurve, LrSchedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Smoke,
    Desk,
    Paper,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Smoke => "smoke",
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Profile::Smoke),
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}`"))),
        }
    }
}

/// One sweep to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub methods: Vec<MethodId>,
    pub test_channels: usize,
    pub candidates: usize,
}

/// Training budget for models of sweep cells whose dimensions differ from
/// the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBudget {
    pub train_records: usize,
    pub epochs: usize,
    pub finetune_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub system: SystemConfig,
    pub train_records: usize,
    pub test_channels: usize,
    /// Drop training records whose label falls below this value.
    pub min_label: Option<f64>,
    pub oracle: OracleOptions,
    /// U-Net widths per level.
    pub widths: Vec<usize>,
    /// Hidden layers of the parameter-matched MLP backbone.
    pub mlp_depth: usize,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalOptions,
    /// Methods scored by the `eval` stage.
    pub methods: Vec<MethodId>,
    pub sweeps: Vec<SweepPlan>,
    pub cell_budget: CellBudget,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Smoke => Self::smoke(),
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Desk scale: M=4, K=2, L=2, J=2, 4096 records, T=200.
    pub fn desk() -> Self {
        let learned = vec![MethodId::Opt, MethodId::RzfNs, MethodId::Mrt, MethodId::CdmF];
        Self {
            profile: Profile::Desk,
            seed: 0,
            system: SystemConfig::desk(),
            train_records: 4096,
            test_channels: 512,
            min_label: None,
            oracle: OracleOptions::default(),
            widths: vec![32, 64, 128],
            mlp_depth: 4,
            // 150 epochs instead of about 1000: a larger, decaying step makes up for it
            train: TrainConfig {
                learning_rate: 1e-3,
                lr_schedule: LrSchedule::Cosine,
                ..TrainConfig::default()
            },
            finetune: FinetuneConfig::default(),
            eval: EvalOptions::default(),
            methods: MethodId::ALL.to_vec(),
            sweeps: vec![
                SweepPlan {
                    axis: Axis::Power,
                    values: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
                    methods: learned.clone(),
                    test_channels: 512,
                    candidates: 8,
                },
                SweepPlan {
                    axis: Axis::Eves,
                    values: vec![1.0, 2.0, 3.0, 4.0],
                    methods: learned.clone(),
                    test_channels: 512,
                    candidates: 8,
                },
                SweepPlan {
                    axis: Axis::Users,
                    values: vec![1.0, 2.0, 3.0],
                    methods: learned.clone(),
                    test_channels: 512,
                    candidates: 8,
                },
                SweepPlan {
                    axis: Axis::Noise,
                    values: vec![-110.0, -100.0, -90.0],
                    methods: learned,
                    test_channels: 512,
                    candidates: 8,
                },
            ],
            cell_budget: CellBudget {
                train_records: 2048,
                epochs: 60,
                finetune_epochs: 20,
            },
        }
    }

    /// Minutes-scale end-to-end check of every stage.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Smoke;
        c.train_records = 256;
        c.test_channels = 32;
        c.oracle = OracleOptions {
            restarts: 2,
            max_iters: 150,
            ..OracleOptions::default()
        };
        c.widths = vec![8, 16, 16];
        c.mlp_depth = 2;
        c.train = TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            eval_every: 5,
            ..TrainConfig::default()
        };
        c.finetune = FinetuneConfig {
            epochs: 2,
            chain_len: 4,
            batch_size: 16,
            batches_per_epoch: 2,
            monitor_channels: 16,
            ..FinetuneConfig::default()
        };
        c.eval = EvalOptions {
            candidates: 2,
            ddim_steps: Some(10),
            oracle: c.oracle.clone(),
            seed: 0,
        };
        let quick = |axis, values: Vec<f64>| SweepPlan {
            axis,
            values,
            methods: vec![MethodId::Opt, MethodId::RzfNs, MethodId::CdmF],
            test_channels: 16,
            candidates: 2,
        };
        c.sweeps = vec![quick(Axis::Power, vec![10.0, 20.0]), quick(Axis::Eves, vec![1.0, 2.0])];
        c.cell_budget = CellBudget {
            train_records: 64,
            epochs: 4,
            finetune_epochs: 1,
        };
        c
    }

    /// The reference scale: M=8, K=4, L=2, J=4, T=1000, 1000 epochs.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Paper;
        c.system = SystemConfig::default();
        c.train_records = 20_000;
        c.widths = vec![64, 128, 256];
        c.train = TrainConfig {
            epochs: 1000,
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            ..TrainConfig::default()
        };
        for s in &mut c.sweeps {
            if s.axis == Axis::Eves {
                s.values = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
            }
            if s.axis == Axis::Users {
                s.values = vec![1.0, 2.0, 3.0, 4.0, 5.0];
            }
        }
        c.cell_budget = CellBudget {
            train_records: 10_000,
            epochs: 300,
            finetune_epochs: 20,
        };
        c
    }

    /// Route one master seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.system.seed = seed;
        self.oracle.seed = seed;
        self.eval.oracle.seed = seed;
        self.eval.seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
        self
    }

    /// Profile defaults overlaid with the keys present in a TOML document.
    /// The document's `profile` key wins over `fallback`.
    pub fn from_toml(text: &str, fallback: Profile) -> Result<Self> {
        let doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let profile = match doc.get("profile") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("`profile` must be a string".into())),
            None => fallback,
        };
        let mut base = toml::Value::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, doc);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, fallback)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.system.validate().map_err(wrap)?;
        self.oracle.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.finetune.validate().map_err(wrap)?;
        self.unet_spec().validate().map_err(wrap)?;
        if self.train_records == 0 || self.test_channels == 0 || self.eval.candidates == 0 {
            return Err(Error::Config("train_records, test_channels and candidates must be positive".into()));
        }
        for s in &self.sweeps {
            self.sweep_spec(s).validate().map_err(wrap)?;
        }
        Ok(())
    }

    pub fn unet_spec(&self) -> DenoiserSpec {
        DenoiserSpec::unet(&self.system, &self.widths)
    }

    fn unet_spec_for(&self, cfg: &SystemConfig) -> DenoiserSpec {
        DenoiserSpec::unet(cfg, &self.widths)
    }

    pub fn sweep_spec(&self, plan: &SweepPlan) -> SweepSpec {
        SweepSpec {
            axis: plan.axis,
            values: plan.values.clone(),
            fixed: self.system.clone(),
            test_channels: plan.test_channels,
            candidates: plan.candidates,
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Run manifest written at the end of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub profile: Profile,
    pub seed: u64,
    pub config: PipelineConfig,
    /// SHA-256 of every file under the output directory, by relative path.
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Stage runner bound to one configuration and output directory.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    /// Reuse artifacts already present instead of recomputing them.
    pub resume: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            out: out.into(),
            resume: false,
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data").join("train")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn model_dir(&self, m: MethodId) -> PathBuf {
        self.models_dir().join(m.as_str())
    }

    pub fn metrics_dir(&self) -> PathBuf {
        self.out.join("metrics")
    }

    pub fn figures_dir(&self) -> PathBuf {
        self.out.join("figures")
    }

    fn exists(&self, marker: &Path) -> bool {
        self.resume && marker.exists()
    }

    fn dataset_for(&self, system: &SystemConfig, records: usize, dir: &Path) -> Result<DatasetBundle> {
        if self.exists(&dir.join("manifest.json")) {
            return load_dataset(dir);
        }
        let bundle = generate_dataset(system, records, &self.cfg.oracle)?;
        let bundle = match self.cfg.min_label {
            Some(t) => bundle.filter_min_label(t)?,
            None => bundle,
        };
        save_dataset(&bundle, dir)?;
        Ok(bundle)
    }

    /// Oracle-labeled training set.
    pub fn gen_data(&self) -> Result<DatasetBundle> {
        stage("gen-data", self.dataset_for(&self.cfg.system, self.cfg.train_records, &self.data_dir()))
    }

    fn load_training_set(&self) -> Result<DatasetBundle> {
        let dir = self.data_dir();
        if dir.join("manifest.json").exists() {
            load_dataset(&dir)
        } else {
            self.dataset_for(&self.cfg.system, self.cfg.train_records, &dir)
        }
    }

    fn dataset_hash(&self, dir: &Path) -> Option<String> {
        sha256_file(&dir.join("manifest.json")).ok()
    }

    fn train_one(
        &self,
        bundle: &DatasetBundle,
        spec: &DenoiserSpec,
        tc: &TrainConfig,
        dir: &Path,
        curve_path: &Path,
        data_dir: &Path,
    ) -> Result<CdmModel> {
        if self.exists(&dir.join(crate::nn::model::MANIFEST_FILE)) {
            return CdmModel::load(dir);
        }
        let (mut model, curve): (CdmModel, LossCurve) = train(bundle, spec, tc)?;
        model.meta.dataset_hash = self.dataset_hash(data_dir);
        model.save(dir)?;
        write_loss_csv(curve_path, &curve)?;
        Ok(model)
    }

    /// Stage-1 model with the given backbone (`cdm` or `cdm-mlp`).
    pub fn train(&self, backbone: Backbone) -> Result<CdmModel> {
        stage("train", {
            let bundle = self.load_training_set()?;
            let unet = self.cfg.unet_spec();
            let (spec, method, curve) = match backbone {
                Backbone::Unet => (unet, MethodId::Cdm, "loss_cdm.csv"),
                Backbone::Mlp => (mlp_matched(&unet, self.cfg.mlp_depth)?, MethodId::CdmMlp, "loss_cdm-mlp.csv"),
            };
            let tc = TrainConfig {
                backbone,
                ..self.cfg.train.clone()
            };
            self.train_one(&bundle, &spec, &tc, &self.model_dir(method), &self.metrics_dir().join(curve), &self.data_dir())
        })
    }

    fn finetune_one(&self, base: &CdmModel, fc: &FinetuneConfig, dir: &Path, curve_path: &Path) -> Result<CdmModel> {
        if self.exists(&dir.join(crate::nn::model::MANIFEST_FILE)) {
            return CdmModel::load(dir);
        }
        let (tuned, curve): (CdmModel, SecrecyCurve) = finetune_with(base, fc, &mut |_, _| {})?;
        tuned.save(dir)?;
        write_curve_csv(curve_path, "mean_rsum", &curve.epochs, &curve.mean_rsum)?;
        Ok(tuned)
    }

    /// Stage-2 model from the stage-1 checkpoint; the input is not modified.
    pub fn finetune(&self) -> Result<CdmModel> {
        stage("finetune", {
            let base_dir = self.model_dir(MethodId::Cdm);
            let base = if base_dir.join(crate::nn::model::MANIFEST_FILE).exists() {
                CdmModel::load(&base_dir)?
            } else {
                self.train(Backbone::Unet)?
            };
            self.finetune_one(
                &base,
                &self.cfg.finetune,
                &self.model_dir(MethodId::CdmF),
                &self.metrics_dir().join("finetune_cdm-f.csv"),
            )
        })
    }

    /// Score `methods` on the fixed test set; writes `eval.csv` (best of B),
    /// `eval_b1.csv` (single candidate) and `eval.json` (per-channel values).
    pub fn eval(&self, methods: &[MethodId]) -> Result<Vec<MethodResult>> {
        stage("eval", {
            let checkpoints = CheckpointSet::load(&self.models_dir())?;
            let channels = test_channels(&self.cfg.system, self.cfg.test_channels)?;
            let mut results = Vec::new();
            let mut rows = Vec::new();
            let mut rows_b1 = Vec::new();
            for &m in methods {
                let r = evaluate_method(m, &checkpoints, &channels, &self.cfg.system, &self.cfg.eval)?;
                rows.push(SweepRow {
                    value: self.cfg.system.power_dbm,
                    method: m,
                    summary: r.summary,
                    channel_hash: String::new(),
                });
                if m.is_learned() {
                    let one = EvalOptions {
                        candidates: 1,
                        ..self.cfg.eval.clone()
                    };
                    let r1 = evaluate_method(m, &checkpoints, &channels, &self.cfg.system, &one)?;
                    rows_b1.push(SweepRow {
                        value: self.cfg.system.power_dbm,
                        method: m,
                        summary: r1.summary,
                        channel_hash: String::new(),
                    });
                }
                log::info!("eval {m}: mean {:.4}", r.summary.mean);
                results.push(r);
            }
            write_sweep_csv(&self.metrics_dir().join("eval.csv"), &rows)?;
            write_sweep_csv(&self.metrics_dir().join("eval_b1.csv"), &rows_b1)?;
            std::fs::write(self.metrics_dir().join("eval.json"), serde_json::to_string(&results)?)?;
            Ok(results)
        })
    }

    /// Models for a sweep cell: the base models when dimensions match,
    /// otherwise models trained for the cell under `cell_budget`.
    pub fn cell_checkpoints(&self, cell: &SystemConfig) -> Result<CheckpointSet> {
        let base = &self.cfg.system;
        if cell.real_strategy_len() == base.real_strategy_len()
            && cell.real_channel_len() == base.real_channel_len()
            && (cell.users, cell.eves) == (base.users, base.eves)
        {
            return CheckpointSet::load(&self.models_dir());
        }
        let dir = self.models_dir().join("cells").join(format!("K{}_L{}", cell.users, cell.eves));
        let budget = &self.cfg.cell_budget;
        let cell_system = SystemConfig {
            power_dbm: base.power_dbm,
            noise_dbm: base.noise_dbm,
            ..cell.clone()
        };
        let data_dir = dir.join("data");
        let bundle = self.dataset_for(&cell_system, budget.train_records, &data_dir)?;
        let tc = TrainConfig {
            epochs: budget.epochs,
            ..self.cfg.train.clone()
        };
        let cdm = self.train_one(
            &bundle,
            &self.cfg.unet_spec_for(&cell_system),
            &tc,
            &dir.join("cdm"),
            &dir.join("loss_cdm.csv"),
            &data_dir,
        )?;
        let fc = FinetuneConfig {
            epochs: budget.finetune_epochs,
            ..self.cfg.finetune.clone()
        };
        let cdm_f = self.finetune_one(&cdm, &fc, &dir.join("cdm-f"), &dir.join("finetune_cdm-f.csv"))?;
        Ok(CheckpointSet {
            cdm: Some(cdm),
            cdm_f: Some(cdm_f),
            cdm_mlp: None,
        })
    }

    pub fn sweep_csv(&self, axis: Axis) -> PathBuf {
        self.metrics_dir().join(format!("sweep_{axis}.csv"))
    }

    /// Run one planned sweep and write `sweep_<axis>.csv`.
    pub fn sweep(&self, plan: &SweepPlan) -> Result<Vec<SweepRow>> {
        stage("sweep", {
            let spec = self.cfg.sweep_spec(plan);
            if self.exists(&self.sweep_csv(plan.axis)) {
                return super::sweep::read_sweep_csv(&self.sweep_csv(plan.axis)).map(|rows| {
                    rows.into_iter()
                        .map(|r| SweepRow {
                            value: r.axis.parse().unwrap_or(f64::NAN),
                            method: r.method,
                            summary: r.summary,
                            channel_hash: String::new(),
                        })
                        .collect()
                });
            }
            let rows = run_sweep(&spec, &plan.methods, &self.cfg.eval, &mut |cell| self.cell_checkpoints(cell))?;
            write_sweep_csv(&self.sweep_csv(plan.axis), &rows)?;
            let hashes: BTreeMap<String, String> = rows
                .iter()
                .map(|r| (super::sweep::format_value(r.value), r.channel_hash.clone()))
                .collect();
            std::fs::write(
                self.metrics_dir().join(format!("sweep_{}_channels.json", plan.axis)),
                serde_json::to_string_pretty(&hashes)?,
            )?;
            Ok(rows)
        })
    }

    /// Figures for every sweep table and convergence curve in `metrics/`.
    pub fn plot(&self) -> Result<Vec<PathBuf>> {
        stage("plot", {
            let mut csvs = Vec::new();
            for e in std::fs::read_dir(self.metrics_dir())? {
                let p = e?.path();
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                let plottable = name.starts_with("sweep_") || name.starts_with("loss_") || name.starts_with("finetune_");
                if plottable && name.ends_with(".csv") {
                    csvs.push(p);
                }
            }
            csvs.sort();
            emit_plots(&csvs, &self.figures_dir())
        })
    }

    /// Every stage in order, then the run manifest.
    pub fn run_all(&self) -> Result<RunManifest> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join("config.toml"), self.cfg.to_toml()?)?;
        let mut stages = Vec::new();
        self.gen_data()?;
        stages.push("gen-data".to_string());
        self.train(Backbone::Unet)?;
        if self.cfg.methods.contains(&MethodId::CdmMlp) {
            self.train(Backbone::Mlp)?;
        }
        stages.push("train".to_string());
        self.finetune()?;
        stages.push("finetune".to_string());
        self.eval(&self.cfg.methods)?;
        stages.push("eval".to_string());
        for plan in &self.cfg.sweeps {
            self.sweep(plan)?;
        }
        stages.push("sweep".to_string());
        self.plot()?;
        stages.push("plot".to_string());
        self.write_manifest(stages)
    }

    pub fn write_manifest(&self, stages: Vec<String>) -> Result<RunManifest> {
        let mut files = Vec::new();
        collect_files(&self.out, &mut files)?;
        let mut artifacts = BTreeMap::new();
        for f in files {
            let rel = f.strip_prefix(&self.out).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" {
                continue;
            }
            artifacts.insert(rel, sha256_file(&f)?);
        }
        let manifest = RunManifest {
            profile: self.cfg.profile,
            seed: self.cfg.seed,
            config: self.cfg.clone(),
            artifacts,
            stages,
        };
        std::fs::write(self.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_roundtrip() {
        for p in [Profile::Smoke, Profile::Desk, Profile::Paper] {
            let c = PipelineConfig::profile(p);
            c.validate().unwrap();
            let back = PipelineConfig::from_toml(&c.to_toml().unwrap(), Profile::Smoke).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn overlay_changes_only_named_keys() {
        let text = "profile = \"smoke\"\ntrain_records = 10\n[train]\nepochs = 3\n[system]\nP_dbm = 5.0\n";
        let c = PipelineConfig::from_toml(text, Profile::Desk).unwrap();
        let smoke = PipelineConfig::smoke();
        assert_eq!(c.train_records, 10);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, smoke.train.batch_size);
        assert_eq!(c.system.power_dbm, 5.0);
        assert_eq!(c.system.antennas, smoke.system.antennas);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in ["train_records = \"many\"", "unknown_key = 1", "profile = \"huge\"", "[train]\nepochs = 0", "= broken"] {
            assert!(matches!(PipelineConfig::from_toml(text, Profile::Smoke), Err(Error::Config(_))), "{text}");
        }
        let missing = PipelineConfig::load(Path::new("/nonexistent/cfg.toml"), Profile::Smoke);
        assert!(matches!(missing, Err(Error::Config(_))));
    }

    #[test]
    fn seed_reaches_every_stage() {
        let c = PipelineConfig::smoke().with_seed(7);
        assert_eq!(
            (c.system.seed, c.oracle.seed, c.train.seed, c.finetune.seed, c.eval.seed),
            (7, 7, 7, 7, 7)
        );
    }
}
