//! Command-line front end for the experiment pipeline.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 when a stage fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use secure_cdm::error::Error;
use secure_cdm::experiments::{Axis, MethodId, Pipeline, PipelineConfig, Profile};
use secure_cdm::nn::Backbone;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Smoke,
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Smoke => Profile::Smoke,
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackboneArg {
    Unet,
    Mlp,
}

#[derive(Parser, Debug)]
#[command(name = "cdm", version, about = "Conditional diffusion for secure MU-MISO beamforming")]
struct Cli {
    /// TOML file overriding the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed routed to every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: runs/<profile>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: ProfileArg,
    /// Reuse artifacts already present in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the oracle-labeled training set.
    GenData,
    /// Train a stage-1 denoiser.
    Train {
        #[arg(long, value_enum, default_value = "unet")]
        backbone: BackboneArg,
    },
    /// Fine-tune the stage-1 denoiser on the secrecy objective.
    Finetune,
    /// Score methods on the fixed test set.
    Eval {
        /// Comma-separated methods (default: those in the config).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Run the configured sweeps, or only the named axis.
    Sweep {
        #[arg(long)]
        axis: Option<String>,
    },
    /// Render figures from the metrics tables.
    Plot,
    /// Every stage in order.
    Pipeline,
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), (u8, Error)> {
    let profile: Profile = cli.profile.into();
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path, profile),
        None => Ok(PipelineConfig::profile(profile)),
    }
    .map_err(|e| (2, config_error(e)))?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.profile.as_str()));
    let mut pipeline = Pipeline::new(cfg, out).map_err(|e| (2, config_error(e)))?;
    pipeline.resume = cli.resume;

    let methods = match &cli.command {
        Command::Eval { methods } if !methods.is_empty() => methods
            .iter()
            .map(|m| m.parse::<MethodId>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| (2, config_error(e)))?,
        _ => pipeline.cfg.methods.clone(),
    };
    let plans = match &cli.command {
        Command::Sweep { axis: Some(a) } => {
            let axis: Axis = a.parse().map_err(|e| (2, config_error(e)))?;
            let plans: Vec<_> = pipeline.cfg.sweeps.iter().filter(|p| p.axis == axis).cloned().collect();
            if plans.is_empty() {
                return Err((2, Error::Config(format!("no sweep planned for axis `{axis}`"))));
            }
            plans
        }
        _ => pipeline.cfg.sweeps.clone(),
    };

    std::fs::create_dir_all(&pipeline.out).map_err(|e| (3, e.into()))?;
    let stage_failed = |e: Error| (3, e);
    match cli.command {
        Command::GenData => {
            let b = pipeline.gen_data().map_err(stage_failed)?;
            log::info!("wrote {} records to {}", b.len(), pipeline.data_dir().display());
        }
        Command::Train { backbone } => {
            let backbone = match backbone {
                BackboneArg::Unet => Backbone::Unet,
                BackboneArg::Mlp => Backbone::Mlp,
            };
            pipeline.train(backbone).map_err(stage_failed)?;
        }
        Command::Finetune => {
            pipeline.finetune().map_err(stage_failed)?;
        }
        Command::Eval { .. } => {
            for r in pipeline.eval(&methods).map_err(stage_failed)? {
                println!(
                    "{:8} {:.4} [{:.4}, {:.4}]",
                    r.method.as_str(),
                    r.summary.mean,
                    r.summary.ci_low,
                    r.summary.ci_high
                );
            }
        }
        Command::Sweep { .. } => {
            for plan in &plans {
                pipeline.sweep(plan).map_err(stage_failed)?;
                println!("{}", pipeline.sweep_csv(plan.axis).display());
            }
        }
        Command::Plot => {
            for f in pipeline.plot().map_err(stage_failed)? {
                println!("{}", f.display());
            }
        }
        Command::Pipeline => {
            let m = pipeline.run_all().map_err(stage_failed)?;
            println!("{} artifacts under {}", m.artifacts.len(), pipeline.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
