//! Channel-conditional diffusion models for secure MU-MISO beamforming.
//!
//! The crate covers the whole workflow: simulate wiretap channels
//! ([`env`]), score strategies ([`metrics`]), label channels with classical
//! optimizers ([`baselines`]), build datasets ([`datagen`]), train and sample
//! conditional diffusion models ([`diffusion`], [`nn`], [`trainer`],
//! [`finetune`]) and compare everything in sweeps ([`experiments`]).

pub mod baselines;
pub mod config;
pub mod datagen;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod experiments;
pub mod finetune;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use config::SystemConfig;
pub use env::{ChannelSet, Placement};
pub use error::{Error, Result};
pub use metrics::{RateMode, RateReport, RealStrategyVec, Strategy};
