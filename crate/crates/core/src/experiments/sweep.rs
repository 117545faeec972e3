//! Parameter sweeps: one row per (axis value, method), every method scored
//! on the same channels within a cell.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::{channel_set_hash, evaluate_method, CheckpointSet, EvalOptions, MethodId, Summary};
use crate::config::SystemConfig;
use crate::datagen::test_channels;
use crate::error::{Error, Result};

pub const SWEEP_HEADER: &str = "axis,method,mean_rsum,ci_low,ci_high,n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Power,
    Eves,
    Users,
    Noise,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Power, Axis::Eves, Axis::Users, Axis::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Power => "power",
            Axis::Eves => "eves",
            Axis::Users => "users",
            Axis::Noise => "noise",
        }
    }

    /// Axis label for figures.
    pub fn label(self) -> &'static str {
        match self {
            Axis::Power => "transmit power P (dBm)",
            Axis::Eves => "number of eavesdroppers L",
            Axis::Users => "number of users K",
            Axis::Noise => "noise power (dBm)",
        }
    }

    /// Whether moving along the axis changes network dimensions.
    pub fn changes_dims(self) -> bool {
        matches!(self, Axis::Eves | Axis::Users)
    }

    /// The configuration of one sweep cell. The users axis keeps
    /// `J = M − K`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let count = || -> Result<usize> {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::invalid(format!("{} axis needs non-negative integers, got {value}", self.as_str())));
            }
            Ok(value as usize)
        };
        let mut cfg = base.clone();
        match self {
            Axis::Power => cfg.power_dbm = value,
            Axis::Noise => cfg.noise_dbm = value,
            Axis::Eves => cfg.eves = count()?,
            Axis::Users => {
                cfg.users = count()?;
                cfg.an_streams = SystemConfig::default_an_streams(cfg.antennas, cfg.users);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Configuration the axis value is applied to.
    pub fixed: SystemConfig,
    pub test_channels: usize,
    /// Best-of-B width for learned methods.
    pub candidates: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        let up = self.values.windows(2).all(|w| w[1] > w[0]);
        let down = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::invalid("sweep values must be strictly monotone"));
        }
        if self.candidates == 0 || self.test_channels == 0 {
            return Err(Error::invalid("candidates and test_channels must be at least 1"));
        }
        for &v in &self.values {
            self.axis.apply(&self.fixed, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: MethodId,
    pub summary: Summary,
    /// Hash of the channel list every method in the cell was scored on.
    pub channel_hash: String,
}

/// Supplies trained models for a sweep cell's configuration.
pub type ArtifactSource<'a> = dyn FnMut(&SystemConfig) -> Result<CheckpointSet> + 'a;

pub fn run_sweep(
    spec: &SweepSpec,
    methods: &[MethodId],
    opts: &EvalOptions,
    artifacts: &mut ArtifactSource,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid("no methods to evaluate"));
    }
    let opts = EvalOptions {
        candidates: spec.candidates,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    for &value in &spec.values {
        let cfg = spec.axis.apply(&spec.fixed, value)?;
        let channels = test_channels(&cfg, spec.test_channels)?;
        let hash = channel_set_hash(&channels);
        log::info!("{} = {value}: channel set {}", spec.axis, &hash[..12]);
        let checkpoints = if methods.iter().any(|m| m.is_learned()) {
            artifacts(&cfg)?
        } else {
            CheckpointSet::default()
        };
        for &m in methods {
            let r = evaluate_method(m, &checkpoints, &channels, &cfg, &opts)?;
            rows.push(SweepRow {
                value,
                method: m,
                summary: r.summary,
                channel_hash: hash.clone(),
            });
        }
    }
    Ok(rows)
}

/// Format an axis value without a trailing `.0` for integers.
pub fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            format_value(r.value),
            r.method,
            r.summary.mean,
            r.summary.ci_low,
            r.summary.ci_high,
            r.summary.n
        )?;
    }
    f.flush()?;
    Ok(())
}

/// One parsed row of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub axis: String,
    pub method: MethodId,
    pub summary: Summary,
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |reason: String| Error::CorruptData {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_HEADER => {}
        other => return Err(bad(format!("unexpected header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(bad(format!("row {} has {} columns", i + 2, cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {}: `{s}` is not a number", i + 2)));
        rows.push(CsvRow {
            axis: cols[0].to_string(),
            method: cols[1].parse()?,
            summary: Summary {
                mean: num(cols[2])?,
                ci_low: num(cols[3])?,
                ci_high: num(cols[4])?,
                n: cols[5].parse().map_err(|_| bad(format!("row {}: bad count", i + 2)))?,
            },
        });
    }
    Ok(rows)
}

/// Expected direction of a metric along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    /// No step falls significantly: `next.ci_high ≥ prev.ci_low`.
    NonDecreasing,
    /// No step rises significantly: `next.ci_low ≤ prev.ci_high`.
    NonIncreasing,
    /// Every step raises the mean.
    Increasing,
}

/// Check `trend` on the ordered summaries of one method.
pub fn trend_holds(points: &[Summary], trend: Trend) -> bool {
    points.windows(2).all(|w| match trend {
        Trend::NonDecreasing => w[1].ci_high >= w[0].ci_low,
        Trend::NonIncreasing => w[1].ci_low <= w[0].ci_high,
        Trend::Increasing => w[1].mean > w[0].mean,
    })
}

/// Summaries of `method` in axis order.
pub fn series(rows: &[SweepRow], method: MethodId) -> Vec<Summary> {
    rows.iter().filter(|r| r.method == method).map(|r| r.summary).collect()
}
