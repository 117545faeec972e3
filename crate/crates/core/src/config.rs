//! System configuration shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::env::dbm_to_watt;
use crate::error::{Error, Result};

/// Physical scenario parameters.
///
/// Field names in the config file follow the usual system-model symbols
/// (`M`, `K`, `L`, `J`, `P_dbm`); the Rust names spell out their role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Base-station antenna count.
    #[serde(rename = "M")]
    pub antennas: usize,
    /// Legitimate user count.
    #[serde(rename = "K")]
    pub users: usize,
    /// Eavesdropper count.
    #[serde(rename = "L")]
    pub eves: usize,
    /// Artificial-noise stream count.
    #[serde(rename = "J")]
    pub an_streams: usize,
    /// Transmit power in dBm.
    #[serde(rename = "P_dbm")]
    pub power_dbm: f64,
    /// Thermal noise power in dBm.
    pub noise_dbm: f64,
    /// LogSumExp temperature of the smooth max over eavesdroppers.
    pub alpha: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_exp: f64,
    pub ref_dist_m: f64,
    pub user_dist_min_m: f64,
    pub user_dist_max_m: f64,
    /// Maximum distance between an eavesdropper and the user it shadows.
    pub eve_radius_m: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            antennas: 8,
            users: 4,
            eves: 2,
            an_streams: 4,
            power_dbm: 20.0,
            noise_dbm: -100.0,
            alpha: 0.01,
            pathloss_ref_db: -30.0,
            pathloss_exp: 2.2,
            ref_dist_m: 1.0,
            user_dist_min_m: 50.0,
            user_dist_max_m: 80.0,
            eve_radius_m: 5.0,
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// Default AN stream count: the dimension of the users' null space,
    /// never less than one.
    pub fn default_an_streams(antennas: usize, users: usize) -> usize {
        antennas.saturating_sub(users).max(1)
    }

    /// Scenario with the given dimensions and the default AN budget.
    pub fn with_dims(antennas: usize, users: usize, eves: usize) -> Self {
        Self {
            antennas,
            users,
            eves,
            an_streams: Self::default_an_streams(antennas, users),
            ..Self::default()
        }
    }

    /// The reduced scenario used for desk-scale experiments (M=4, K=2, L=2, J=2).
    pub fn desk() -> Self {
        Self::with_dims(4, 2, 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.users == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        for (name, v) in [
            ("P_dbm", self.power_dbm),
            ("noise_dbm", self.noise_dbm),
            ("pathloss_ref_db", self.pathloss_ref_db),
            ("pathloss_exp", self.pathloss_exp),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.ref_dist_m > 0.0) {
            return Err(Error::Config("ref_dist_m must be positive".into()));
        }
        if !(self.user_dist_min_m > 0.0 && self.user_dist_min_m <= self.user_dist_max_m) {
            return Err(Error::Config(
                "user distance ring must satisfy 0 < min <= max".into(),
            ));
        }
        if !(self.eve_radius_m >= 0.0) {
            return Err(Error::Config("eve_radius_m must be non-negative".into()));
        }
        Ok(())
    }

    /// Linear transmit power in watts.
    pub fn power_watt(&self) -> f64 {
        dbm_to_watt(self.power_dbm).unwrap_or(f64::NAN)
    }

    /// Linear noise power in watts.
    pub fn noise_watt(&self) -> f64 {
        dbm_to_watt(self.noise_dbm).unwrap_or(f64::NAN)
    }

    /// The σ0²/P term that appears in every SINR denominator.
    pub fn noise_to_power(&self) -> f64 {
        self.noise_watt() / self.power_watt()
    }

    /// Length of the composite complex channel, M(K+L).
    pub fn channel_len(&self) -> usize {
        self.antennas * (self.users + self.eves)
    }

    /// Length of the composite complex strategy, M(K+J).
    pub fn strategy_len(&self) -> usize {
        self.antennas * (self.users + self.an_streams)
    }

    /// Length of the real strategy encoding, 2M(K+J).
    pub fn real_strategy_len(&self) -> usize {
        2 * self.strategy_len()
    }

    /// Length of the real channel embedding, 2M(K+L).
    pub fn real_channel_len(&self) -> usize {
        2 * self.channel_len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_scenario() {
        let cfg = SystemConfig::default();
        assert_eq!(cfg.antennas, 8);
        assert_eq!(cfg.users + cfg.an_streams, 8);
        assert!((cfg.noise_to_power() - 1e-12).abs() < 1e-24);
        cfg.validate().unwrap();
    }

    #[test]
    fn default_an_streams_clamps_to_one() {
        assert_eq!(SystemConfig::default_an_streams(4, 2), 2);
        assert_eq!(SystemConfig::default_an_streams(4, 4), 1);
        assert_eq!(SystemConfig::default_an_streams(4, 6), 1);
    }

    #[test]
    fn rejects_bad_ring_and_alpha() {
        let mut cfg = SystemConfig::desk();
        cfg.user_dist_min_m = 90.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::desk();
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::desk();
        cfg.eve_radius_m = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_keys_use_symbols() {
        let text = toml::to_string(&SystemConfig::desk()).unwrap();
        assert!(text.contains("M = 4"));
        assert!(text.contains("P_dbm = 20.0"));
        let back: SystemConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, SystemConfig::desk());
    }
}
