//! Wireless scenario: node geometry, path loss and Rayleigh fading.
//!
//! The base station sits at the origin of a plane. Users are dropped
//! uniformly over an annulus, and each eavesdropper is dropped uniformly in a
//! disk around a randomly chosen user.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Domain};

pub type CMatrix = DMatrix<Complex64>;

/// Convert a power level from dBm to watts.
pub fn dbm_to_watt(x_dbm: f64) -> Result<f64> {
    if !x_dbm.is_finite() {
        return Err(Error::invalid(format!("power {x_dbm} dBm is not finite")));
    }
    Ok(10f64.powf((x_dbm - 30.0) / 10.0))
}

/// Log-distance path loss in dB: `L0 - 10 ξ log10(d / d0)`.
pub fn path_loss_db(dist_m: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(dist_m > 0.0) || !dist_m.is_finite() {
        return Err(Error::invalid(format!("link distance {dist_m} m must be positive")));
    }
    Ok(cfg.pathloss_ref_db - 10.0 * cfg.pathloss_exp * (dist_m / cfg.ref_dist_m).log10())
}

/// Node positions for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub user_pos: Vec<[f64; 2]>,
    pub eve_pos: Vec<[f64; 2]>,
    pub user_dist: Vec<f64>,
    pub eve_dist: Vec<f64>,
    /// Index of the user each eavesdropper was dropped around.
    pub eve_anchor: Vec<usize>,
}

fn norm2d(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

/// Drop users on the annulus and eavesdroppers around random users.
pub fn sample_placement<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Placement> {
    cfg.validate()?;
    let (r_min, r_max) = (cfg.user_dist_min_m, cfg.user_dist_max_m);
    let mut user_pos = Vec::with_capacity(cfg.users);
    let mut user_dist = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        // uniform over the annulus area
        let u: f64 = rng.gen();
        let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
        let r = r.clamp(r_min, r_max);
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        user_pos.push([r * theta.cos(), r * theta.sin()]);
        user_dist.push(r);
    }

    let mut eve_pos = Vec::with_capacity(cfg.eves);
    let mut eve_dist = Vec::with_capacity(cfg.eves);
    let mut eve_anchor = Vec::with_capacity(cfg.eves);
    for _ in 0..cfg.eves {
        let anchor = rng.gen_range(0..cfg.users);
        let rho = cfg.eve_radius_m * rng.gen::<f64>().sqrt();
        let phi = rng.gen::<f64>() * std::f64::consts::TAU;
        let base = user_pos[anchor];
        let p = [base[0] + rho * phi.cos(), base[1] + rho * phi.sin()];
        eve_dist.push(norm2d(p));
        eve_pos.push(p);
        eve_anchor.push(anchor);
    }

    Ok(Placement {
        user_pos,
        eve_pos,
        user_dist,
        eve_dist,
        eve_anchor,
    })
}

/// All channel vectors of one realization.
///
/// Row `k` of `users` holds the entries of `h_k`, row `l` of `eves` those of
/// `h_{E,l}`; the received signal from a precoder `w` is `h^† w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub users: CMatrix,
    pub eves: CMatrix,
}

impl ChannelSet {
    pub fn new(users: CMatrix, eves: CMatrix) -> Result<Self> {
        if users.nrows() == 0 {
            return Err(Error::invalid("channel set needs at least one user"));
        }
        if eves.nrows() > 0 && eves.ncols() != users.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "user channels have {} antennas, eavesdropper channels {}",
                users.ncols(),
                eves.ncols()
            )));
        }
        let eves = if eves.nrows() == 0 {
            CMatrix::zeros(0, users.ncols())
        } else {
            eves
        };
        Ok(Self { users, eves })
    }

    pub fn antennas(&self) -> usize {
        self.users.ncols()
    }

    pub fn num_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn num_eves(&self) -> usize {
        self.eves.nrows()
    }

    /// Composite channel `[h_1; …; h_K; h_E1; …; h_EL]`.
    pub fn composite(&self) -> Vec<Complex64> {
        composite_channel(self)
    }

    /// Inverse of [`composite_channel`].
    pub fn from_composite(h: &[Complex64], antennas: usize, users: usize, eves: usize) -> Result<Self> {
        if h.len() != antennas * (users + eves) {
            return Err(Error::ShapeMismatch(format!(
                "composite channel has length {}, expected {}",
                h.len(),
                antennas * (users + eves)
            )));
        }
        let users_m = CMatrix::from_row_slice(users, antennas, &h[..antennas * users]);
        let eves_m = CMatrix::from_row_slice(eves, antennas, &h[antennas * users..]);
        Self::new(users_m, eves_m)
    }

    /// Real embedding `[Re(h); Im(h)]` of the composite channel.
    pub fn real_embedding(&self) -> Vec<f64> {
        complex_to_real(&self.composite())
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(self.eves.iter()).all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// `[Re(x); Im(x)]`.
pub fn complex_to_real(x: &[Complex64]) -> Vec<f64> {
    x.iter().map(|c| c.re).chain(x.iter().map(|c| c.im)).collect()
}

/// Inverse of [`complex_to_real`]; the input must have even length.
pub fn real_to_complex(x: &[f64]) -> Vec<Complex64> {
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect()
}

/// Row-major concatenation of user then eavesdropper channels.
pub fn composite_channel(cs: &ChannelSet) -> Vec<Complex64> {
    let m = cs.antennas();
    let mut out = Vec::with_capacity(m * (cs.num_users() + cs.num_eves()));
    for mat in [&cs.users, &cs.eves] {
        for r in 0..mat.nrows() {
            out.extend((0..m).map(|c| mat[(r, c)]));
        }
    }
    out
}

/// Circularly-symmetric complex Gaussian with unit variance.
fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn fading_row<R: Rng + ?Sized>(
    mat: &mut CMatrix,
    row: usize,
    dist: f64,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<()> {
    let scale = 10f64.powf(path_loss_db(dist, cfg)? / 10.0).sqrt();
    for c in 0..mat.ncols() {
        mat[(row, c)] = cn01(rng) * scale;
    }
    Ok(())
}

/// Draw independent Rayleigh-faded channels scaled by each node's path loss.
pub fn sample_channels<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    placement: &Placement,
    rng: &mut R,
) -> Result<ChannelSet> {
    if placement.user_dist.len() != cfg.users || placement.eve_dist.len() != cfg.eves {
        return Err(Error::ShapeMismatch(format!(
            "placement has {} users / {} eves, config expects {} / {}",
            placement.user_dist.len(),
            placement.eve_dist.len(),
            cfg.users,
            cfg.eves
        )));
    }
    let m = cfg.antennas;
    let mut users = CMatrix::zeros(cfg.users, m);
    for (k, &d) in placement.user_dist.iter().enumerate() {
        fading_row(&mut users, k, d, cfg, rng)?;
    }
    let mut eves = CMatrix::zeros(cfg.eves, m);
    for (l, &d) in placement.eve_dist.iter().enumerate() {
        // a zero-radius eavesdropper sits exactly on its user
        let d = if d > 0.0 { d } else { placement.user_dist[placement.eve_anchor[l]] };
        fading_row(&mut eves, l, d, cfg, rng)?;
    }
    ChannelSet::new(users, eves)
}

/// Placement and channels for record `index` of a domain, drawn from the
/// stream keyed by `(cfg.seed, domain, index)`.
pub fn sample_scenario(cfg: &SystemConfig, domain: Domain, index: u64) -> Result<ChannelSet> {
    let mut rng = keyed_rng(cfg.seed, domain, index);
    let placement = sample_placement(cfg, &mut rng)?;
    sample_channels(cfg, &placement, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed_rng;
    use approx::assert_relative_eq;

    #[test]
    fn dbm_conversions() {
        assert_relative_eq!(dbm_to_watt(30.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watt(20.0).unwrap(), 0.1, max_relative = 1e-14);
        assert_relative_eq!(dbm_to_watt(-100.0).unwrap(), 1e-13, max_relative = 1e-12);
        assert!(dbm_to_watt(f64::NAN).is_err());
        assert!(dbm_to_watt(f64::INFINITY).is_err());
    }

    #[test]
    fn path_loss_values() {
        let cfg = SystemConfig::default();
        assert_relative_eq!(path_loss_db(1.0, &cfg).unwrap(), -30.0);
        // -30 - 22 log10(50) and -30 - 22 log10(80)
        assert_relative_eq!(path_loss_db(50.0, &cfg).unwrap(), -67.3773, epsilon = 1e-3);
        assert_relative_eq!(path_loss_db(80.0, &cfg).unwrap(), -71.8679, epsilon = 1e-3);
        assert!(path_loss_db(0.0, &cfg).is_err());
        assert!(path_loss_db(-3.0, &cfg).is_err());
    }

    #[test]
    fn placement_without_eves() {
        let cfg = SystemConfig { eves: 0, ..SystemConfig::with_dims(4, 2, 0) };
        let p = sample_placement(&cfg, &mut keyed_rng(1, Domain::Misc, 0)).unwrap();
        assert_eq!(p.user_pos.len(), 2);
        assert!(p.eve_pos.is_empty() && p.eve_dist.is_empty() && p.eve_anchor.is_empty());
    }

    #[test]
    fn zero_radius_eve_sits_on_user() {
        let cfg = SystemConfig {
            eve_radius_m: 0.0,
            ..SystemConfig::with_dims(2, 1, 1)
        };
        let mut rng = keyed_rng(2, Domain::Misc, 0);
        let p = sample_placement(&cfg, &mut rng).unwrap();
        assert_eq!(p.eve_pos[0], p.user_pos[0]);
        let cs = sample_channels(&cfg, &p, &mut rng).unwrap();
        assert!(cs.users != cs.eves);
    }

    #[test]
    fn placement_bounds_hold_on_every_draw() {
        let cfg = SystemConfig::with_dims(8, 4, 4);
        let mut rng = keyed_rng(3, Domain::Misc, 0);
        for _ in 0..10_000 {
            let p = sample_placement(&cfg, &mut rng).unwrap();
            for &d in &p.user_dist {
                assert!((50.0..=80.0).contains(&d));
            }
            for l in 0..4 {
                let u = p.user_pos[p.eve_anchor[l]];
                let e = p.eve_pos[l];
                assert!(norm2d([e[0] - u[0], e[1] - u[1]]) <= 5.0 + 1e-12);
                assert_relative_eq!(p.eve_dist[l], norm2d(e));
            }
        }
    }

    #[test]
    fn fading_second_moment_matches_path_loss() {
        let cfg = SystemConfig::with_dims(1, 1, 0);
        let placement = Placement {
            user_pos: vec![[60.0, 0.0]],
            eve_pos: vec![],
            user_dist: vec![60.0],
            eve_dist: vec![],
            eve_anchor: vec![],
        };
        let expected = 10f64.powf(path_loss_db(60.0, &cfg).unwrap() / 10.0);
        let mut rng = keyed_rng(4, Domain::Misc, 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let cs = sample_channels(&cfg, &placement, &mut rng).unwrap();
            acc += cs.users[(0, 0)].norm_sqr();
        }
        let rel = (acc / n as f64 - expected).abs() / expected;
        assert!(rel < 0.02, "relative error {rel}");
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = SystemConfig::desk();
        let a = sample_scenario(&cfg, Domain::TrainChannels, 11).unwrap();
        let b = sample_scenario(&cfg, Domain::TrainChannels, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn composite_layout() {
        let one = ChannelSet::new(
            CMatrix::from_row_slice(1, 2, &[Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)]),
            CMatrix::zeros(0, 2),
        )
        .unwrap();
        assert_eq!(one.composite(), vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)]);

        let two = ChannelSet::new(
            CMatrix::from_row_slice(1, 1, &[Complex64::new(1.0, 0.0)]),
            CMatrix::from_row_slice(1, 1, &[Complex64::new(0.0, 3.0)]),
        )
        .unwrap();
        assert_eq!(two.composite(), vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 3.0)]);
    }

    #[test]
    fn composite_reshapes_back() {
        let cfg = SystemConfig::with_dims(3, 2, 2);
        let cs = sample_scenario(&cfg, Domain::Misc, 5).unwrap();
        let h = cs.composite();
        // independent reshape: entry (node, antenna) lives at node * M + antenna
        for k in 0..2 {
            for a in 0..3 {
                assert_eq!(h[k * 3 + a], cs.users[(k, a)]);
                assert_eq!(h[(2 + k) * 3 + a], cs.eves[(k, a)]);
            }
        }
        assert_eq!(ChannelSet::from_composite(&h, 3, 2, 2).unwrap(), cs);
    }
}
