//! Rate quantities of the MU-MISO wiretap channel and the real encodings of
//! beamforming/AN strategies.
//!
//! Strategies carry normalized amplitudes (unit total power budget); the
//! physical power enters only through the `σ0²/P` term in each SINR.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{CMatrix, ChannelSet};
use crate::error::{Error, Result};

/// Beamforming matrix `W` (M×K) and AN matrix `V` (M×J), one column per stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub w: CMatrix,
    pub v: CMatrix,
}

impl Strategy {
    pub fn zeros(antennas: usize, users: usize, an_streams: usize) -> Self {
        Self {
            w: CMatrix::zeros(antennas, users),
            v: CMatrix::zeros(antennas, an_streams),
        }
    }

    pub fn for_config(cfg: &SystemConfig) -> Self {
        Self::zeros(cfg.antennas, cfg.users, cfg.an_streams)
    }

    pub fn antennas(&self) -> usize {
        self.w.nrows()
    }

    /// Composite vector `[w_1; …; w_K; v_1; …; v_J]`.
    pub fn composite(&self) -> Vec<Complex64> {
        self.w.iter().chain(self.v.iter()).copied().collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w: self.w.map(|c| c * factor),
            v: self.v.map(|c| c * factor),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.v.iter()).all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Real encoding `z = [Re(u); Im(u)]` of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealStrategyVec(pub Vec<f64>);

impl RealStrategyVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How the max over eavesdroppers is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Hard maximum.
    Exact,
    /// LogSumExp with temperature `alpha`.
    Smooth,
}

/// Every rate of one (channel, strategy) pair, in bits/s/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub user: Vec<f64>,
    /// `eve[l][k]`: rate at which eavesdropper `l` decodes user `k`.
    pub eve: Vec<Vec<f64>>,
    pub secrecy: Vec<f64>,
    pub sum: f64,
    pub mode: RateMode,
}

/// Received power terms `|g^† x|²` for every stream.
fn stream_gains(g: &[Complex64], s: &Strategy) -> (Vec<f64>, f64) {
    let proj = |col: nalgebra::DVectorView<'_, Complex64>| -> f64 {
        g.iter().zip(col.iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr()
    };
    let w_gain: Vec<f64> = s.w.column_iter().map(|c| proj(c.as_view())).collect();
    let an: f64 = s.v.column_iter().map(|c| proj(c.as_view())).sum();
    (w_gain, an)
}

fn row(m: &CMatrix, r: usize) -> Vec<Complex64> {
    (0..m.ncols()).map(|c| m[(r, c)]).collect()
}

/// Rates of all streams at one receiver with channel `g`.
fn receiver_rates(g: &[Complex64], s: &Strategy, noise_ratio: f64) -> Vec<f64> {
    let (w_gain, an) = stream_gains(g, s);
    // summed directly: subtracting the signal from a total loses digits at high SINR
    (0..w_gain.len())
        .map(|k| {
            let others: f64 = w_gain.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, x)| x).sum();
            (1.0 + w_gain[k] / (others + an + noise_ratio)).log2()
        })
        .collect()
}

fn check_shapes(cs: &ChannelSet, s: &Strategy) -> Result<()> {
    if s.w.nrows() != cs.antennas() || (s.v.ncols() > 0 && s.v.nrows() != cs.antennas()) {
        return Err(Error::ShapeMismatch(format!(
            "strategy has {} antennas, channels have {}",
            s.w.nrows(),
            cs.antennas()
        )));
    }
    if s.w.ncols() != cs.num_users() {
        return Err(Error::ShapeMismatch(format!(
            "strategy serves {} users, channel set has {}",
            s.w.ncols(),
            cs.num_users()
        )));
    }
    Ok(())
}

/// Achievable rate of user `k`.
pub fn user_rate(cs: &ChannelSet, s: &Strategy, k: usize, cfg: &SystemConfig) -> Result<f64> {
    check_shapes(cs, s)?;
    if k >= cs.num_users() {
        return Err(Error::invalid(format!("user index {k} out of range")));
    }
    Ok(receiver_rates(&row(&cs.users, k), s, cfg.noise_to_power())[k])
}

/// Rate at which eavesdropper `l` decodes the message of user `k`.
pub fn eve_rate(cs: &ChannelSet, s: &Strategy, l: usize, k: usize, cfg: &SystemConfig) -> Result<f64> {
    check_shapes(cs, s)?;
    if l >= cs.num_eves() {
        return Err(Error::invalid(format!("eavesdropper index {l} out of range")));
    }
    if k >= cs.num_users() {
        return Err(Error::invalid(format!("user index {k} out of range")));
    }
    Ok(receiver_rates(&row(&cs.eves, l), s, cfg.noise_to_power())[k])
}

/// `alpha · log Σ exp(x / alpha)`, evaluated in shifted form.
pub fn log_sum_exp(xs: &[f64], alpha: f64) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| ((x - max) / alpha).exp()).sum();
    max + alpha * s.ln()
}

/// Secrecy before the `(·)⁺` clamp.
fn secrecy_margin(user: f64, eves: &[f64], mode: RateMode, alpha: f64) -> f64 {
    if eves.is_empty() {
        return user;
    }
    match mode {
        RateMode::Exact => user - eves.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        RateMode::Smooth => user - log_sum_exp(eves, alpha),
    }
}

/// Worst-case secrecy rate of user `k`.
pub fn secrecy_rate(
    cs: &ChannelSet,
    s: &Strategy,
    k: usize,
    cfg: &SystemConfig,
    mode: RateMode,
) -> Result<f64> {
    Ok(secrecy_margin_of(cs, s, k, cfg, mode)?.max(0.0))
}

/// Secrecy of user `k` before clamping at zero.
pub fn secrecy_margin_of(
    cs: &ChannelSet,
    s: &Strategy,
    k: usize,
    cfg: &SystemConfig,
    mode: RateMode,
) -> Result<f64> {
    let r = user_rate(cs, s, k, cfg)?;
    let eves = (0..cs.num_eves())
        .map(|l| eve_rate(cs, s, l, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(secrecy_margin(r, &eves, mode, cfg.alpha))
}

/// All rates plus the sum secrecy rate.
pub fn sum_secrecy(cs: &ChannelSet, s: &Strategy, cfg: &SystemConfig, mode: RateMode) -> Result<RateReport> {
    check_shapes(cs, s)?;
    let nr = cfg.noise_to_power();
    let kk = cs.num_users();
    let user: Vec<f64> = (0..kk)
        .map(|k| receiver_rates(&row(&cs.users, k), s, nr)[k])
        .collect();
    let eve: Vec<Vec<f64>> = (0..cs.num_eves())
        .map(|l| receiver_rates(&row(&cs.eves, l), s, nr))
        .collect();
    let secrecy: Vec<f64> = (0..kk)
        .map(|k| {
            let col: Vec<f64> = eve.iter().map(|e| e[k]).collect();
            secrecy_margin(user[k], &col, mode, cfg.alpha).max(0.0)
        })
        .collect();
    let sum = secrecy.iter().sum();
    Ok(RateReport {
        user,
        eve,
        secrecy,
        sum,
        mode,
    })
}

/// Exact-mode sum secrecy rate, the figure of merit reported everywhere.
pub fn exact_sum_secrecy(cs: &ChannelSet, s: &Strategy, cfg: &SystemConfig) -> Result<f64> {
    Ok(sum_secrecy(cs, s, cfg, RateMode::Exact)?.sum)
}

/// `Σ_k ||w_k||² + Σ_j ||v_j||²`.
pub fn total_power(s: &Strategy) -> f64 {
    s.w.iter().chain(s.v.iter()).map(|c| c.norm_sqr()).sum()
}

/// Scale a strategy down onto the unit power budget; feasible input is
/// returned unchanged.
pub fn project_power(s: &Strategy) -> Strategy {
    let p = total_power(s);
    if p <= 1.0 {
        s.clone()
    } else {
        s.scaled(1.0 / p.sqrt())
    }
}

/// Same projection on a real encoding (power is the squared Euclidean norm).
pub fn project_power_real(z: &mut [f64]) {
    let p: f64 = z.iter().map(|x| x * x).sum();
    if p > 1.0 {
        let f = 1.0 / p.sqrt();
        z.iter_mut().for_each(|x| *x *= f);
    }
}

/// `z = [Re(u); Im(u)]` with `u = [w_1; …; w_K; v_1; …; v_J]`.
pub fn strategy_to_real(s: &Strategy) -> RealStrategyVec {
    RealStrategyVec(crate::env::complex_to_real(&s.composite()))
}

/// Reassemble a strategy from its real encoding.
pub fn real_to_strategy(z: &[f64], cfg: &SystemConfig) -> Result<Strategy> {
    real_to_strategy_dims(z, cfg.antennas, cfg.users, cfg.an_streams)
}

pub fn real_to_strategy_dims(z: &[f64], antennas: usize, users: usize, an_streams: usize) -> Result<Strategy> {
    let n = antennas * (users + an_streams);
    if z.len() != 2 * n {
        return Err(Error::invalid(format!(
            "real strategy has length {}, expected {}",
            z.len(),
            2 * n
        )));
    }
    let u: Vec<Complex64> = (0..n).map(|i| Complex64::new(z[i], z[n + i])).collect();
    let split = antennas * users;
    Ok(Strategy {
        w: DMatrix::from_column_slice(antennas, users, &u[..split]),
        v: DMatrix::from_column_slice(antennas, an_streams, &u[split..]),
    })
}

/// Smooth-mode sum secrecy rate and its gradient with respect to `z`.
///
/// Users whose smooth margin is not positive contribute neither value nor
/// gradient (subgradient zero at the clamp).
pub fn smooth_sum_and_grad(cs: &ChannelSet, z: &[f64], cfg: &SystemConfig) -> Result<(f64, Vec<f64>)> {
    let s = real_to_strategy(z, cfg)?;
    check_shapes(cs, &s)?;
    let nr = cfg.noise_to_power();
    let m = cfg.antennas;
    let kk = cfg.users;
    let jj = cfg.an_streams;
    let n = m * (kk + jj);
    let cols: Vec<Vec<Complex64>> = s
        .w
        .column_iter()
        .chain(s.v.column_iter())
        .map(|c| c.iter().copied().collect())
        .collect();
    // complex gradient accumulator, one entry per element of u
    let mut grad = vec![Complex64::new(0.0, 0.0); n];

    // receiver -> projections g^† x for every stream, total power and rates
    struct Rx {
        g: Vec<Complex64>,
        proj: Vec<Complex64>,
        total: f64,
    }
    let rx = |g: Vec<Complex64>| -> Rx {
        let proj: Vec<Complex64> = cols
            .iter()
            .map(|c| g.iter().zip(c).map(|(a, b)| a.conj() * b).sum())
            .collect();
        let total = proj.iter().map(|p| p.norm_sqr()).sum::<f64>() + nr;
        Rx { g, proj, total }
    };
    let users: Vec<Rx> = (0..kk).map(|k| rx(row(&cs.users, k))).collect();
    let eves: Vec<Rx> = (0..cs.num_eves()).map(|l| rx(row(&cs.eves, l))).collect();
    let others = |r: &Rx, k: usize| -> f64 {
        r.proj.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, p)| p.norm_sqr()).sum::<f64>() + nr
    };
    let rate = |r: &Rx, k: usize| -> f64 { (1.0 + r.proj[k].norm_sqr() / others(r, k)).log2() };
    let ln2 = std::f64::consts::LN_2;
    // d rate(r, k) scaled by `weight`, accumulated into grad
    let mut push = |r: &Rx, k: usize, weight: f64| {
        let interference = others(r, k);
        for (idx, p) in r.proj.iter().enumerate() {
            let mut coef = 2.0 * weight / (ln2 * r.total);
            if idx != k {
                coef -= 2.0 * weight / (ln2 * interference);
            }
            let a = *p * coef;
            for (mm, gm) in r.g.iter().enumerate() {
                grad[idx * m + mm] += a * gm;
            }
        }
    };

    let mut value = 0.0;
    for k in 0..kk {
        let r_user = rate(&users[k], k);
        let eve_rates: Vec<f64> = eves.iter().map(|e| rate(e, k)).collect();
        let margin = secrecy_margin(r_user, &eve_rates, RateMode::Smooth, cfg.alpha);
        if margin <= 0.0 {
            continue;
        }
        value += margin;
        push(&users[k], k, 1.0);
        if !eve_rates.is_empty() {
            let max = eve_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = eve_rates.iter().map(|&e| ((e - max) / cfg.alpha).exp()).collect();
            let norm: f64 = w.iter().sum();
            for (l, e) in eves.iter().enumerate() {
                push(e, k, -w[l] / norm);
            }
        }
    }
    let mut out = Vec::with_capacity(2 * n);
    out.extend(grad.iter().map(|c| c.re));
    out.extend(grad.iter().map(|c| c.im));
    Ok((value, out))
}

/// Gradient of the smooth sum secrecy rate with respect to the real encoding.
pub fn grad_sum_secrecy(cs: &ChannelSet, z: &RealStrategyVec, cfg: &SystemConfig) -> Result<Vec<f64>> {
    Ok(smooth_sum_and_grad(cs, z.as_slice(), cfg)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sample_scenario;
    use crate::rng::{keyed_rng, Domain};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Config whose σ0²/P is exactly `ratio` (P = 30 dBm = 1 W).
    fn cfg_with_ratio(m: usize, k: usize, l: usize, j: usize, ratio: f64) -> SystemConfig {
        SystemConfig {
            antennas: m,
            users: k,
            eves: l,
            an_streams: j,
            power_dbm: 30.0,
            noise_dbm: 30.0 + 10.0 * ratio.log10(),
            ..SystemConfig::default()
        }
    }

    fn random_strategy(cfg: &SystemConfig, seed: u64) -> Strategy {
        let mut rng = keyed_rng(seed, Domain::Misc, 99);
        let n = cfg.real_strategy_len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        project_power(&real_to_strategy(&z, cfg).unwrap()).scaled(0.999)
    }

    #[test]
    fn user_rate_forced_cases() {
        let cfg = cfg_with_ratio(2, 1, 0, 1, 1.0);
        let cs = ChannelSet::new(CMatrix::from_row_slice(1, 2, &[c(1., 0.), c(0., 0.)]), CMatrix::zeros(0, 2)).unwrap();
        let mut s = Strategy::for_config(&cfg);
        s.w[(0, 0)] = c(1.0, 0.0);
        assert_relative_eq!(user_rate(&cs, &s, 0, &cfg).unwrap(), 1.0, epsilon = 1e-12);

        let zero = Strategy::for_config(&cfg);
        assert_eq!(user_rate(&cs, &zero, 0, &cfg).unwrap(), 0.0);

        let mut s = Strategy::for_config(&cfg);
        s.w[(0, 0)] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        s.v[(1, 0)] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        assert_relative_eq!(user_rate(&cs, &s, 0, &cfg).unwrap(), 1.5f64.log2(), epsilon = 1e-12);
        assert!(user_rate(&cs, &s, 1, &cfg).is_err());
    }

    #[test]
    fn eve_rate_forced_cases() {
        let cfg = cfg_with_ratio(2, 1, 1, 1, 1.0);
        let cs = ChannelSet::new(
            CMatrix::from_row_slice(1, 2, &[c(1., 0.), c(0., 0.)]),
            CMatrix::from_row_slice(1, 2, &[c(0., 0.), c(1., 0.)]),
        )
        .unwrap();
        let mut s = Strategy::for_config(&cfg);
        s.w[(0, 0)] = c(1.0, 0.0);
        s.v[(1, 0)] = c(1.0, 0.0);
        assert_eq!(eve_rate(&cs, &s, 0, 0, &cfg).unwrap(), 0.0);
        assert!(eve_rate(&cs, &s, 1, 0, &cfg).is_err());
        assert!(eve_rate(&cs, &s, 0, 1, &cfg).is_err());
    }

    #[test]
    fn secrecy_exact_arithmetic() {
        assert_relative_eq!(secrecy_margin(2.0, &[0.5, 1.5], RateMode::Exact, 0.01), 0.5);
        assert_eq!(secrecy_margin(2.0, &[], RateMode::Smooth, 0.01), 2.0);
        // single eavesdropper: LogSumExp of one term is the term itself
        for alpha in [0.001, 0.01, 1.0, 10.0] {
            assert_relative_eq!(
                secrecy_margin(2.0, &[0.7], RateMode::Smooth, alpha),
                secrecy_margin(2.0, &[0.7], RateMode::Exact, alpha),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn log_sum_exp_does_not_overflow() {
        let v = log_sum_exp(&[30.0, 29.0], 0.01);
        assert!(v.is_finite());
        assert_relative_eq!(v, 30.0, epsilon = 1e-12);
    }

    #[test]
    fn power_utilities() {
        let cfg = SystemConfig::with_dims(3, 2, 1);
        let zero = Strategy::for_config(&cfg);
        assert_eq!(total_power(&zero), 0.0);
        let mut one = zero.clone();
        one.w[(0, 1)] = c(0.6, 0.0);
        one.w[(2, 1)] = c(0.0, -0.8);
        assert_relative_eq!(total_power(&one), 1.0, epsilon = 1e-15);

        let s = random_strategy(&cfg, 3).scaled(7.0);
        let fro = s.w.norm_squared() + s.v.norm_squared();
        assert_relative_eq!(total_power(&s), fro, max_relative = 1e-12);

        let feasible = random_strategy(&cfg, 4);
        assert_eq!(project_power(&feasible), feasible);
        let p = total_power(&feasible);
        let big = feasible.scaled(2.0 / p.sqrt());
        let proj = project_power(&big);
        assert_relative_eq!(total_power(&proj), 1.0, epsilon = 1e-12);
        for (a, b) in proj.w.iter().zip(big.w.iter()) {
            assert_relative_eq!(a.re, b.re / 2.0, epsilon = 1e-15);
        }
        assert_eq!(project_power(&proj), proj);
    }

    #[test]
    fn real_layout() {
        let s = Strategy {
            w: CMatrix::from_column_slice(1, 1, &[c(1.0, 2.0)]),
            v: CMatrix::from_column_slice(1, 1, &[c(3.0, -1.0)]),
        };
        assert_eq!(strategy_to_real(&s).0, vec![1.0, 3.0, 2.0, -1.0]);
        let back = real_to_strategy_dims(&[1.0, 3.0, 2.0, -1.0], 1, 1, 1).unwrap();
        assert_eq!(back, s);

        let real = Strategy {
            w: CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(-2.0, 0.0)]),
            v: CMatrix::zeros(2, 0),
        };
        let z = strategy_to_real(&real).0;
        assert!(z[2..].iter().all(|&x| x == 0.0));
        assert!(real_to_strategy_dims(&z[..3], 2, 1, 0).is_err());
    }

    #[test]
    fn sum_secrecy_composes_per_user_calls() {
        let cfg = SystemConfig::desk();
        for i in 0..20 {
            let cs = sample_scenario(&cfg, Domain::Misc, i).unwrap();
            let s = random_strategy(&cfg, i);
            for mode in [RateMode::Exact, RateMode::Smooth] {
                let rep = sum_secrecy(&cs, &s, &cfg, mode).unwrap();
                let per_user: f64 = (0..cfg.users).map(|k| secrecy_rate(&cs, &s, k, &cfg, mode).unwrap()).sum();
                assert_eq!(rep.sum, per_user);
                assert!(rep.secrecy.iter().all(|&x| x >= 0.0));
            }
        }
        let zero = Strategy::for_config(&cfg);
        let cs = sample_scenario(&cfg, Domain::Misc, 0).unwrap();
        assert_eq!(exact_sum_secrecy(&cs, &zero, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn phase_rotation_leaves_rates_unchanged() {
        let cfg = SystemConfig::desk();
        let cs = sample_scenario(&cfg, Domain::Misc, 1).unwrap();
        let s = random_strategy(&cfg, 1);
        let base = sum_secrecy(&cs, &s, &cfg, RateMode::Exact).unwrap();
        let mut rot = s.clone();
        let ph = Complex64::from_polar(1.0, 1.234);
        rot.w.column_mut(1).iter_mut().for_each(|x| *x *= ph);
        rot.v.column_mut(0).iter_mut().for_each(|x| *x *= ph.conj());
        let after = sum_secrecy(&cs, &rot, &cfg, RateMode::Exact).unwrap();
        for (a, b) in base.user.iter().zip(&after.user) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
        assert_relative_eq!(base.sum, after.sum, max_relative = 1e-10);
    }

    #[test]
    fn clamped_user_has_zero_gradient() {
        // single user, eavesdropper with the same channel: margin is exactly
        // zero before the clamp or negative once AN is added
        let cfg = cfg_with_ratio(2, 1, 1, 1, 1.0);
        let h = CMatrix::from_row_slice(1, 2, &[c(1., 0.), c(0.5, 0.5)]);
        let he = CMatrix::from_row_slice(1, 2, &[c(2., 0.), c(1.0, 1.0)]);
        let cs = ChannelSet::new(h, he).unwrap();
        let z = vec![0.5, 0.1, 0.2, 0.1, 0.0, 0.3, 0.1, 0.0];
        let s = real_to_strategy(&z, &cfg).unwrap();
        assert!(secrecy_margin_of(&cs, &s, 0, &cfg, RateMode::Smooth).unwrap() < 0.0);
        let (v, g) = smooth_sum_and_grad(&cs, &z, &cfg).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SystemConfig {
            power_dbm: 0.0,
            ..SystemConfig::desk()
        };
        let mut checked = 0;
        for i in 0..20 {
            let cs = sample_scenario(&cfg, Domain::Misc, 100 + i).unwrap();
            let z = strategy_to_real(&random_strategy(&cfg, 100 + i)).0;
            let s = real_to_strategy(&z, &cfg).unwrap();
            let margins: Vec<f64> = (0..cfg.users)
                .map(|k| secrecy_margin_of(&cs, &s, k, &cfg, RateMode::Smooth).unwrap())
                .collect();
            if margins.iter().any(|m| m.abs() < 1e-3) {
                continue;
            }
            let (_, g) = smooth_sum_and_grad(&cs, &z, &cfg).unwrap();
            let h = 1e-6;
            for d in 0..z.len() {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[d] += h;
                zm[d] -= h;
                let fp = smooth_sum_and_grad(&cs, &zp, &cfg).unwrap().0;
                let fm = smooth_sum_and_grad(&cs, &zm, &cfg).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-4 * (1.0 + g[d].abs()), "dim {d}: fd {fd} vs {}", g[d]);
            }
            checked += 1;
        }
        assert!(checked >= 5);
    }
}
