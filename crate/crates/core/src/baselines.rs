//! Classical strategy generators: maximum-ratio transmission, regularized
//! zero-forcing with null-space artificial noise, and a projected
//! first-order optimizer used both to label datasets and as the
//! optimization reference ("OPT (reimpl.)").

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{CMatrix, ChannelSet};
use crate::error::{Error, Result};
use crate::metrics::{
    exact_sum_secrecy, project_power_real, real_to_strategy, smooth_sum_and_grad, strategy_to_real, Strategy,
};
use crate::rng::{rng_from_key, stream_key, Domain};

/// Data-power fractions searched by [`rzf_ns_best`].
pub const RHO_GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Starting point of each optimizer restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleInit {
    /// All-zero strategy. Every gradient vanishes there, so the restart
    /// stays put and the fallback strategies win.
    Zero,
    /// MRT on the data streams, small random AN, plus Gaussian jitter.
    MrtPlusNoise,
    /// Isotropic Gaussian, scaled onto the power sphere.
    Random,
}

/// Update rule of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Adam ascent steps with an exponentially decaying step size, each
    /// followed by projection onto the unit power ball.
    ProjectedAdam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub step_rule: StepRule,
    /// Stop a restart once the projected gradient norm drops below this.
    pub tol: f64,
    pub init: OracleInit,
    /// Initial step size.
    pub step_size: f64,
    /// Final step size as a fraction of the initial one.
    pub step_decay: f64,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 500,
            step_rule: StepRule::ProjectedAdam,
            tol: 1e-6,
            init: OracleInit::MrtPlusNoise,
            step_size: 0.05,
            step_decay: 0.01,
            seed: 0,
        }
    }
}

impl OracleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("oracle needs at least one restart"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("oracle tolerance must be positive"));
        }
        if !(self.step_size > 0.0) || !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::invalid("oracle step size must be positive and decay in (0, 1]"));
        }
        Ok(())
    }
}

/// Effective downlink matrix `G` (rows `h_k^†`), so the users receive `G w`.
fn effective_matrix(rows: &CMatrix) -> CMatrix {
    rows.map(|c| c.conj())
}

/// Maximum-ratio transmission with an equal power split and no AN.
pub fn mrt(cs: &ChannelSet, cfg: &SystemConfig) -> Strategy {
    let k = cs.num_users();
    let mut s = Strategy::zeros(cs.antennas(), k, cfg.an_streams);
    let share = (1.0 / k as f64).sqrt();
    for u in 0..k {
        let h = cs.users.row(u);
        let norm = h.norm();
        if norm > 0.0 {
            for a in 0..cs.antennas() {
                s.w[(a, u)] = h[a] * (share / norm);
            }
        }
    }
    s
}

/// Orthonormal basis of `{v : h_k^† v = 0 ∀k}`, one vector per column.
pub fn user_null_space(cs: &ChannelSet) -> CMatrix {
    let m = cs.antennas();
    let k = cs.num_users();
    if k >= m {
        return CMatrix::zeros(m, 0);
    }
    // Hermitian Gram matrix G^†G; its null eigenvectors span the null space of G
    let g = effective_matrix(&cs.users);
    let gram = g.adjoint() * &g;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let dim = m - k;
    let mut basis = CMatrix::zeros(m, dim);
    for (c, &idx) in order.iter().take(dim).enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(idx));
    }
    // one Gram-Schmidt pass against G to push the residual to round-off
    for c in 0..dim {
        let mut v = basis.column(c).clone_owned();
        for r in 0..k {
            let grow = g.row(r).transpose().map(|x| x.conj());
            let coef = grow.dotc(&v) / grow.dotc(&grow);
            v -= grow * coef;
        }
        for prev in 0..c {
            let p = basis.column(prev).clone_owned();
            let coef = p.dotc(&v);
            v -= p * coef;
        }
        let n = v.norm();
        basis.set_column(c, &(v / Complex64::new(n, 0.0)));
    }
    basis
}

/// Regularized zero-forcing data beams carrying a fraction `rho` of the
/// power, with the rest spread as AN over the users' null space.
pub fn rzf_ns(cs: &ChannelSet, cfg: &SystemConfig, rho: f64) -> Result<Strategy> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("data power fraction {rho} outside [0, 1]")));
    }
    let m = cs.antennas();
    let k = cs.num_users();
    let g = effective_matrix(&cs.users);
    let kappa = k as f64 * cfg.noise_to_power();
    let loaded = &g * g.adjoint() + CMatrix::identity(k, k) * Complex64::new(kappa, 0.0);
    let inv = loaded
        .try_inverse()
        .ok_or_else(|| Error::invalid("RZF Gram matrix is singular"))?;
    let w_dir = g.adjoint() * inv;

    let null = user_null_space(cs);
    let an_dims = null.ncols().min(cfg.an_streams);
    let rho = if an_dims == 0 { 1.0 } else { rho };

    let w_pow = w_dir.norm_squared();
    let w = if w_pow > 0.0 {
        w_dir * Complex64::new((rho / w_pow).sqrt(), 0.0)
    } else {
        w_dir
    };
    let mut v = CMatrix::zeros(m, cfg.an_streams);
    if an_dims > 0 {
        let amp = ((1.0 - rho) / an_dims as f64).sqrt();
        for j in 0..an_dims {
            v.set_column(j, &(null.column(j) * Complex64::new(amp, 0.0)));
        }
    }
    Ok(Strategy { w, v })
}

/// RZF-NS with the data/AN split picked from [`RHO_GRID`] by exact sum
/// secrecy rate. Returns the strategy, its rate and the chosen split.
pub fn rzf_ns_best(cs: &ChannelSet, cfg: &SystemConfig) -> Result<(Strategy, f64, f64)> {
    let mut best: Option<(Strategy, f64, f64)> = None;
    for &rho in &RHO_GRID {
        let s = rzf_ns(cs, cfg, rho)?;
        let r = exact_sum_secrecy(cs, &s, cfg)?;
        if best.as_ref().map_or(true, |b| r > b.1) {
            best = Some((s, r, rho));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Rotate a strategy into a canonical representative of its rate-equivalence
/// class: each beam is phased so that `h_k^† w_k` is real and non-negative,
/// and `V` is replaced by the lower-trapezoidal factor of `V V^†` with a
/// real positive diagonal. Every rate is unchanged.
pub fn canonicalize(s: &Strategy, cs: &ChannelSet) -> Strategy {
    let mut out = s.clone();
    for k in 0..out.w.ncols().min(cs.num_users()) {
        let h = cs.users.row(k);
        let gain: Complex64 = (0..out.w.nrows()).map(|a| h[a].conj() * out.w[(a, k)]).sum();
        if gain.norm() > 0.0 {
            let rot = gain.conj() / gain.norm();
            out.w.column_mut(k).iter_mut().for_each(|x| *x *= rot);
        }
    }
    let (m, j) = (out.v.nrows(), out.v.ncols());
    if j > 0 && j <= m && out.v.norm_squared() > 0.0 {
        // V^† = Q R  =>  V Q = R^†, lower trapezoidal
        let qr = out.v.adjoint().qr();
        let mut r: DMatrix<Complex64> = qr.r();
        for i in 0..r.nrows() {
            let d = r[(i, i)];
            if d.norm() > 0.0 {
                let rot = d.conj() / d.norm();
                r.row_mut(i).iter_mut().for_each(|x| *x *= rot);
            }
        }
        out.v = r.adjoint();
    }
    out
}

/// Result of [`oracle_optimize`].
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub strategy: Strategy,
    /// Exact-mode sum secrecy rate of `strategy`.
    pub rsum: f64,
    /// Which candidate won: `"ascent"`, `"mrt"` or `"rzf-ns"`.
    pub source: &'static str,
}

fn init_point<R: Rng>(cs: &ChannelSet, cfg: &SystemConfig, init: OracleInit, rng: &mut R) -> Vec<f64> {
    let n = cfg.real_strategy_len();
    match init {
        OracleInit::Zero => vec![0.0; n],
        OracleInit::Random => {
            let mut z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            z.iter_mut().for_each(|x| *x /= norm);
            z
        }
        OracleInit::MrtPlusNoise => {
            let mut z = strategy_to_real(&mrt(cs, cfg).scaled(0.8)).0;
            let data = 2 * cfg.antennas * cfg.users;
            for (i, x) in z.iter_mut().enumerate() {
                let sd = if i % (n / 2) < data / 2 || (i >= n / 2 && i - n / 2 < data / 2) {
                    0.15
                } else {
                    0.2
                };
                *x += sd * rng.sample::<f64, _>(StandardNormal);
            }
            project_power_real(&mut z);
            z
        }
    }
}

/// Norm of the gradient after removing the component normal to an active
/// power constraint.
pub fn tangent_grad_norm(z: &[f64], g: &[f64]) -> f64 {
    let p: f64 = z.iter().map(|x| x * x).sum();
    if p < 1.0 - 1e-9 {
        return g.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let dot: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / p;
    if dot <= 0.0 {
        // gradient points inward: the constraint is not binding
        return g.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    z.iter()
        .zip(g)
        .map(|(a, b)| (b - dot * a).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn ascend(cs: &ChannelSet, cfg: &SystemConfig, opts: &OracleOptions, mut z: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let n = z.len();
    let (b1, b2, eps) = (0.9, 0.999, 1e-12);
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut best_z = z.clone();
    let mut best_r = exact_sum_secrecy(cs, &real_to_strategy(&z, cfg)?, cfg)?;
    let iters = opts.max_iters.max(1);
    for it in 0..opts.max_iters {
        let (_, g) = smooth_sum_and_grad(cs, &z, cfg)?;
        if tangent_grad_norm(&z, &g) < opts.tol {
            break;
        }
        let lr = opts.step_size * opts.step_decay.powf(it as f64 / iters as f64);
        let t = (it + 1) as i32;
        for i in 0..n {
            m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
            m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m1[i] / (1.0 - b1.powi(t));
            let vh = m2[i] / (1.0 - b2.powi(t));
            z[i] += lr * mh / (vh.sqrt() + eps);
        }
        project_power_real(&mut z);
        if it % 10 == 9 || it + 1 == opts.max_iters {
            let r = exact_sum_secrecy(cs, &real_to_strategy(&z, cfg)?, cfg)?;
            if r > best_r {
                best_r = r;
                best_z.clone_from(&z);
            }
        }
    }
    let r = exact_sum_secrecy(cs, &real_to_strategy(&z, cfg)?, cfg)?;
    if r > best_r {
        best_r = r;
        best_z = z;
    }
    Ok((best_z, best_r))
}

/// Maximize the smooth sum secrecy rate under the unit power budget by
/// projected ascent from several starting points.
///
/// The returned strategy is the best iterate by exact sum secrecy rate, and
/// is never worse than MRT or RZF-NS with an even split on the same
/// channels. Deterministic in `(cs, cfg, opts)`.
pub fn oracle_optimize(cs: &ChannelSet, cfg: &SystemConfig, opts: &OracleOptions) -> Result<OracleResult> {
    opts.validate()?;
    let mut best_z: Option<Vec<f64>> = None;
    let mut best_r = f64::NEG_INFINITY;
    for r in 0..opts.restarts {
        let mut rng = rng_from_key(stream_key(opts.seed, Domain::Oracle, r as u64));
        let z0 = init_point(cs, cfg, opts.init, &mut rng);
        let (z, rate) = ascend(cs, cfg, opts, z0)?;
        if rate > best_r {
            best_r = rate;
            best_z = Some(z);
        }
    }
    let mut result = OracleResult {
        strategy: real_to_strategy(&best_z.expect("at least one restart"), cfg)?,
        rsum: best_r,
        source: "ascent",
    };
    let m = mrt(cs, cfg);
    let r_mrt = exact_sum_secrecy(cs, &m, cfg)?;
    if r_mrt > result.rsum {
        result = OracleResult { strategy: m, rsum: r_mrt, source: "mrt" };
    }
    let z = rzf_ns(cs, cfg, 0.5)?;
    let r_z = exact_sum_secrecy(cs, &z, cfg)?;
    if r_z > result.rsum {
        result = OracleResult { strategy: z, rsum: r_z, source: "rzf-ns" };
    }
    Ok(result)
}
