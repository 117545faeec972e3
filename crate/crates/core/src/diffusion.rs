//! Noise schedules, forward corruption, the denoising loss and the DDPM/DDIM
//! reverse samplers. Nothing here knows what network predicts the noise; it
//! only sees the [`Denoiser`] trait.
//!
//! Time steps are 1-based: `t = 1..=T`, with `ᾱ_0 = 1`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear variance schedule and its cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Parameters that reproduce a [`NoiseSchedule`]; stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// β linearly spaced from `beta_min` (t = 1) to `beta_max` (t = T).
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "beta range [{beta_min}, {beta_max}] must satisfy 0 < min <= max < 1"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// Sampler family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub kind: SamplerKind,
    pub ddim_steps: usize,
    /// 0 = deterministic DDIM, 1 = DDPM-equivalent noise level.
    pub ddim_eta: f64,
    /// Candidates drawn per condition.
    pub batch: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim,
            ddim_steps: 50,
            ddim_eta: 0.0,
            batch: 1,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if self.ddim_steps == 0 || self.ddim_steps > total_steps {
            return Err(Error::invalid(format!(
                "DDIM step count {} outside 1..={total_steps}",
                self.ddim_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.ddim_eta) {
            return Err(Error::invalid("DDIM eta must lie in [0, 1]"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("candidate batch must be at least 1"));
        }
        Ok(())
    }
}

/// Evenly strided sub-schedule of `count` steps, strictly increasing,
/// always containing `1` and `total`.
pub fn ddim_timesteps(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::invalid(format!("cannot pick {count} of {total} steps")));
    }
    if count == 1 {
        return Ok(vec![total]);
    }
    let steps: Vec<usize> = (0..count)
        .map(|i| 1 + ((total - 1) as f64 * i as f64 / (count - 1) as f64).round() as usize)
        .collect();
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sub-schedule is not strictly increasing"));
    }
    Ok(steps)
}

/// Coefficients of one generalized DDIM update `t -> prev`:
/// `z_prev = x0_coef·z_t + eps_coef·ε̂ + noise_coef·ξ`.
///
/// The deterministic part uses the η-interpolated DDIM variance; the injected
/// noise is `η·sqrt(1 - ᾱ_t/ᾱ_prev)`, which for consecutive steps is `√β_t`.
/// With η = 1 on the full schedule this is exactly the DDPM update with
/// variance `β_t`, including the noiseless final step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub z_coef: f64,
    pub eps_coef: f64,
    pub noise_coef: f64,
}

pub fn ddim_coefficients(sch: &NoiseSchedule, t: usize, prev: usize, eta: f64) -> StepCoefficients {
    let ab_t = sch.alpha_bar(t);
    let ab_p = sch.alpha_bar(prev);
    let sigma_sq = eta * eta * (1.0 - ab_p) / (1.0 - ab_t) * (1.0 - ab_t / ab_p);
    let dir = (1.0 - ab_p - sigma_sq).max(0.0).sqrt();
    // z_prev = √ᾱ_p·(z_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t + dir·ε̂
    let scale = (ab_p / ab_t).sqrt();
    let noise_coef = if prev == 0 {
        0.0
    } else {
        eta * (1.0 - ab_t / ab_p).max(0.0).sqrt()
    };
    StepCoefficients {
        z_coef: scale,
        eps_coef: dir - scale * (1.0 - ab_t).sqrt(),
        noise_coef,
    }
}

/// Batched noise predictor `ε_Θ(z_t, t, c)`.
///
/// Rows of `z_t` and `cond` are samples; `t[i]` is the step of row `i`.
pub trait Denoiser {
    /// Length of one strategy vector.
    fn dim(&self) -> usize;

    fn predict(&self, z_t: &Array2<f64>, t: &[usize], cond: &Array2<f64>) -> Result<Array2<f64>>;
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(z0: ArrayView1<f64>, t: usize, eps: ArrayView1<f64>, sch: &NoiseSchedule) -> Result<Array1<f64>> {
    sch.check_step(t)?;
    if z0.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!("z0 has {} entries, eps {}", z0.len(), eps.len())));
    }
    let ab = sch.alpha_bar(t);
    Ok(&z0 * ab.sqrt() + &eps * (1.0 - ab).sqrt())
}

/// Posterior mean `(z_t − (1−α_t)/√(1−ᾱ_t)·ε̂)/√α_t`.
pub fn posterior_mean(z_t: ArrayView1<f64>, t: usize, eps_hat: ArrayView1<f64>, sch: &NoiseSchedule) -> Result<Array1<f64>> {
    sch.check_step(t)?;
    if z_t.len() != eps_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "z_t has {} entries, eps_hat {}",
            z_t.len(),
            eps_hat.len()
        )));
    }
    let a = sch.alpha(t);
    let c = (1.0 - a) / (1.0 - sch.alpha_bar(t)).sqrt();
    Ok((&z_t - &(&eps_hat * c)) / a.sqrt())
}

/// One draw of the training objective: per-row steps and noise.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize, steps: usize) -> Self {
        let t = (0..rows).map(|_| rng.gen_range(1..=steps)).collect();
        let eps = standard_normal(rng, rows, dim);
        Self { t, eps }
    }

    /// Noisy inputs `z_t` for the rows of `z0`.
    pub fn corrupt(&self, z0: &Array2<f64>, sch: &NoiseSchedule) -> Array2<f64> {
        let mut out = z0.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let ab = sch.alpha_bar(self.t[i]);
            let e = self.eps.row(i);
            row.zip_mut_with(&e, |z, &n| *z = ab.sqrt() * *z + (1.0 - ab).sqrt() * n);
        }
        out
    }
}

/// Denoising loss for a fixed draw: mean over rows of `||ε − ε̂||²`.
pub fn loss_for_draw<D: Denoiser + ?Sized>(
    z0: &Array2<f64>,
    cond: &Array2<f64>,
    draw: &NoiseDraw,
    denoiser: &D,
    sch: &NoiseSchedule,
) -> Result<f64> {
    let z_t = draw.corrupt(z0, sch);
    let pred = denoiser.predict(&z_t, &draw.t, cond)?;
    let diff = &draw.eps - &pred;
    Ok(diff.mapv(|x| x * x).sum() / z0.nrows() as f64)
}

/// Denoising loss with `t ~ U{1..T}` and `ε ~ N(0, I)` drawn from `rng`.
/// The condition only reaches the denoiser.
pub fn training_loss<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    z0: &Array2<f64>,
    cond: &Array2<f64>,
    denoiser: &D,
    sch: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if z0.nrows() == 0 {
        return Err(Error::invalid("training batch is empty"));
    }
    if z0.nrows() != cond.nrows() {
        return Err(Error::ShapeMismatch("strategy and condition batches differ in size".into()));
    }
    let draw = NoiseDraw::sample(rng, z0.nrows(), z0.ncols(), sch.steps());
    loss_for_draw(z0, cond, &draw, denoiser, sch)
}

/// Ancestral DDPM sampling, one row per condition row.
///
/// Starts from `z_T ~ N(0, I)` and applies the posterior mean plus `√β_t`
/// noise, with no noise at `t = 1`.
pub fn ddpm_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &Array2<f64>,
    sch: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let n = cond.nrows();
    let mut z = standard_normal(rng, n, denoiser.dim());
    let mut trace = |_: usize, _: &Array2<f64>| {};
    ddpm_from(denoiser, cond, sch, &mut z, rng, &mut trace)?;
    Ok(z)
}

/// DDPM reverse pass from a given `z_T`, calling `observe(t_prev, z)` after
/// each update.
pub fn ddpm_from<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &Array2<f64>,
    sch: &NoiseSchedule,
    z: &mut Array2<f64>,
    rng: &mut R,
    observe: &mut dyn FnMut(usize, &Array2<f64>),
) -> Result<()> {
    let n = z.nrows();
    for t in (1..=sch.steps()).rev() {
        let eps_hat = denoiser.predict(z, &vec![t; n], cond)?;
        let xi = standard_normal(rng, n, z.ncols());
        let sd = if t > 1 { sch.beta(t).sqrt() } else { 0.0 };
        for i in 0..n {
            let mean = posterior_mean(z.row(i), t, eps_hat.row(i), sch)?;
            let noisy = &mean + &(&xi.row(i) * sd);
            z.row_mut(i).assign(&noisy);
        }
        observe(t - 1, z);
    }
    Ok(())
}

/// DDIM sampling over an evenly strided sub-schedule.
pub fn ddim_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &Array2<f64>,
    sch: &NoiseSchedule,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mut z = standard_normal(rng, cond.nrows(), denoiser.dim());
    let mut trace = |_: usize, _: &Array2<f64>| {};
    ddim_from(denoiser, cond, sch, opts, &mut z, rng, &mut trace)?;
    Ok(z)
}

/// DDIM reverse pass from a given `z_T`, calling `observe(t_prev, z)` after
/// each update. No random numbers are drawn when `eta == 0`.
pub fn ddim_from<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &Array2<f64>,
    sch: &NoiseSchedule,
    opts: &SamplerOptions,
    z: &mut Array2<f64>,
    rng: &mut R,
    observe: &mut dyn FnMut(usize, &Array2<f64>),
) -> Result<()> {
    opts.validate(sch.steps())?;
    let steps = ddim_timesteps(sch.steps(), opts.ddim_steps)?;
    let n = z.nrows();
    for idx in (0..steps.len()).rev() {
        let t = steps[idx];
        let prev = if idx == 0 { 0 } else { steps[idx - 1] };
        let eps_hat = denoiser.predict(z, &vec![t; n], cond)?;
        let c = ddim_coefficients(sch, t, prev, opts.ddim_eta);
        let mut next = &*z * c.z_coef + &eps_hat * c.eps_coef;
        if opts.ddim_eta > 0.0 {
            // draw even when the coefficient is zero so the stream matches DDPM
            let xi = standard_normal(rng, n, z.ncols());
            next = next + xi * c.noise_coef;
        }
        *z = next;
        observe(prev, z);
    }
    Ok(())
}

/// Sample with whichever sampler `opts` selects.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &Array2<f64>,
    sch: &NoiseSchedule,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Array2<f64>> {
    match opts.kind {
        SamplerKind::Ddpm => ddpm_sample(denoiser, cond, sch, rng),
        SamplerKind::Ddim => ddim_sample(denoiser, cond, sch, opts, rng),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::{keyed_rng, Domain};
    use approx::assert_relative_eq;

    /// Exact noise predictor for data distributed as `N(0, var·I)`.
    pub struct GaussianOracle {
        pub dim: usize,
        pub var: f64,
        pub sch: NoiseSchedule,
    }

    impl Denoiser for GaussianOracle {
        fn dim(&self) -> usize {
            self.dim
        }

        fn predict(&self, z_t: &Array2<f64>, t: &[usize], _cond: &Array2<f64>) -> Result<Array2<f64>> {
            let mut out = z_t.clone();
            for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                let ab = self.sch.alpha_bar(t[i]);
                let k = (1.0 - ab).sqrt() / (self.var * ab + 1.0 - ab);
                row.mapv_inplace(|x| x * k);
            }
            Ok(out)
        }
    }

    struct Zero(usize);

    impl Denoiser for Zero {
        fn dim(&self) -> usize {
            self.0
        }

        fn predict(&self, z_t: &Array2<f64>, _: &[usize], _: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(Array2::zeros(z_t.raw_dim()))
        }
    }

    #[test]
    fn schedule_endpoints_and_product() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert_relative_eq!(s.beta(1), 1e-4);
        assert_relative_eq!(s.beta(1000), 0.02);
        let direct: f64 = (1..=1000).map(|t| 1.0 - s.beta(t)).product();
        assert_relative_eq!(s.alpha_bar(1000), direct, max_relative = 1e-12);
        assert!((s.alpha_bar(1000) - 4.0e-5).abs() < 0.4e-5);
        for t in 1..1000 {
            assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        }
        let one = make_schedule(1, 1e-4, 0.02).unwrap();
        assert_relative_eq!(one.alpha_bar(1), 1.0 - 1e-4);
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(0, 0.1, 0.1).is_err());
    }

    #[test]
    fn q_sample_branches() {
        let s = make_schedule(50, 1e-3, 0.05).unwrap();
        let z0 = Array1::from(vec![1.0, -2.0, 0.5]);
        let zero = Array1::zeros(3);
        let eps = Array1::from(vec![0.3, 0.1, -1.0]);
        let a = q_sample(z0.view(), 10, zero.view(), &s).unwrap();
        assert_relative_eq!(a[1], -2.0 * s.alpha_bar(10).sqrt());
        let b = q_sample(zero.view(), 10, eps.view(), &s).unwrap();
        assert_relative_eq!(b[2], -(1.0 - s.alpha_bar(10)).sqrt());
        assert!(q_sample(z0.view(), 0, eps.view(), &s).is_err());
        assert!(q_sample(z0.view(), 51, eps.view(), &s).is_err());
    }

    #[test]
    fn posterior_mean_inverts_single_step() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        let z0 = Array1::from(vec![0.7, -1.1]);
        let eps = Array1::from(vec![0.2, 1.5]);
        let zt = q_sample(z0.view(), 1, eps.view(), &s).unwrap();
        let back = posterior_mean(zt.view(), 1, eps.view(), &s).unwrap();
        assert_relative_eq!(back[0], 0.7, epsilon = 1e-12);
        assert_relative_eq!(back[1], -1.1, epsilon = 1e-12);
    }

    #[test]
    fn posterior_mean_tiny_beta_and_linearity() {
        let s = make_schedule(10, 1e-12, 1e-12).unwrap();
        let z = Array1::from(vec![0.4, 2.0]);
        let zero = Array1::zeros(2);
        let m = posterior_mean(z.view(), 3, zero.view(), &s).unwrap();
        assert_relative_eq!(m[1], 2.0, max_relative = 1e-9);

        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        let (z1, e1) = (Array1::from(vec![0.3, -0.2]), Array1::from(vec![1.0, 0.5]));
        let (z2, e2) = (Array1::from(vec![-1.3, 0.9]), Array1::from(vec![0.1, -2.5]));
        let sum = posterior_mean((&z1 + &z2).view(), 40, (&e1 + &e2).view(), &s).unwrap();
        let parts = posterior_mean(z1.view(), 40, e1.view(), &s).unwrap()
            + posterior_mean(z2.view(), 40, e2.view(), &s).unwrap();
        for i in 0..2 {
            assert_relative_eq!(sum[i], parts[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_of_perfect_and_zero_denoisers() {
        struct Perfect<'a>(&'a NoiseDraw);
        impl Denoiser for Perfect<'_> {
            fn dim(&self) -> usize {
                self.0.eps.ncols()
            }
            fn predict(&self, _: &Array2<f64>, _: &[usize], _: &Array2<f64>) -> Result<Array2<f64>> {
                Ok(self.0.eps.clone())
            }
        }
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        let mut rng = keyed_rng(0, Domain::Misc, 0);
        let z0 = standard_normal(&mut rng, 16, 6);
        let cond = Array2::zeros((16, 1));
        let draw = NoiseDraw::sample(&mut rng, 16, 6, 100);
        assert_eq!(loss_for_draw(&z0, &cond, &draw, &Perfect(&draw), &s).unwrap(), 0.0);

        let z0 = standard_normal(&mut rng, 10_000, 6);
        let cond = Array2::zeros((10_000, 1));
        let l = training_loss(&z0, &cond, &Zero(6), &s, &mut rng).unwrap();
        assert!((l - 6.0).abs() / 6.0 < 0.05, "loss {l}");
        assert!(training_loss(&Array2::zeros((0, 6)), &Array2::zeros((0, 1)), &Zero(6), &s, &mut rng).is_err());
    }

    #[test]
    fn sub_schedule_shape() {
        let s = ddim_timesteps(1000, 50).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(s[0], 1);
        assert_eq!(*s.last().unwrap(), 1000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ddim_timesteps(200, 1).unwrap(), vec![200]);
        assert_eq!(ddim_timesteps(5, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        assert!(ddim_timesteps(5, 6).is_err());
        assert!(ddim_timesteps(5, 0).is_err());
    }

    #[test]
    fn deterministic_ddim_ignores_rng() {
        let sch = make_schedule(100, 1e-4, 0.05).unwrap();
        let d = GaussianOracle { dim: 3, var: 1.0, sch: sch.clone() };
        let cond = Array2::zeros((4, 1));
        let opts = SamplerOptions { ddim_steps: 10, ..Default::default() };
        let z_t = standard_normal(&mut keyed_rng(1, Domain::Misc, 0), 4, 3);
        let mut a = z_t.clone();
        let mut b = z_t.clone();
        ddim_from(&d, &cond, &sch, &opts, &mut a, &mut keyed_rng(2, Domain::Misc, 0), &mut |_, _| {}).unwrap();
        ddim_from(&d, &cond, &sch, &opts, &mut b, &mut keyed_rng(3, Domain::Misc, 0), &mut |_, _| {}).unwrap();
        assert_eq!(a, b);
        let out = ddpm_sample(&d, &cond, &sch, &mut keyed_rng(4, Domain::Misc, 0)).unwrap();
        assert_eq!(out.dim(), (4, 3));
        let again = ddpm_sample(&d, &cond, &sch, &mut keyed_rng(4, Domain::Misc, 0)).unwrap();
        assert_eq!(out, again);
        assert!(ddim_sample(&d, &cond, &sch, &SamplerOptions { ddim_steps: 101, ..opts }, &mut keyed_rng(0, Domain::Misc, 0)).is_err());
    }

    #[test]
    fn batching_does_not_change_samples() {
        let sch = make_schedule(60, 1e-4, 0.1).unwrap();
        let d = GaussianOracle { dim: 2, var: 0.5, sch: sch.clone() };
        let z_t = standard_normal(&mut keyed_rng(5, Domain::Misc, 0), 6, 2);
        let opts = SamplerOptions { ddim_steps: 12, ..Default::default() };
        let mut all = z_t.clone();
        ddim_from(&d, &Array2::zeros((6, 1)), &sch, &opts, &mut all, &mut keyed_rng(0, Domain::Misc, 0), &mut |_, _| {}).unwrap();
        for i in 0..6 {
            let mut one = z_t.slice(ndarray::s![i..i + 1, ..]).to_owned();
            ddim_from(&d, &Array2::zeros((1, 1)), &sch, &opts, &mut one, &mut keyed_rng(0, Domain::Misc, 0), &mut |_, _| {}).unwrap();
            assert_eq!(one.row(0), all.row(i));
        }
    }
}
