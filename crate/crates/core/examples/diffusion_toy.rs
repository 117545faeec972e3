//! DDPM and DDIM on Gaussian data with the closed-form noise predictor:
//! the sampled variance should match the data variance.
//!
//! cargo run --release --example diffusion_toy

use ndarray::{Array2, Axis};
use secure_cdm::diffusion::{make_schedule, sample, Denoiser, NoiseSchedule, SamplerKind, SamplerOptions};
use secure_cdm::rng::{keyed_rng, Domain};

struct Gaussian {
    var: f64,
    sch: NoiseSchedule,
}

impl Denoiser for Gaussian {
    fn dim(&self) -> usize {
        2
    }

    fn predict(&self, z_t: &Array2<f64>, t: &[usize], _cond: &Array2<f64>) -> secure_cdm::Result<Array2<f64>> {
        let mut out = z_t.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let ab = self.sch.alpha_bar(t[i]);
            let k = (1.0 - ab).sqrt() / (self.var * ab + 1.0 - ab);
            row.mapv_inplace(|x| x * k);
        }
        Ok(out)
    }
}

fn main() -> secure_cdm::Result<()> {
    let sch = make_schedule(200, 5e-4, 0.1)?;
    let den = Gaussian { var: 1.0, sch: sch.clone() };
    let cond = Array2::zeros((5000, 1));
    for (label, opts) in [
        ("DDPM, 200 steps", SamplerOptions { kind: SamplerKind::Ddpm, ..Default::default() }),
        ("DDIM, 50 steps, eta 0", SamplerOptions::default()),
        ("DDIM, 10 steps, eta 0", SamplerOptions { ddim_steps: 10, ..Default::default() }),
        ("DDIM, 50 steps, eta 1", SamplerOptions { ddim_eta: 1.0, ..Default::default() }),
    ] {
        let z = sample(&den, &cond, &sch, &opts, &mut keyed_rng(0, Domain::Sampling, 0))?;
        let var = z.mapv(|x| x * x).mean().unwrap();
        println!("{label:24} sample variance {var:.4} (data 1.0)");
    }
    println!("alpha_bar_T = {:.3e}", sch.alpha_bar(sch.steps()));
    Ok(())
}
