//! Fully connected denoiser backbone on `[z_t; time embedding; c]`.

use candle_core::{Module, Result, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::zero_linear;
use super::spec::DenoiserSpec;

#[derive(Debug, Clone)]
pub struct MlpNet {
    hidden: Vec<Linear>,
    out: Linear,
}

impl MlpNet {
    pub fn new(spec: &DenoiserSpec, vb: VarBuilder) -> Result<Self> {
        let d_in = spec.strategy_dim + spec.time_dim + spec.cond_dim;
        let w = spec.mlp_width;
        let hidden = (0..spec.mlp_depth)
            .map(|i| candle_nn::linear(if i == 0 { d_in } else { w }, w, vb.pp(format!("hidden{i}"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            hidden,
            out: zero_linear(w, spec.strategy_dim, vb.pp("out"))?,
        })
    }

    /// `z`: (B, D); `temb`: (B, time_dim); `c`: (B, cond_dim).
    pub fn forward(&self, z: &Tensor, temb: &Tensor, c: &Tensor) -> Result<Tensor> {
        let mut x = Tensor::cat(&[z, temb, c], 1)?;
        for l in &self.hidden {
            x = l.forward(&x)?.silu()?;
        }
        self.out.forward(&x)
    }
}

/// Parameters of an MLP backbone of width `w`, excluding the embeddings.
pub fn mlp_param_count(spec: &DenoiserSpec, w: usize) -> usize {
    let d_in = spec.strategy_dim + spec.time_dim + spec.cond_dim;
    let depth = spec.mlp_depth.max(1);
    (d_in + 1) * w + (depth - 1) * (w + 1) * w + (w + 1) * spec.strategy_dim
}

/// Smallest width whose backbone holds at least `target` parameters.
pub fn width_for_params(spec: &DenoiserSpec, target: usize) -> usize {
    let mut lo = 1usize;
    let mut hi = 1usize;
    while mlp_param_count(spec, hi) < target {
        hi *= 2;
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if mlp_param_count(spec, mid) < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}
