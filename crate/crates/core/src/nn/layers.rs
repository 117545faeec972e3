//! Building blocks shared by the U-Net and MLP denoisers.

use candle_core::{DType, Device, Module, Result, Tensor, D};
use candle_nn::{Linear, VarBuilder};

/// Layer normalization over the last dimension, built from differentiable ops.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(size: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(size, "weight", candle_nn::Init::Const(1.0))?,
            bias: vb.get_with_hints(size, "bias", candle_nn::Init::Const(0.0))?,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / n)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = (xc.sqr()?.sum_keepdim(D::Minus1)? / n)?;
        let xn = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Group count for a group norm over `channels`.
pub fn groups_for(channels: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap_or(1)
}

/// Group normalization for sequence-major features (B, S, C).
#[derive(Debug, Clone)]
pub struct SeqGroupNorm {
    groups: usize,
    weight: Tensor,
    bias: Tensor,
}

impl SeqGroupNorm {
    pub fn new(channels: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            groups: groups_for(channels),
            weight: vb.get_with_hints(channels, "weight", candle_nn::Init::Const(1.0))?,
            bias: vb.get_with_hints(channels, "bias", candle_nn::Init::Const(0.0))?,
        })
    }
}

impl Module for SeqGroupNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, c) = x.dims3()?;
        let g = self.groups;
        let xg = x.reshape((b, s, g, c / g))?;
        let n = (s * (c / g)) as f64;
        let mean = (xg.sum_keepdim(3)?.sum_keepdim(1)? / n)?;
        let xc = xg.broadcast_sub(&mean)?;
        let var = (xc.sqr()?.sum_keepdim(3)?.sum_keepdim(1)? / n)?;
        let xn = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?.reshape((b, s, c))?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Same-length convolution on sequence-major features (B, S, C), computed
/// as a matrix product over zero-padded shifted copies of the input.
#[derive(Debug, Clone)]
pub struct SeqConv {
    kernel: usize,
    proj: Linear,
}

impl SeqConv {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            kernel,
            proj: candle_nn::linear(kernel * c_in, c_out, vb)?,
        })
    }

    /// Weights and bias start at zero.
    pub fn zeroed(c_in: usize, c_out: usize, kernel: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            kernel,
            proj: zero_linear(kernel * c_in, c_out, vb)?,
        })
    }

    fn unfold(&self, x: &Tensor) -> Result<Tensor> {
        if self.kernel == 1 {
            return Ok(x.clone());
        }
        let s = x.dim(1)?;
        let left = (self.kernel - 1) / 2;
        let right = self.kernel - 1 - left;
        let padded = x.pad_with_zeros(1, left, right)?;
        let shifts = (0..self.kernel).map(|j| padded.narrow(1, j, s)).collect::<Result<Vec<_>>>()?;
        Tensor::cat(&shifts, 2)
    }
}

impl Module for SeqConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s, c) = x.dims3()?;
        if s == 1 && self.kernel > 1 {
            // Only the centre tap sees data; the others multiply padding.
            let left = (self.kernel - 1) / 2;
            let w = self.proj.weight().narrow(1, left * c, c)?;
            let y = x.reshape((b, c))?.matmul(&w.t()?)?;
            let y = match self.proj.bias() {
                Some(bias) => y.broadcast_add(bias)?,
                None => y,
            };
            let out = y.dim(1)?;
            return y.reshape((b, 1, out));
        }
        linear3(&self.proj, &self.unfold(x)?)
    }
}

/// Apply a linear map to the last axis of a rank-3 tensor as one matrix product.
pub fn linear3(l: &Linear, x: &Tensor) -> Result<Tensor> {
    let (b, s, c) = x.dims3()?;
    let y = l.forward(&x.reshape((b * s, c))?)?;
    let out = y.dim(1)?;
    y.reshape((b, s, out))
}

/// Linear layer whose weights and bias start at zero.
pub fn zero_linear(d_in: usize, d_out: usize, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((d_out, d_in), "weight", candle_nn::Init::Const(0.0))?;
    let b = vb.get_with_hints(d_out, "bias", candle_nn::Init::Const(0.0))?;
    Ok(Linear::new(w, Some(b)))
}

/// Sinusoidal encoding of integer steps, `[sin(t·f); cos(t·f)]`.
pub fn sinusoid(t: &Tensor, width: usize) -> Result<Tensor> {
    let half = width / 2;
    let freqs: Vec<f32> = (0..half)
        .map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp() as f32)
        .collect();
    let freqs = Tensor::from_vec(freqs, (1, half), t.device())?;
    let args = t.to_dtype(DType::F32)?.unsqueeze(1)?.broadcast_mul(&freqs)?;
    Tensor::cat(&[args.sin()?, args.cos()?], 1)
}

/// Step encoding: sinusoid followed by a learned two-layer map.
#[derive(Debug, Clone)]
pub struct TimeEmbed {
    width: usize,
    l1: Linear,
    l2: Linear,
}

impl TimeEmbed {
    pub fn new(width: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            width,
            l1: candle_nn::linear(width, width, vb.pp("l1"))?,
            l2: candle_nn::linear(width, width, vb.pp("l2"))?,
        })
    }

    /// `t` holds one step index per batch row.
    pub fn forward(&self, t: &Tensor) -> Result<Tensor> {
        let s = sinusoid(t, self.width)?;
        self.l2.forward(&self.l1.forward(&s)?.silu()?)
    }
}

/// Two-layer map from the standardized channel embedding to `d_c` features.
#[derive(Debug, Clone)]
pub struct ChannelEmbed {
    l1: Linear,
    l2: Linear,
}

impl ChannelEmbed {
    pub fn new(channel_dim: usize, hidden: usize, cond_dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            l1: candle_nn::linear(channel_dim, hidden, vb.pp("l1"))?,
            l2: candle_nn::linear(hidden, cond_dim, vb.pp("l2"))?,
        })
    }

    pub fn forward(&self, h_std: &Tensor) -> Result<Tensor> {
        self.l2.forward(&self.l1.forward(h_std)?.silu()?)
    }
}

/// Pre-activation residual block with additive time conditioning.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: SeqGroupNorm,
    conv1: SeqConv,
    time: Linear,
    norm2: SeqGroupNorm,
    conv2: SeqConv,
    skip: Option<Linear>,
}

impl ResBlock {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, time_dim: usize, vb: VarBuilder) -> Result<Self> {
        let skip = if c_in != c_out {
            Some(candle_nn::linear(c_in, c_out, vb.pp("skip"))?)
        } else {
            None
        };
        Ok(Self {
            norm1: SeqGroupNorm::new(c_in, vb.pp("norm1"))?,
            conv1: SeqConv::new(c_in, c_out, kernel, vb.pp("conv1"))?,
            time: candle_nn::linear(time_dim, c_out, vb.pp("time"))?,
            norm2: SeqGroupNorm::new(c_out, vb.pp("norm2"))?,
            conv2: SeqConv::new(c_out, c_out, kernel, vb.pp("conv2"))?,
            skip,
        })
    }

    /// `x`: (B, S, C_in); `temb`: (B, time_dim).
    pub fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let h = h.broadcast_add(&self.time.forward(&temb.silu()?)?.unsqueeze(1)?)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let res = match &self.skip {
            Some(s) => linear3(s, x)?,
            None => x.clone(),
        };
        h + res
    }
}

/// Cross-attention: queries from the feature map, keys and values from the
/// channel-embedding tokens.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    norm: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    scale: f64,
}

impl CrossAttention {
    pub fn new(channels: usize, token_dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(channels, vb.pp("norm"))?,
            q: candle_nn::linear_no_bias(channels, channels, vb.pp("q"))?,
            k: candle_nn::linear_no_bias(token_dim, channels, vb.pp("k"))?,
            v: candle_nn::linear_no_bias(token_dim, channels, vb.pp("v"))?,
            out: candle_nn::linear(channels, channels, vb.pp("out"))?,
            scale: 1.0 / (channels as f64).sqrt(),
        })
    }

    /// `x`: (B, S, C); `tokens`: (B, N, token_dim).
    pub fn forward(&self, x: &Tensor, tokens: &Tensor) -> Result<Tensor> {
        let q = linear3(&self.q, &self.norm.forward(x)?)?;
        let k = linear3(&self.k, tokens)?;
        let v = linear3(&self.v, tokens)?;
        let att = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * self.scale)?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        x + linear3(&self.out, &att.matmul(&v)?)?
    }
}

/// Device used by every model in the crate.
pub fn device() -> Device {
    Device::Cpu
}
