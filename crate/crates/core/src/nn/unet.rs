//! One-dimensional U-Net over strategy positions with cross-attention to the
//! channel embedding.

//!
//! Features are kept sequence-major, (batch, positions, channels), so that
//! convolutions and attention are plain matrix products.

use candle_core::{Module, Result, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{linear3, CrossAttention, ResBlock, SeqConv, SeqGroupNorm};
use super::spec::{DenoiserSpec, LEVEL_FACTOR};

/// Residual blocks interleaved with cross-attention layers.
#[derive(Debug, Clone)]
struct Stage {
    res: Vec<ResBlock>,
    attn: Vec<CrossAttention>,
}

impl Stage {
    fn new(
        c_in: usize,
        c: usize,
        n_conv: usize,
        n_attn: usize,
        kernel: usize,
        spec: &DenoiserSpec,
        vb: VarBuilder,
    ) -> Result<Self> {
        let res = (0..n_conv)
            .map(|i| ResBlock::new(if i == 0 { c_in } else { c }, c, kernel, spec.time_dim, vb.pp(format!("res{i}"))))
            .collect::<Result<_>>()?;
        let attn = (0..n_attn)
            .map(|i| CrossAttention::new(c, spec.token_dim(), vb.pp(format!("attn{i}"))))
            .collect::<Result<_>>()?;
        Ok(Self { res, attn })
    }

    /// Attention layers are spread evenly after the residual blocks.
    fn forward(&self, x: &Tensor, temb: &Tensor, tokens: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        let n_res = self.res.len();
        let n_attn = self.attn.len();
        let mut next_attn = 0;
        for (i, r) in self.res.iter().enumerate() {
            x = r.forward(&x, temb)?;
            let due = (i + 1) * n_attn / n_res;
            while next_attn < due {
                x = self.attn[next_attn].forward(&x, tokens)?;
                next_attn += 1;
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct UNet1d {
    stem: SeqConv,
    down: Vec<Stage>,
    /// Strided convolution with kernel = stride = 4, as a linear map over
    /// groups of four positions.
    downsample: Vec<Linear>,
    mid: Stage,
    up: Vec<Stage>,
    upsample: Vec<SeqConv>,
    out_norm: SeqGroupNorm,
    out: SeqConv,
    positions: usize,
    padded: usize,
}

impl UNet1d {
    pub fn new(spec: &DenoiserSpec, vb: VarBuilder) -> Result<Self> {
        let blocks = &spec.blocks;
        let c0 = blocks[0].channels;
        let stem = SeqConv::new(2, c0, blocks[0].kernel, vb.pp("stem"))?;
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            down.push(Stage::new(b.channels, b.channels, b.n_conv, b.n_attn, b.kernel, spec, vb.pp(format!("down{i}")))?);
            if let Some(next) = blocks.get(i + 1) {
                downsample.push(candle_nn::linear(
                    LEVEL_FACTOR * b.channels,
                    next.channels,
                    vb.pp(format!("downsample{i}")),
                )?);
            }
        }
        let last = blocks[blocks.len() - 1];
        let mid = Stage::new(last.channels, last.channels, 2, 1, last.kernel, spec, vb.pp("mid"))?;
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            up.push(Stage::new(2 * b.channels, b.channels, b.n_conv, b.n_attn, b.kernel, spec, vb.pp(format!("up{i}")))?);
            if i > 0 {
                let prev = blocks[i - 1].channels;
                upsample.push(SeqConv::new(b.channels, prev, b.kernel, vb.pp(format!("upsample{i}")))?);
            }
        }
        Ok(Self {
            stem,
            down,
            downsample,
            mid,
            up,
            upsample,
            out_norm: SeqGroupNorm::new(c0, vb.pp("out_norm"))?,
            out: SeqConv::zeroed(c0, 2, blocks[0].kernel, vb.pp("out"))?,
            positions: spec.positions(),
            padded: spec.padded_positions(),
        })
    }

    /// `z`: (B, 2P) laid out as `[Re; Im]`; `temb`: (B, time_dim);
    /// `tokens`: (B, N, token_dim). Returns (B, 2P).
    pub fn forward(&self, z: &Tensor, temb: &Tensor, tokens: &Tensor) -> Result<Tensor> {
        let b = z.dim(0)?;
        let mut x = z.reshape((b, 2, self.positions))?.transpose(1, 2)?.contiguous()?;
        if self.padded > self.positions {
            x = x.pad_with_zeros(1, 0, self.padded - self.positions)?;
        }
        let mut x = self.stem.forward(&x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, stage) in self.down.iter().enumerate() {
            x = stage.forward(&x, temb, tokens)?;
            skips.push(x.clone());
            if let Some(ds) = self.downsample.get(i) {
                let (b, s, c) = x.dims3()?;
                x = linear3(ds, &x.reshape((b, s / LEVEL_FACTOR, LEVEL_FACTOR * c))?)?;
            }
        }
        x = self.mid.forward(&x, temb, tokens)?;
        for i in (0..self.up.len()).rev() {
            x = Tensor::cat(&[&x, &skips[i]], 2)?;
            x = self.up[i].forward(&x, temb, tokens)?;
            if i > 0 {
                x = upsample_nearest(&x, LEVEL_FACTOR)?;
                x = self.upsample[i - 1].forward(&x)?;
            }
        }
        let x = self.out.forward(&self.out_norm.forward(&x)?.silu()?)?;
        x.narrow(1, 0, self.positions)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, 2 * self.positions))
    }
}

/// Repeat each position `factor` times along the sequence axis.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (b, s, c) = x.dims3()?;
    x.unsqueeze(2)?.broadcast_as((b, s, factor, c))?.reshape((b, s * factor, c))
}
