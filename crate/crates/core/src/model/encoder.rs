use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{embedding, layer_norm, linear, Embedding, LayerNorm, Linear, VarBuilder, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a from-scratch transformer encoder with a two-class head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub init_std: f64,
    /// Buckets of the "token already occurred" embedding; 0 disables it.
    #[serde(default)]
    pub overlap_buckets: usize,
}

impl EncoderConfig {
    pub fn tiny() -> Self {
        EncoderConfig {
            vocab_size: 32_768,
            hidden: 128,
            layers: 2,
            heads: 4,
            ffn: 256,
            max_positions: 257,
            init_std: 0.02,
            overlap_buckets: 4,
        }
    }

    pub fn small() -> Self {
        EncoderConfig {
            vocab_size: 65_536,
            hidden: 256,
            layers: 4,
            heads: 4,
            ffn: 1024,
            max_positions: 257,
            init_std: 0.02,
            overlap_buckets: 4,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden;
        let per_layer = 4 * (h * h + h) + (h * self.ffn + self.ffn) + (self.ffn * h + h) + 4 * h;
        (self.vocab_size + self.max_positions + self.overlap_buckets) * h + self.layers * per_layer + 2 * h + (2 * h + 2)
    }

    /// Rough peak activation footprint of one forward pass, in bytes.
    pub fn activation_bytes(&self, batch: usize, seq: usize) -> u64 {
        let (b, s, h) = (batch as u64, seq as u64, self.hidden as u64);
        let per_layer = b * s * (8 * h + self.ffn as u64) + 2 * b * self.heads as u64 * s * s;
        4 * (per_layer + b * s * h)
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Backend(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Layer norm through plain tensor ops. The fused kernel behind
/// `LayerNorm::forward` has no backward pass.
fn norm(ln: &LayerNorm, x: &Tensor) -> candle_core::Result<Tensor> {
    let bias = ln.bias().expect("layer norm has a bias");
    candle_nn::ops::layer_norm_slow(x, ln.weight(), bias, 1e-5)
}

struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    up: Linear,
    down: Linear,
    heads: usize,
}

impl Block {
    fn new(cfg: &EncoderConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let h = cfg.hidden;
        Ok(Block {
            ln1: layer_norm(h, 1e-5, vb.pp("ln1"))?,
            qkv: linear(h, 3 * h, vb.pp("qkv"))?,
            out: linear(h, h, vb.pp("out"))?,
            ln2: layer_norm(h, 1e-5, vb.pp("ln2"))?,
            up: linear(h, cfg.ffn, vb.pp("up"))?,
            down: linear(cfg.ffn, h, vb.pp("down"))?,
            heads: cfg.heads,
        })
    }

    fn forward(&self, x: &Tensor, mask_bias: &Tensor) -> candle_core::Result<Tensor> {
        let (b, s, h) = x.dims3()?;
        let dh = h / self.heads;
        let qkv = self.qkv.forward(&norm(&self.ln1, x)?)?;
        let split = |i: usize| -> candle_core::Result<Tensor> {
            qkv.narrow(D::Minus1, i * h, h)?
                .reshape((b, s, self.heads, dh))?
                .transpose(1, 2)?
                .contiguous()
        };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?;
        let scores = scores.broadcast_add(mask_bias)?;
        let att = candle_nn::ops::softmax_last_dim(&scores)?;
        let ctx = att
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, s, h))?;
        let x = (x + self.out.forward(&ctx)?)?;
        let ff = self
            .down
            .forward(&self.up.forward(&norm(&self.ln2, &x)?)?.gelu_erf()?)?;
        x + ff
    }
}

/// Pre-norm transformer encoder, CLS pooling, two-class head.
pub struct Encoder {
    pub config: EncoderConfig,
    tokens: Embedding,
    positions: Embedding,
    overlap: Option<Embedding>,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

impl Encoder {
    pub fn new(config: EncoderConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let blocks = (0..config.layers)
            .map(|i| Block::new(&config, vb.pp(format!("blocks.{i}"))))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Encoder {
            tokens: embedding(config.vocab_size, h, vb.pp("tokens"))?,
            positions: embedding(config.max_positions, h, vb.pp("positions"))?,
            overlap: match config.overlap_buckets {
                0 => None,
                n => Some(embedding(n, h, vb.pp("overlap"))?),
            },
            blocks,
            ln_f: layer_norm(h, 1e-5, vb.pp("ln_f"))?,
            head: linear(h, 2, vb.pp("head"))?,
            config,
        })
    }

    /// `ids` and `seen` are `[batch, seq]` u32, `mask` is `[batch, seq]` f32
    /// with 1 for real tokens. Returns `[batch, 2]` logits.
    pub fn forward(&self, ids: &Tensor, seen: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, s) = ids.dims2()?;
        let pos = Tensor::arange(0u32, s as u32, ids.device())?;
        let mut x = self
            .tokens
            .forward(ids)?
            .broadcast_add(&self.positions.forward(&pos)?)?;
        if let Some(overlap) = &self.overlap {
            x = (x + overlap.forward(seen)?)?;
        }
        let mask_bias = ((mask - 1.0)? * 1e9)?.reshape((b, 1, 1, s))?;
        for block in &self.blocks {
            x = block.forward(&x, &mask_bias)?;
        }
        let cls = norm(&self.ln_f, &x)?.narrow(1, 0, 1)?.squeeze(1)?;
        Ok(self.head.forward(&cls)?)
    }
}

/// Overwrites every variable with a value drawn from a seeded stream, in
/// name order, so initialization does not depend on the device RNG.
pub fn init_weights(varmap: &VarMap, std: f64, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, std as f32).expect("valid std");
    for name in names {
        let var = &data[name];
        let shape = var.shape().clone();
        let is_norm = name.contains("ln");
        let t = if name.ends_with("bias") {
            Tensor::zeros(&shape, DType::F32, var.device())?
        } else if is_norm {
            Tensor::ones(&shape, DType::F32, var.device())?
        } else {
            let v: Vec<f32> = (0..shape.elem_count()).map(|_| normal.sample(&mut rng)).collect();
            Tensor::from_vec(v, &shape, var.device())?
        };
        var.set(&t)?;
    }
    Ok(())
}

/// Builds an encoder whose variables live in a fresh [`VarMap`].
pub fn build(config: &EncoderConfig, device: &Device) -> Result<(Encoder, VarMap)> {
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let enc = Encoder::new(config.clone(), vb)?;
    Ok((enc, varmap))
}
