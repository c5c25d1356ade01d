//! A small pre-norm transformer encoder, enough to exercise the training and
//! inference paths on a CPU.

use candle_core::{DType, Device, Result, Tensor, D};
use candle_nn::{Embedding, Init, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

use super::Backbone;

pub const TOY_ENCODER_ID: &str = "toy-encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEncoderConfig {
    pub vocab_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_intermediate")]
    pub intermediate_size: usize,
}

fn default_hidden() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_intermediate() -> usize {
    128
}

impl ToyEncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: default_hidden(),
            num_layers: default_layers(),
            num_heads: default_heads(),
            intermediate_size: default_intermediate(),
        }
    }
}

/// Weights are created as zeros; the classifier fills them from its seeded RNG.
fn zeros_linear(in_dim: usize, out_dim: usize, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((out_dim, in_dim), "weight", Init::Const(0.0))?;
    let b = vb.get_with_hints(out_dim, "bias", Init::Const(0.0))?;
    Ok(Linear::new(w, Some(b)))
}

pub(crate) fn classification_head(hidden: usize, vb: VarBuilder) -> Result<Linear> {
    zeros_linear(hidden, 2, vb)
}

struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    fn new(size: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            gamma: vb.get_with_hints(size, "gamma", Init::Const(1.0))?,
            beta: vb.get_with_hints(size, "beta", Init::Const(0.0))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)
    }
}

struct EncoderLayer {
    attn_norm: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ff_norm: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    num_heads: usize,
}

impl EncoderLayer {
    fn new(cfg: &ToyEncoderConfig, vb: VarBuilder) -> Result<Self> {
        let h = cfg.hidden_size;
        Ok(Self {
            attn_norm: LayerNorm::new(h, vb.pp("attn_norm"))?,
            query: zeros_linear(h, h, vb.pp("query"))?,
            key: zeros_linear(h, h, vb.pp("key"))?,
            value: zeros_linear(h, h, vb.pp("value"))?,
            out: zeros_linear(h, h, vb.pp("out"))?,
            ff_norm: LayerNorm::new(h, vb.pp("ff_norm"))?,
            ff_in: zeros_linear(h, cfg.intermediate_size, vb.pp("ff_in"))?,
            ff_out: zeros_linear(cfg.intermediate_size, h, vb.pp("ff_out"))?,
            num_heads: cfg.num_heads,
        })
    }

    /// `mask_bias` is (batch, 1, 1, seq): 0 for real keys, a large negative for padding.
    fn forward(&self, x: &Tensor, mask_bias: &Tensor) -> Result<Tensor> {
        let (b, t, h) = x.dims3()?;
        let head_dim = h / self.num_heads;
        let split = |y: Tensor| -> Result<Tensor> {
            y.reshape((b, t, self.num_heads, head_dim))?.transpose(1, 2)?.contiguous()
        };
        let normed = self.attn_norm.forward(x)?;
        let q = split(self.query.forward(&normed)?)?;
        let k = split(self.key.forward(&normed)?)?;
        let v = split(self.value.forward(&normed)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (head_dim as f64).sqrt())?;
        let weights = candle_nn::ops::softmax(&scores.broadcast_add(mask_bias)?, D::Minus1)?;
        let ctx = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, t, h))?;
        let x = (x + self.out.forward(&ctx)?)?;
        let ff = self.ff_out.forward(&self.ff_in.forward(&self.ff_norm.forward(&x)?)?.gelu_erf()?)?;
        x + ff
    }
}

pub struct ToyEncoder {
    config: ToyEncoderConfig,
    embeddings: Embedding,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
}

impl ToyEncoder {
    pub fn new(config: ToyEncoderConfig, vb: VarBuilder) -> Result<Self> {
        if config.num_heads == 0 || !config.hidden_size.is_multiple_of(config.num_heads) {
            candle_core::bail!(
                "hidden_size {} is not divisible by num_heads {}",
                config.hidden_size,
                config.num_heads
            );
        }
        let table = vb.pp("embeddings").get_with_hints(
            (config.vocab_size, config.hidden_size),
            "weight",
            Init::Const(0.0),
        )?;
        let embeddings = Embedding::new(table, config.hidden_size);
        let layers = (0..config.num_layers)
            .map(|i| EncoderLayer::new(&config, vb.pp(format!("layer{i}"))))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(config.hidden_size, vb.pp("final_norm"))?;
        Ok(Self {
            config,
            embeddings,
            layers,
            final_norm,
        })
    }
}

/// Fixed sinusoidal position table of shape (seq, hidden).
fn positions(seq: usize, hidden: usize, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(seq * hidden);
    for pos in 0..seq {
        for i in 0..hidden {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / hidden as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32);
        }
    }
    Tensor::from_vec(data, (seq, hidden), device)
}

impl Backbone for ToyEncoder {
    fn id(&self) -> &str {
        TOY_ENCODER_ID
    }

    fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn forward(&self, input_ids: &Tensor, attention_mask: &Tensor) -> Result<Tensor> {
        let (b, t) = input_ids.dims2()?;
        let pos = positions(t, self.config.hidden_size, input_ids.device())?;
        let mut x = self.embeddings.forward(input_ids)?.broadcast_add(&pos)?;
        let mask_bias = ((attention_mask.to_dtype(DType::F32)? - 1.0)? * 1e9)?.reshape((b, 1, 1, t))?;
        for layer in &self.layers {
            x = layer.forward(&x, &mask_bias)?;
        }
        self.final_norm.forward(&x)
    }
}
