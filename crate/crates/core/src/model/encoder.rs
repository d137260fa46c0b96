use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;

use super::layers::{add_positions, Activation, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// What the encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputKind {
    /// Integer token ids, embedded through a table of `input_dim` rows.
    #[default]
    Tokens,
    /// Real-valued frames of width `input_dim`.
    Features,
}

impl FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokens" => Ok(InputKind::Tokens),
            "features" => Ok(InputKind::Features),
            other => Err(config_err!("unknown input kind {other:?}")),
        }
    }
}

impl InputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Tokens => "tokens",
            InputKind::Features => "features",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_kind: InputKind,
    /// Token vocabulary size, or feature width.
    pub input_dim: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub conv_kernel: usize,
    /// Two stride-2 3×3 convolutions in front (feature input only).
    pub subsample: bool,
    pub subsample_channels: usize,
}

impl EncoderConfig {
    pub fn toy(input_kind: InputKind, input_dim: usize) -> Self {
        EncoderConfig {
            input_kind,
            input_dim,
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            ff_dim: 128,
            conv_kernel: 7,
            subsample: input_kind == InputKind::Features,
            subsample_channels: 8,
        }
    }

    /// 12 blocks of width 256 with 4 heads, feedforward 1024, Conv2D front-end
    /// with 256 channels.
    pub fn full(input_dim: usize) -> Self {
        EncoderConfig {
            input_kind: InputKind::Features,
            input_dim,
            d_model: 256,
            n_blocks: 12,
            n_heads: 4,
            ff_dim: 1024,
            conv_kernel: 31,
            subsample: true,
            subsample_channels: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(config_err!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model,
                self.n_heads
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(config_err!("conv kernel {} must be odd", self.conv_kernel));
        }
        if self.subsample && self.input_kind == InputKind::Tokens {
            return Err(config_err!("subsampling applies to feature input only"));
        }
        if self.subsample && self.input_dim < MIN_SUBSAMPLE_FRAMES {
            return Err(config_err!(
                "subsampling needs feature width ≥ {MIN_SUBSAMPLE_FRAMES}"
            ));
        }
        if self.input_dim == 0 {
            return Err(config_err!("input_dim must be positive"));
        }
        Ok(())
    }
}

/// Shortest input the subsampling front-end accepts.
pub const MIN_SUBSAMPLE_FRAMES: usize = 7;

/// Output length of the two stride-2, kernel-3, unpadded convolutions.
pub fn subsampled_len(frames: usize) -> Result<usize> {
    if frames < MIN_SUBSAMPLE_FRAMES {
        return Err(Error::SequenceTooShort {
            len: frames,
            min: MIN_SUBSAMPLE_FRAMES,
        });
    }
    Ok(((frames - 1) / 2 - 1) / 2)
}

/// Encoder input for one utterance.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a, T> {
    Tokens(&'a [usize]),
    Features(&'a Tensor<T>),
}

impl<T: Real> EncoderInput<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            EncoderInput::Tokens(t) => t.len(),
            EncoderInput::Features(f) => f.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
struct Subsampler {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    proj: Linear,
}

impl Subsampler {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let c = cfg.subsample_channels;
        let b1 = 1.0 / 3.0;
        let b2 = 1.0 / libm::sqrt((c * 9) as f64);
        let conv1 = (
            store.add_uniform("encoder.subsample.conv1.weight", &[c, 1, 3, 3], b1, rng),
            store.add("encoder.subsample.conv1.bias", Tensor::zeros(&[c])),
        );
        let conv2 = (
            store.add_uniform("encoder.subsample.conv2.weight", &[c, c, 3, 3], b2, rng),
            store.add("encoder.subsample.conv2.bias", Tensor::zeros(&[c])),
        );
        let freq = subsampled_len(cfg.input_dim).unwrap_or(1);
        let proj = Linear::new(store, "encoder.subsample.proj", c * freq, cfg.d_model, rng);
        Subsampler { conv1, conv2, proj }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (frames, feat) = g.value(x).dims2();
        subsampled_len(frames)?;
        let img = g.reshape(x, &[1, frames, feat])?;
        let (k1, b1) = (g.param(self.conv1.0), g.param(self.conv1.1));
        let y = g.conv2d(img, k1, b1, 2)?;
        let y = g.relu(y);
        let (k2, b2) = (g.param(self.conv2.0), g.param(self.conv2.1));
        let y = g.conv2d(y, k2, b2, 2)?;
        let y = g.relu(y);
        // [C, T'', F''] → [T'', C·F'']
        let y = g.swap_leading(y)?;
        let s = g.shape(y).to_vec();
        let y = g.reshape(y, &[s[0], s[1] * s[2]])?;
        self.proj.forward(g, y)
    }
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: ParamId,
    depthwise_bias: ParamId,
    inner_norm: LayerNorm,
    pointwise_out: Linear,
    d_model: usize,
}

impl ConvModule {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let bound = 1.0 / libm::sqrt(cfg.conv_kernel as f64);
        ConvModule {
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            pointwise_in: Linear::new(store, &format!("{name}.pointwise_in"), d, 2 * d, rng),
            depthwise: store.add_uniform(format!("{name}.depthwise.weight"), &[cfg.conv_kernel, d], bound, rng),
            depthwise_bias: store.add(format!("{name}.depthwise.bias"), Tensor::zeros(&[d])),
            inner_norm: LayerNorm::new(store, &format!("{name}.inner_norm"), d),
            pointwise_out: Linear::new(store, &format!("{name}.pointwise_out"), d, d, rng),
            d_model: d,
        }
    }

    /// LN → pointwise → GLU → depthwise → LN → swish → pointwise.
    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let d = self.d_model;
        let y = self.norm.forward(g, x)?;
        let y = self.pointwise_in.forward(g, y)?;
        let a = g.slice_cols(y, 0, d)?;
        let b = g.slice_cols(y, d, d)?;
        let gate = g.sigmoid(b);
        let y = g.mul(a, gate)?;
        let k = g.param(self.depthwise);
        let y = g.depthwise_conv(y, k)?;
        let kb = g.param(self.depthwise_bias);
        let y = g.add_row(y, kb)?;
        let y = self.inner_norm.forward(g, y)?;
        let y = g.silu(y);
        self.pointwise_out.forward(g, y)
    }
}

/// Macaron block: ½FF, self-attention, convolution, ½FF, final norm.
#[derive(Debug, Clone)]
struct ConformerBlock {
    ff1_norm: LayerNorm,
    ff1: FeedForward,
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    conv: ConvModule,
    ff2_norm: LayerNorm,
    ff2: FeedForward,
    out_norm: LayerNorm,
}

impl ConformerBlock {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        ConformerBlock {
            ff1_norm: LayerNorm::new(store, &format!("{name}.ff1_norm"), d),
            ff1: FeedForward::new(store, &format!("{name}.ff1"), d, cfg.ff_dim, Activation::Swish, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.n_heads, rng),
            conv: ConvModule::new(store, &format!("{name}.conv"), cfg, rng),
            ff2_norm: LayerNorm::new(store, &format!("{name}.ff2_norm"), d),
            ff2: FeedForward::new(store, &format!("{name}.ff2"), d, cfg.ff_dim, Activation::Swish, rng),
            out_norm: LayerNorm::new(store, &format!("{name}.out_norm"), d),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let half = T::lit(0.5);
        let y = self.ff1_norm.forward(g, x)?;
        let y = self.ff1.forward(g, y)?;
        let y = g.scale(y, half);
        let x = g.add(x, y)?;

        let y = self.attn_norm.forward(g, x)?;
        let y = self.attn.forward(g, y, y, false)?;
        let x = g.add(x, y)?;

        let y = self.conv.forward(g, x)?;
        let x = g.add(x, y)?;

        let y = self.ff2_norm.forward(g, x)?;
        let y = self.ff2.forward(g, y)?;
        let y = g.scale(y, half);
        let x = g.add(x, y)?;

        self.out_norm.forward(g, x)
    }
}

#[derive(Debug, Clone)]
enum FrontEnd {
    Embedding(ParamId),
    Projection(Linear),
    Subsample(Subsampler),
}

/// Conformer-style encoder: front-end, positions, blocks, final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    front: FrontEnd,
    blocks: Vec<ConformerBlock>,
    final_norm: LayerNorm,
}

impl Encoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let front = match (cfg.input_kind, cfg.subsample) {
            (InputKind::Tokens, _) => {
                let bound = 1.0 / libm::sqrt(cfg.d_model as f64);
                FrontEnd::Embedding(store.add_uniform(
                    "encoder.embedding",
                    &[cfg.input_dim, cfg.d_model],
                    bound,
                    rng,
                ))
            }
            (InputKind::Features, false) => FrontEnd::Projection(Linear::new(
                store,
                "encoder.input_proj",
                cfg.input_dim,
                cfg.d_model,
                rng,
            )),
            (InputKind::Features, true) => FrontEnd::Subsample(Subsampler::new(store, &cfg, rng)),
        };
        let blocks = (0..cfg.n_blocks)
            .map(|i| ConformerBlock::new(store, &format!("encoder.block{i}"), &cfg, rng))
            .collect();
        let final_norm = LayerNorm::new(store, "encoder.final_norm", cfg.d_model);
        Ok(Encoder {
            cfg,
            front,
            blocks,
            final_norm,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Number of output frames for an input of `frames` frames.
    pub fn output_len(&self, frames: usize) -> Result<usize> {
        if self.cfg.subsample {
            subsampled_len(frames)
        } else {
            Ok(frames)
        }
    }

    /// `h[T'' × d_model]`
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: EncoderInput<'_, T>) -> Result<Var> {
        if input.is_empty() {
            return Err(Error::SequenceTooShort { len: 0, min: 1 });
        }
        let x = match (&self.front, input) {
            (FrontEnd::Embedding(table), EncoderInput::Tokens(ids)) => {
                let t = g.param(*table);
                g.embedding(t, ids)?
            }
            (FrontEnd::Projection(lin), EncoderInput::Features(f)) => {
                if f.cols() != self.cfg.input_dim {
                    return Err(shape_err!("features of width {}, expected {}", f.cols(), self.cfg.input_dim));
                }
                let x = g.constant(f.clone());
                lin.forward(g, x)?
            }
            (FrontEnd::Subsample(sub), EncoderInput::Features(f)) => {
                if f.cols() != self.cfg.input_dim {
                    return Err(shape_err!("features of width {}, expected {}", f.cols(), self.cfg.input_dim));
                }
                let x = g.constant(f.clone());
                sub.forward(g, x)?
            }
            _ => return Err(config_err!("encoder input does not match configured input kind")),
        };
        let mut x = add_positions(g, x)?;
        for block in &self.blocks {
            x = block.forward(g, x)?;
        }
        self.final_norm.forward(g, x)
    }
}
