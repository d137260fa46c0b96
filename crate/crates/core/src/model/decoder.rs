use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{add_positions, Activation, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::error::{config_err, domain_err, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Var};

/// Reserved token ids shared by the decoder and the CTC branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub blank: usize,
    pub pad: usize,
    pub sos: usize,
    pub eos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub specials: SpecialTokens,
    /// Longest target sequence accepted by teacher forcing.
    pub max_target_len: usize,
}

impl DecoderConfig {
    pub fn toy(vocab_size: usize, specials: SpecialTokens) -> Self {
        DecoderConfig {
            vocab_size,
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            ff_dim: 128,
            specials,
            max_target_len: 512,
        }
    }

    /// 6 blocks of width 256 with 4 heads and feedforward 2048.
    pub fn full(vocab_size: usize, specials: SpecialTokens) -> Self {
        DecoderConfig {
            vocab_size,
            d_model: 256,
            n_blocks: 6,
            n_heads: 4,
            ff_dim: 2048,
            specials,
            max_target_len: 512,
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
        let s = self.specials;
        for a in [s.blank, s.pad, s.sos, s.eos] {
            if a >= self.vocab_size {
                return Err(config_err!("special token {a} outside vocabulary of {}", self.vocab_size));
            }
        }
        // Padding never reaches the model, so it may share an id.
        let ids = [s.blank, s.sos, s.eos];
        for (i, &a) in ids.iter().enumerate() {
            if ids[i + 1..].contains(&a) {
                return Err(config_err!("special tokens must be distinct, {a} repeats"));
            }
        }
        Ok(())
    }
}

/// Pre-norm block: causal self-attention, cross-attention, feedforward.
#[derive(Debug, Clone)]
struct DecoderBlock {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

impl DecoderBlock {
    fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &DecoderConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        DecoderBlock {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, cfg.n_heads, rng),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, cfg.n_heads, rng),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), d),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, cfg.ff_dim, Activation::Relu, rng),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, memory: Var) -> Result<Var> {
        let y = self.self_norm.forward(g, x)?;
        let y = self.self_attn.forward(g, y, y, true)?;
        let x = g.add(x, y)?;
        let y = self.cross_norm.forward(g, x)?;
        let y = self.cross_attn.forward(g, y, memory, false)?;
        let x = g.add(x, y)?;
        let y = self.ff_norm.forward(g, x)?;
        let y = self.ff.forward(g, y)?;
        g.add(x, y)
    }
}

/// Transformer decoder over the bridge outputs.
#[derive(Debug, Clone)]
pub struct Decoder {
    cfg: DecoderConfig,
    embedding: ParamId,
    blocks: Vec<DecoderBlock>,
    final_norm: LayerNorm,
    output: Linear,
}

impl Decoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: DecoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let bound = 1.0 / libm::sqrt(cfg.d_model as f64);
        let embedding = store.add_uniform("decoder.embedding", &[cfg.vocab_size, cfg.d_model], bound, rng);
        let blocks = (0..cfg.n_blocks)
            .map(|i| DecoderBlock::new(store, &format!("decoder.block{i}"), &cfg, rng))
            .collect();
        let final_norm = LayerNorm::new(store, "decoder.final_norm", cfg.d_model);
        let output = Linear::new(store, "decoder.output", cfg.d_model, cfg.vocab_size, rng);
        Ok(Decoder {
            cfg,
            embedding,
            blocks,
            final_norm,
            output,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Logits `[len(prefix) × vocab]` for a decoder input sequence that
    /// already starts with `sos`.
    pub fn forward_prefix<T: Real>(&self, g: &mut Graph<'_, T>, memory: Var, prefix: &[usize]) -> Result<Var> {
        let table = g.param(self.embedding);
        let x = g.embedding(table, prefix)?;
        let mut x = add_positions(g, x)?;
        for block in &self.blocks {
            x = block.forward(g, x, memory)?;
        }
        let x = self.final_norm.forward(g, x)?;
        self.output.forward(g, x)
    }

    /// Teacher forcing: input `sos ⊕ y`, logits for `y ⊕ eos`.
    pub fn decode_train<T: Real>(&self, g: &mut Graph<'_, T>, memory: Var, target: &[usize]) -> Result<Var> {
        let s = self.cfg.specials;
        if target.len() > self.cfg.max_target_len {
            return Err(domain_err!(
                "target of {} tokens exceeds maximum {}",
                target.len(),
                self.cfg.max_target_len
            ));
        }
        if let Some(&bad) = target.iter().find(|&&t| t == s.sos || t == s.eos || t >= self.cfg.vocab_size) {
            return Err(domain_err!("target contains reserved or unknown token {bad}"));
        }
        let mut input = Vec::with_capacity(target.len() + 1);
        input.push(s.sos);
        input.extend_from_slice(target);
        self.forward_prefix(g, memory, &input)
    }

    /// `y ⊕ eos`, the positions scored by [`Decoder::decode_train`].
    pub fn shifted_targets(&self, target: &[usize]) -> Vec<usize> {
        let mut out = target.to_vec();
        out.push(self.cfg.specials.eos);
        out
    }
}
