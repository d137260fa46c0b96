//! Encoder, memory bridge and decoder assembled into one trainable model.

mod decoder;
mod encoder;
pub mod layers;
mod search;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;

pub use decoder::{Decoder, DecoderConfig, SpecialTokens};
pub use encoder::{
    subsampled_len, Encoder, EncoderConfig, EncoderInput, InputKind, MIN_SUBSAMPLE_FRAMES,
};
pub use search::{DecodeOptions, Hypothesis};

use crate::bridge::{Bridge, BridgeConfig, BridgeOrder};
use crate::error::{config_err, Error, Result};
use crate::ntm::NtmConfig;
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};
use crate::objective::{attention_loss, ctc_loss, joint_loss, CtcTap, ObjectiveConfig};
use crate::rng::{fnv1a, substream};
use layers::Linear;

/// Whether a memory bridge sits between encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MemoryKind {
    #[default]
    Ntm,
    /// Identity pass-through: the decoder attends to the encoder output directly.
    None,
}

impl FromStr for MemoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntm" => Ok(MemoryKind::Ntm),
            "none" => Ok(MemoryKind::None),
            other => Err(config_err!("unknown memory kind {other:?}")),
        }
    }
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Ntm => "ntm",
            MemoryKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub memory: MemoryKind,
    pub ntm: NtmConfig,
    pub order: BridgeOrder,
    pub objective: ObjectiveConfig,
}

impl ModelConfig {
    /// Small model: width 64, two encoder and two decoder blocks, 32×8 memory.
    pub fn toy(input_kind: InputKind, input_dim: usize, vocab_size: usize, specials: SpecialTokens) -> Self {
        ModelConfig {
            encoder: EncoderConfig::toy(input_kind, input_dim),
            decoder: DecoderConfig::toy(vocab_size, specials),
            memory: MemoryKind::Ntm,
            ntm: NtmConfig::toy(),
            order: BridgeOrder::WriteFirst,
            objective: ObjectiveConfig::new(specials.blank),
        }
    }

    /// Full-scale model: width 256, 12 encoder and 6 decoder blocks, 256×10 memory.
    pub fn full(input_dim: usize, vocab_size: usize, specials: SpecialTokens) -> Self {
        ModelConfig {
            encoder: EncoderConfig::full(input_dim),
            decoder: DecoderConfig::full(vocab_size, specials),
            memory: MemoryKind::Ntm,
            ntm: NtmConfig::full(),
            order: BridgeOrder::WriteFirst,
            objective: ObjectiveConfig::new(specials.blank),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.d_model != self.decoder.d_model {
            return Err(config_err!(
                "encoder width {} differs from decoder width {}",
                self.encoder.d_model,
                self.decoder.d_model
            ));
        }
        if self.memory == MemoryKind::Ntm {
            self.ntm.validate()?;
        }
        self.objective.validate()?;
        if self.objective.blank != self.decoder.specials.blank {
            return Err(config_err!("objective blank differs from decoder blank"));
        }
        Ok(())
    }

    /// Text identifying everything that shapes parameters or their meaning.
    pub fn architecture_key(&self) -> String {
        let ntm = match self.memory {
            MemoryKind::Ntm => format!("{:?}/{:?}", self.ntm, self.order),
            MemoryKind::None => String::from("none"),
        };
        format!("{:?}|{:?}|{}|{:?}", self.encoder, self.decoder, ntm, self.objective.ctc_tap)
    }
}

/// Encoder input that owns its data.
#[derive(Debug, Clone, PartialEq)]
pub enum OwnedInput<T> {
    Tokens(Vec<usize>),
    Features(Tensor<T>),
}

impl<T: Real> OwnedInput<T> {
    pub fn as_input(&self) -> EncoderInput<'_, T> {
        match self {
            OwnedInput::Tokens(t) => EncoderInput::Tokens(t),
            OwnedInput::Features(f) => EncoderInput::Features(f),
        }
    }

    /// Frames before subsampling.
    pub fn frames(&self) -> usize {
        match self {
            OwnedInput::Tokens(t) => t.len(),
            OwnedInput::Features(f) => f.rows(),
        }
    }
}

/// Graph nodes of one training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// Decoder logits under teacher forcing, `[|y| + 1, vocab]`.
    pub logits: Var,
    pub attention: Var,
    pub ctc: Option<Var>,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    encoder: Encoder,
    bridge: Option<Bridge>,
    decoder: Decoder,
    ctc_head: Linear,
}

impl Model {
    /// Build the model and draw its initial parameters from `seed`.
    pub fn new<T: Real>(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = substream(seed, "init");
        let model = Self::build(cfg, &mut store, &mut rng)?;
        Ok((model, store))
    }

    pub fn build<T: Real, R: Rng>(cfg: ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(store, cfg.encoder.clone(), rng)?;
        let bridge = match cfg.memory {
            MemoryKind::Ntm => Some(Bridge::new(
                store,
                "bridge",
                BridgeConfig {
                    d_model: cfg.encoder.d_model,
                    ntm: cfg.ntm.clone(),
                    order: cfg.order,
                },
                rng,
            )?),
            MemoryKind::None => None,
        };
        let decoder = Decoder::new(store, cfg.decoder.clone(), rng)?;
        let ctc_head = Linear::new(store, "ctc", cfg.encoder.d_model, cfg.decoder.vocab_size, rng);
        Ok(Model {
            cfg,
            encoder,
            bridge,
            decoder,
            ctc_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn bridge(&self) -> Option<&Bridge> {
        self.bridge.as_ref()
    }

    /// Hash of the architecture and parameter layout.
    pub fn fingerprint<T: Real>(&self, store: &ParamStore<T>) -> u64 {
        let key = format!("{}#{:016x}", self.cfg.architecture_key(), store.layout_hash());
        fnv1a(key.as_bytes())
    }

    /// Encoder output `h` and memory output `o`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: EncoderInput<'_, T>) -> Result<(Var, Var)> {
        let h = self.encoder.forward(g, input)?;
        let o = match &self.bridge {
            Some(b) => b.sequence(g, h)?,
            None => h,
        };
        Ok((h, o))
    }

    /// Joint CTC-attention loss of one utterance.
    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        input: EncoderInput<'_, T>,
        target: &[usize],
    ) -> Result<LossVars> {
        let (h, o) = self.forward(g, input)?;
        self.loss_from(g, h, o, target)
    }

    /// Loss terms given the encoder output `h` and memory output `o`.
    pub fn loss_from<T: Real>(&self, g: &mut Graph<'_, T>, h: Var, o: Var, target: &[usize]) -> Result<LossVars> {
        let logits = self.decoder.decode_train(g, o, target)?;
        let shifted = self.decoder.shifted_targets(target);
        let obj = &self.cfg.objective;
        let attention = attention_loss(g, logits, &shifted, obj.label_smoothing)?;
        if obj.ctc_weight == 0.0 {
            return Ok(LossVars {
                logits,
                attention,
                ctc: None,
                total: attention,
            });
        }
        let tap = match obj.ctc_tap {
            CtcTap::Memory => o,
            CtcTap::Encoder => h,
        };
        let frame_logits = self.ctc_head.forward(g, tap)?;
        let ctc = ctc_loss(g, frame_logits, target, obj.blank)?;
        let total = if obj.ctc_weight == 1.0 {
            ctc
        } else {
            joint_loss(g, attention, ctc, obj.ctc_weight)?
        };
        Ok(LossVars {
            logits,
            attention,
            ctc: Some(ctc),
            total,
        })
    }

    /// Greedy decoding, ties broken toward the lowest token id.
    pub fn greedy_decode<T: Real>(&self, store: &ParamStore<T>, input: EncoderInput<'_, T>) -> Result<Hypothesis> {
        search::greedy(self, store, input, &DecodeOptions::default())
    }

    /// Length-normalized beam search; hypotheses best first.
    pub fn beam_decode<T: Real>(
        &self,
        store: &ParamStore<T>,
        input: EncoderInput<'_, T>,
        beam_size: usize,
    ) -> Result<Vec<Hypothesis>> {
        search::beam(self, store, input, beam_size, &DecodeOptions::default())
    }

    pub fn beam_decode_with<T: Real>(
        &self,
        store: &ParamStore<T>,
        input: EncoderInput<'_, T>,
        beam_size: usize,
        opts: &DecodeOptions,
    ) -> Result<Vec<Hypothesis>> {
        search::beam(self, store, input, beam_size, opts)
    }

    pub fn greedy_decode_with<T: Real>(
        &self,
        store: &ParamStore<T>,
        input: EncoderInput<'_, T>,
        opts: &DecodeOptions,
    ) -> Result<Hypothesis> {
        search::greedy(self, store, input, opts)
    }
}
