//! Flat `section.key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use cntm_core::bridge::BridgeOrder;
use cntm_core::model::{InputKind, MemoryKind, ModelConfig};
use cntm_core::ntm::{InitScheme, SharpenMode};
use cntm_core::objective::CtcTap;
use cntm_core::tasks::Vocab;
use cntm_core::trainer::{AdamConfig, DevMetric, TrainConfig};

use crate::error::{CliError, Result};

/// Which synthetic task a run generates and trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    RepeatCopy,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::RepeatCopy => "repeat-copy",
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "repeat-copy" => Ok(TaskKind::RepeatCopy),
            _ => Err(format!("unknown task {s:?} (expected copy or repeat-copy)")),
        }
    }
}

/// Floating-point type used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?} (expected f32 or f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub input: InputKind,
    /// Feature width; 0 takes it from the data (tokens use the vocabulary).
    pub input_dim: usize,
    pub d_model: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub encoder_ff: usize,
    pub decoder_ff: usize,
    pub conv_kernel: usize,
    pub subsample_channels: usize,
    pub max_target_len: usize,
    pub memory: MemoryKind,
    pub ctc_weight: f64,
    pub ctc_tap: CtcTap,
    pub label_smoothing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtmSection {
    pub rows: usize,
    pub cols: usize,
    pub read_heads: usize,
    pub write_heads: usize,
    pub shifts: Vec<i64>,
    pub sharpen: SharpenMode,
    pub init: InitScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSection {
    pub order: BridgeOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    /// 0 means no limit.
    pub max_steps: u64,
    pub batch_bins: usize,
    pub keep_best_k: usize,
    pub clip_norm: f64,
    pub dev_metric: DevMetric,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub precision: Precision,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub symbols: usize,
    pub train_count: usize,
    pub dev_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_repeats: usize,
    pub max_repeats: usize,
    pub long_pool: usize,
    pub long_max_len: usize,
    pub very_long_pool: usize,
    pub very_long_min_len: usize,
    pub very_long_max_len: usize,
    pub chain_min: usize,
    pub chain_max: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    /// 1 decodes greedily.
    pub beam: usize,
    /// 0 keeps the model's own length cap.
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub ntm: NtmSection,
    pub bridge: BridgeSection,
    pub train: TrainSection,
    pub task: TaskSection,
    pub eval: EvalSection,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_shifts(key: &str, value: &str) -> Result<Vec<i64>> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

fn join_shifts(shifts: &[i64]) -> String {
    shifts.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
}

/// Declares every key once: its field, how it is parsed and how it prints.
macro_rules! keys {
    ($( $key:literal => $($field:ident).+ : $kind:ident ),* $(,)?) => {
        /// Every accepted key, in dump order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(keys!(@show $kind, self.$($field).+)),)*
                    _ => None,
                }
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = keys!(@parse $kind, key, value)?,)*
                    _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }
        }
    };
    (@show plain, $v:expr) => { $v.to_string() };
    (@show named, $v:expr) => { $v.as_str().to_string() };
    (@show shifts, $v:expr) => { join_shifts(&$v) };
    (@parse shifts, $k:expr, $v:expr) => { parse_shifts($k, $v) };
    (@parse $other:ident, $k:expr, $v:expr) => { parse($k, $v) };
}

keys! {
    "run.seed" => seed: plain,
    "model.input" => model.input: named,
    "model.input_dim" => model.input_dim: plain,
    "model.d_model" => model.d_model: plain,
    "model.encoder_blocks" => model.encoder_blocks: plain,
    "model.decoder_blocks" => model.decoder_blocks: plain,
    "model.heads" => model.heads: plain,
    "model.encoder_ff" => model.encoder_ff: plain,
    "model.decoder_ff" => model.decoder_ff: plain,
    "model.conv_kernel" => model.conv_kernel: plain,
    "model.subsample_channels" => model.subsample_channels: plain,
    "model.max_target_len" => model.max_target_len: plain,
    "model.memory" => model.memory: named,
    "model.ctc_weight" => model.ctc_weight: plain,
    "model.ctc_tap" => model.ctc_tap: named,
    "model.label_smoothing" => model.label_smoothing: plain,
    "ntm.rows" => ntm.rows: plain,
    "ntm.cols" => ntm.cols: plain,
    "ntm.read_heads" => ntm.read_heads: plain,
    "ntm.write_heads" => ntm.write_heads: plain,
    "ntm.shifts" => ntm.shifts: shifts,
    "ntm.sharpen" => ntm.sharpen: named,
    "ntm.init" => ntm.init: named,
    "bridge.order" => bridge.order: named,
    "train.peak_lr" => train.peak_lr: plain,
    "train.warmup_steps" => train.warmup_steps: plain,
    "train.epochs" => train.epochs: plain,
    "train.max_steps" => train.max_steps: plain,
    "train.batch_bins" => train.batch_bins: plain,
    "train.keep_best_k" => train.keep_best_k: plain,
    "train.clip_norm" => train.clip_norm: plain,
    "train.dev_metric" => train.dev_metric: named,
    "train.beta1" => train.beta1: plain,
    "train.beta2" => train.beta2: plain,
    "train.adam_eps" => train.adam_eps: plain,
    "train.weight_decay" => train.weight_decay: plain,
    "train.precision" => train.precision: named,
    "train.threads" => train.threads: plain,
    "task.kind" => task.kind: named,
    "task.symbols" => task.symbols: plain,
    "task.train_count" => task.train_count: plain,
    "task.dev_count" => task.dev_count: plain,
    "task.min_len" => task.min_len: plain,
    "task.max_len" => task.max_len: plain,
    "task.min_repeats" => task.min_repeats: plain,
    "task.max_repeats" => task.max_repeats: plain,
    "task.long_pool" => task.long_pool: plain,
    "task.long_max_len" => task.long_max_len: plain,
    "task.very_long_pool" => task.very_long_pool: plain,
    "task.very_long_min_len" => task.very_long_min_len: plain,
    "task.very_long_max_len" => task.very_long_max_len: plain,
    "task.chain_min" => task.chain_min: plain,
    "task.chain_max" => task.chain_max: plain,
    "task.k" => task.k: plain,
    "eval.beam" => eval.beam: plain,
    "eval.max_len" => eval.max_len: plain,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl RunConfig {
    /// Full-scale geometry and recipe; synthetic task settings are the
    /// desk-scale ones since the full-scale data is not synthetic.
    pub fn full() -> Self {
        let train = TrainConfig::full();
        RunConfig {
            seed: 1,
            model: ModelSection {
                input: InputKind::Tokens,
                input_dim: 0,
                d_model: 256,
                encoder_blocks: 12,
                decoder_blocks: 6,
                heads: 4,
                encoder_ff: 1024,
                decoder_ff: 2048,
                conv_kernel: 31,
                subsample_channels: 256,
                max_target_len: 512,
                memory: MemoryKind::Ntm,
                ctc_weight: 0.3,
                ctc_tap: CtcTap::Memory,
                label_smoothing: 0.1,
            },
            ntm: NtmSection {
                rows: 256,
                cols: 10,
                read_heads: 1,
                write_heads: 1,
                shifts: vec![-1, 0, 1],
                sharpen: SharpenMode::Softmax,
                init: InitScheme::Constant,
            },
            bridge: BridgeSection {
                order: BridgeOrder::WriteFirst,
            },
            train: TrainSection {
                peak_lr: train.peak_lr,
                warmup_steps: train.warmup_steps,
                epochs: train.epochs,
                max_steps: 0,
                batch_bins: train.batch_bins,
                keep_best_k: train.keep_best_k,
                clip_norm: train.clip_norm,
                dev_metric: train.dev_metric,
                beta1: train.adam.beta1,
                beta2: train.adam.beta2,
                adam_eps: train.adam.eps,
                weight_decay: train.adam.weight_decay,
                precision: Precision::F32,
                threads: 1,
            },
            task: TaskSection {
                kind: TaskKind::Copy,
                symbols: 16,
                train_count: 2000,
                dev_count: 100,
                min_len: 1,
                max_len: 8,
                min_repeats: 1,
                max_repeats: 3,
                long_pool: 300,
                long_max_len: 24,
                very_long_pool: 400,
                very_long_min_len: 8,
                very_long_max_len: 16,
                chain_min: 2,
                chain_max: 4,
                k: 100,
            },
            eval: EvalSection { beam: 1, max_len: 0 },
        }
    }

    /// Desk-scale model and a short training recipe.
    pub fn toy() -> Self {
        let mut c = Self::full();
        c.model = ModelSection {
            d_model: 64,
            encoder_blocks: 2,
            decoder_blocks: 2,
            heads: 2,
            encoder_ff: 128,
            decoder_ff: 128,
            conv_kernel: 7,
            subsample_channels: 8,
            ..c.model
        };
        c.ntm.rows = 32;
        c.ntm.cols = 8;
        c.train.warmup_steps = 200;
        c.train.epochs = 1000;
        c.train.max_steps = 1500;
        c.train.batch_bins = 64;
        c.train.keep_best_k = 3;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "toy" => Ok(Self::toy()),
            _ => Err(CliError::Usage(format!("unknown preset {name:?} (expected full or toy)"))),
        }
    }

    /// One `key = value` line per key.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).unwrap_or_default();
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Apply a single `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn load(path: &Path, base: Self) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut c = base;
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Ok(Vocab::new(self.task.symbols)?)
    }

    /// Input width the encoder expects: the vocabulary for token input.
    pub fn input_dim(&self) -> Result<usize> {
        match self.model.input {
            InputKind::Tokens => Ok(self.vocab()?.size()),
            InputKind::Features if self.model.input_dim > 0 => Ok(self.model.input_dim),
            InputKind::Features => Err(CliError::Config("model.input_dim must be set for feature input".into())),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let vocab = self.vocab()?;
        let m = &self.model;
        let mut cfg = ModelConfig::toy(m.input, self.input_dim()?, vocab.size(), vocab.specials());
        cfg.encoder.subsample = m.input == InputKind::Features;
        cfg.encoder.d_model = m.d_model;
        cfg.encoder.n_blocks = m.encoder_blocks;
        cfg.encoder.n_heads = m.heads;
        cfg.encoder.ff_dim = m.encoder_ff;
        cfg.encoder.conv_kernel = m.conv_kernel;
        cfg.encoder.subsample_channels = m.subsample_channels;
        cfg.decoder.d_model = m.d_model;
        cfg.decoder.n_blocks = m.decoder_blocks;
        cfg.decoder.n_heads = m.heads;
        cfg.decoder.ff_dim = m.decoder_ff;
        cfg.decoder.max_target_len = m.max_target_len;
        cfg.memory = m.memory;
        cfg.objective.ctc_weight = m.ctc_weight;
        cfg.objective.ctc_tap = m.ctc_tap;
        cfg.objective.label_smoothing = m.label_smoothing;
        let n = &self.ntm;
        cfg.ntm.rows = n.rows;
        cfg.ntm.cols = n.cols;
        cfg.ntm.read_heads = n.read_heads;
        cfg.ntm.write_heads = n.write_heads;
        cfg.ntm.shifts = n.shifts.clone();
        cfg.ntm.sharpen = n.sharpen;
        cfg.ntm.init = n.init;
        cfg.order = self.bridge.order;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            peak_lr: t.peak_lr,
            warmup_steps: t.warmup_steps,
            adam: AdamConfig {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
                weight_decay: t.weight_decay,
            },
            epochs: t.epochs,
            max_steps: (t.max_steps > 0).then_some(t.max_steps),
            batch_bins: t.batch_bins,
            keep_best_k: t.keep_best_k,
            clip_norm: t.clip_norm,
            dev_metric: t.dev_metric,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
