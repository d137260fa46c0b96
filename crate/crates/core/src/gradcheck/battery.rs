//! The standard set of finite-difference checks, grouped into named suites.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{CheckOptions, GradReport, InputFn, ParamFn};
use crate::bridge::{Bridge, BridgeConfig, BridgeOrder};
use crate::error::{config_err, Result};
use crate::model::{
    Decoder, DecoderConfig, Encoder, EncoderConfig, EncoderInput, InputKind, MemoryKind, Model,
    ModelConfig, SpecialTokens,
};
use crate::ntm::{address_vars, EmissionVars, HeadKind, InitScheme, NtmConfig, SharpenMode};
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var, COSINE_DELTA};
use crate::objective::{attention_loss, ctc_loss, ObjectiveConfig};
use crate::rng::item_stream;

/// Suite names in execution order.
pub const SUITES: &[&str] = &[
    "numerics",
    "ntm.address",
    "ntm.memory",
    "bridge",
    "ctc",
    "attention",
    "encoder",
    "decoder",
    "model",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryOptions {
    pub check: CheckOptions,
    pub seed: u64,
    /// Random instances per primitive.
    pub trials: usize,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        BatteryOptions {
            check: CheckOptions::default(),
            seed: 7,
            trials: 20,
        }
    }
}

pub fn run_all(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for name in SUITES {
        out.extend(run_suite(name, opts)?);
    }
    Ok(out)
}

pub fn run_suite(name: &str, opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    match name {
        "numerics" => primitives(opts),
        "ntm.address" => addressing(opts),
        "ntm.memory" => memory(opts),
        "bridge" => bridge(opts),
        "ctc" => ctc(opts),
        "attention" => attention(opts),
        "encoder" => encoder(opts),
        "decoder" => decoder(opts),
        "model" => model(opts),
        other => Err(config_err!(
            "unknown gradient suite {other:?}; expected one of {}",
            SUITES.join(", ")
        )),
    }
}

#[derive(Clone, Copy)]
enum Domain {
    /// Uniform in (−1, 1).
    Any,
    /// Uniform in (0.2, 1.5).
    Positive,
    /// Magnitude in (0.2, 1), random sign.
    AwayFromZero,
}

impl Domain {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Domain::Any => rng.gen_range(-1.0..1.0),
            Domain::Positive => rng.gen_range(0.2..1.5),
            Domain::AwayFromZero => {
                let m = rng.gen_range(0.2..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
        }
    }
}

type Build = fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

struct Primitive {
    name: &'static str,
    operands: &'static [(&'static [usize], Domain)],
    build: Build,
}

use Domain::{Any, AwayFromZero, Positive};

const PRIMITIVES: &[Primitive] = &[
    Primitive { name: "add", operands: &[(&[2, 3], Any), (&[2, 3], Any)], build: |g, v| g.add(v[0], v[1]) },
    Primitive { name: "sub", operands: &[(&[2, 3], Any), (&[2, 3], Any)], build: |g, v| g.sub(v[0], v[1]) },
    Primitive { name: "mul", operands: &[(&[2, 3], Any), (&[2, 3], Any)], build: |g, v| g.mul(v[0], v[1]) },
    Primitive { name: "add_row", operands: &[(&[3, 2], Any), (&[2], Any)], build: |g, v| g.add_row(v[0], v[1]) },
    Primitive { name: "mul_row", operands: &[(&[3, 2], Any), (&[2], Any)], build: |g, v| g.mul_row(v[0], v[1]) },
    Primitive { name: "scale", operands: &[(&[4], Any)], build: |g, v| Ok(g.scale(v[0], 1.7)) },
    Primitive { name: "add_scalar", operands: &[(&[4], Any)], build: |g, v| Ok(g.add_scalar(v[0], 0.3)) },
    Primitive { name: "scale_by", operands: &[(&[4], Any), (&[1], Any)], build: |g, v| g.scale_by(v[0], v[1]) },
    Primitive { name: "pow", operands: &[(&[4], Positive)], build: |g, v| Ok(g.pow(v[0], 2.5)) },
    Primitive { name: "pow_by", operands: &[(&[4], Positive), (&[1], Positive)], build: |g, v| g.pow_by(v[0], v[1]) },
    Primitive { name: "sigmoid", operands: &[(&[5], Any)], build: |g, v| Ok(g.sigmoid(v[0])) },
    Primitive { name: "softplus", operands: &[(&[5], Any)], build: |g, v| Ok(g.softplus(v[0])) },
    Primitive { name: "tanh", operands: &[(&[5], Any)], build: |g, v| Ok(g.tanh(v[0])) },
    Primitive { name: "relu", operands: &[(&[5], AwayFromZero)], build: |g, v| Ok(g.relu(v[0])) },
    Primitive { name: "silu", operands: &[(&[5], Any)], build: |g, v| Ok(g.silu(v[0])) },
    Primitive { name: "exp", operands: &[(&[5], Any)], build: |g, v| Ok(g.exp(v[0])) },
    Primitive { name: "matmul", operands: &[(&[2, 3], Any), (&[3, 4], Any)], build: |g, v| g.matmul(v[0], v[1]) },
    Primitive { name: "matmul_vector", operands: &[(&[3], Any), (&[3, 2], Any)], build: |g, v| g.matmul(v[0], v[1]) },
    Primitive { name: "transpose", operands: &[(&[2, 3], Any)], build: |g, v| g.transpose(v[0]) },
    Primitive { name: "concat", operands: &[(&[2, 3], Any), (&[2, 1], Any)], build: |g, v| g.concat(&[v[0], v[1]]) },
    Primitive { name: "stack_rows", operands: &[(&[3], Any), (&[3], Any)], build: |g, v| g.stack_rows(&[v[0], v[1]]) },
    Primitive { name: "slice_cols", operands: &[(&[3, 4], Any)], build: |g, v| g.slice_cols(v[0], 1, 2) },
    Primitive { name: "slice_rows", operands: &[(&[4, 2], Any)], build: |g, v| g.slice_rows(v[0], 1, 2) },
    Primitive { name: "swap_leading", operands: &[(&[2, 3, 2], Any)], build: |g, v| g.swap_leading(v[0]) },
    Primitive { name: "sum", operands: &[(&[2, 3], Any)], build: |g, v| Ok(g.sum(v[0])) },
    Primitive { name: "mean", operands: &[(&[2, 3], Any)], build: |g, v| Ok(g.mean(v[0])) },
    Primitive { name: "dot", operands: &[(&[4], Any), (&[4], Any)], build: |g, v| g.dot(v[0], v[1]) },
    Primitive { name: "layer_norm", operands: &[(&[3, 4], Any)], build: |g, v| Ok(g.layer_norm(v[0], 1e-5)) },
    Primitive { name: "embedding", operands: &[(&[4, 3], Any)], build: |g, v| g.embedding(v[0], &[2, 0, 2, 3]) },
    Primitive { name: "softmax", operands: &[(&[2, 4], Any)], build: |g, v| g.softmax(v[0]) },
    Primitive { name: "causal_softmax", operands: &[(&[3, 3], Any)], build: |g, v| g.causal_softmax(v[0]) },
    Primitive { name: "log_softmax", operands: &[(&[2, 4], Any)], build: |g, v| g.log_softmax(v[0]) },
    Primitive { name: "normalize", operands: &[(&[5], Positive)], build: |g, v| g.normalize(v[0]) },
    Primitive { name: "lerp", operands: &[(&[4], Any), (&[4], Any), (&[1], Any)], build: |g, v| g.lerp(v[0], v[1], v[2]) },
    Primitive { name: "cosine", operands: &[(&[3], Any), (&[4, 3], Any)], build: |g, v| g.cosine_rows(v[0], v[1], COSINE_DELTA) },
    Primitive {
        name: "circular_convolve",
        operands: &[(&[5], Positive), (&[3], Positive)],
        build: |g, v| g.circular_convolve(v[0], v[1], &[-1, 0, 1]),
    },
    Primitive { name: "read", operands: &[(&[4, 3], Any), (&[4], Positive)], build: |g, v| g.read_memory(v[0], v[1]) },
    Primitive {
        name: "write",
        operands: &[(&[4, 3], Any), (&[4], Positive), (&[3], Positive), (&[3], Any)],
        build: |g, v| g.write_memory(v[0], v[1], v[2], v[3]),
    },
    Primitive { name: "depthwise_conv", operands: &[(&[5, 2], Any), (&[3, 2], Any)], build: |g, v| g.depthwise_conv(v[0], v[1]) },
    Primitive {
        name: "conv2d",
        operands: &[(&[2, 7, 5], Any), (&[3, 2, 3, 3], Any), (&[3], Any)],
        build: |g, v| g.conv2d(v[0], v[1], v[2], 2),
    },
];

/// Project `y` onto fixed pseudo-random weights so every output coordinate
/// contributes to the checked scalar.
fn project<T: Real>(g: &mut Graph<'_, T>, y: Var, seed: u64, name: &str) -> Result<Var> {
    let mut rng = item_stream(seed, name, u64::MAX);
    let shape = g.shape(y).to_vec();
    let n = g.value(y).numel();
    let w: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    g.dot(y, w)
}

fn unpack(g: &mut Graph<'_, f64>, theta: Var, shapes: &[&[usize]]) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &shape in shapes {
        let n: usize = shape.iter().product();
        let part = g.slice_cols(theta, offset, n)?;
        out.push(g.reshape(part, shape)?);
        offset += n;
    }
    Ok(out)
}

/// Half-width of the random test point.
const SCALE: f64 = 0.5;

/// Move every parameter to a random point so that no gradient is
/// degenerate the way it can be at initialization.
fn randomize(store: &mut ParamStore<f64>, seed: u64, name: &str, scale: f64) {
    let mut rng = item_stream(seed, name, u64::MAX - 1);
    for t in store.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

/// Keep the worst report of several trials of the same check.
fn worst(name: String, reports: Vec<GradReport>) -> GradReport {
    let mut worst: Option<GradReport> = None;
    for r in reports {
        let replace = match &worst {
            None => true,
            Some(w) => (w.passed && !r.passed) || (w.passed == r.passed && r.max_rel_error > w.max_rel_error),
        };
        if replace {
            worst = Some(r);
        }
    }
    let mut w = worst.expect("at least one trial");
    w.op_name = name;
    w
}

fn primitives(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let mut out = Vec::with_capacity(PRIMITIVES.len());
    for p in PRIMITIVES {
        let shapes: Vec<&[usize]> = p.operands.iter().map(|o| o.0).collect();
        let mut trials = Vec::with_capacity(opts.trials);
        for trial in 0..opts.trials {
            let mut rng = item_stream(opts.seed, p.name, trial as u64);
            let mut theta = Vec::new();
            for &(shape, domain) in p.operands {
                let n: usize = shape.iter().product();
                theta.extend((0..n).map(|_| domain.sample(&mut rng)));
            }
            let seed = opts.seed ^ trial as u64;
            let f = |g: &mut Graph<'_, f64>, x: Var| -> Result<Var> {
                let ops = unpack(g, x, &shapes)?;
                let y = (p.build)(g, &ops)?;
                project(g, y, seed, p.name)
            };
            trials.push(opts.check.check(p.name, f, &Tensor::vector(theta))?);
        }
        out.push(worst(format!("numerics.{}", p.name), trials));
    }
    Ok(out)
}

fn small_ntm(sharpen: SharpenMode) -> NtmConfig {
    NtmConfig {
        rows: 8,
        cols: 4,
        sharpen,
        ..NtmConfig::toy()
    }
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// `address` with respect to the raw emission, memory and previous weights.
fn addressing(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for (label, mode) in [("softmax", SharpenMode::Softmax), ("power", SharpenMode::Power)] {
        let cfg = small_ntm(mode);
        let (n, w, s) = (cfg.rows, cfg.cols, cfg.shifts.len());
        let raw = HeadKind::Read.raw_size(w, s);
        let mut trials = Vec::new();
        for trial in 0..opts.trials {
            let mut rng = item_stream(opts.seed, "address", trial as u64);
            let mut theta = random_vec(&mut rng, raw + n * w, -1.0, 1.0);
            theta.extend(random_vec(&mut rng, n, 0.05, 1.0));
            let cfg = &cfg;
            let f = |g: &mut Graph<'_, f64>, x: Var| -> Result<Var> {
                let v = unpack(g, x, &[&[raw], &[n, w], &[n]])?;
                let prev = g.normalize(v[2])?;
                let em = EmissionVars::from_raw(g, v[0], HeadKind::Read, w, s)?;
                let a = address_vars(g, &em, v[1], prev, cfg)?;
                project(g, a.weights, opts.seed ^ trial as u64, "address")
            };
            trials.push(opts.check.check("address", f, &Tensor::vector(theta))?);
        }
        out.push(worst(format!("ntm.address.{label}"), trials));
    }
    Ok(out)
}

/// Three chained timesteps of address → write → address → read.
fn memory(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let cfg = small_ntm(SharpenMode::Softmax);
    let (n, w, s) = (cfg.rows, cfg.cols, cfg.shifts.len());
    let (rw, rr) = (HeadKind::Write.raw_size(w, s), HeadKind::Read.raw_size(w, s));
    let steps = 3;
    let mut trials = Vec::new();
    for trial in 0..opts.trials.min(5) {
        let mut rng = item_stream(opts.seed, "memory", trial as u64);
        let theta = random_vec(&mut rng, n * w + steps * (rw + rr), -1.0, 1.0);
        let cfg = &cfg;
        let f = |g: &mut Graph<'_, f64>, x: Var| -> Result<Var> {
            let (sm, sw, sr) = ([n, w], [rw], [rr]);
            let mut shapes: Vec<&[usize]> = vec![&sm];
            for _ in 0..steps {
                shapes.push(&sw);
                shapes.push(&sr);
            }
            let v = unpack(g, x, &shapes)?;
            let mut mem = v[0];
            let mut one_hot = vec![0.0; n];
            one_hot[0] = 1.0;
            let mut w_write = g.constant(Tensor::vector(one_hot.clone()));
            let mut w_read = g.constant(Tensor::vector(one_hot));
            let mut reads = Vec::new();
            for t in 0..steps {
                let ew = EmissionVars::from_raw(g, v[1 + 2 * t], HeadKind::Write, w, s)?;
                let aw = address_vars(g, &ew, mem, w_write, cfg)?;
                mem = g.write_memory(mem, aw.weights, ew.erase.expect("write"), ew.add.expect("write"))?;
                w_write = aw.weights;
                let er = EmissionVars::from_raw(g, v[2 + 2 * t], HeadKind::Read, w, s)?;
                let ar = address_vars(g, &er, mem, w_read, cfg)?;
                reads.push(g.read_memory(mem, ar.weights)?);
                w_read = ar.weights;
            }
            let r = g.stack_rows(&reads)?;
            project(g, r, opts.seed ^ trial as u64, "memory")
        };
        trials.push(opts.check.check("memory", f, &Tensor::vector(theta))?);
    }
    Ok(vec![worst(String::from("ntm.memory.rollout"), trials)])
}

struct BridgeCase<'a> {
    bridge: &'a Bridge,
    h: &'a Tensor<f64>,
    seed: u64,
    name: &'a str,
}

impl ParamFn for BridgeCase<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let h = g.constant(self.h.cast());
        InputFn::eval(self, g, h)
    }
}

impl InputFn for BridgeCase<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Var> {
        let o = self.bridge.sequence(g, h)?;
        project(g, o, self.seed, self.name)
    }
}

/// Bridge rollouts with respect to all bridge parameters and to the input.
fn bridge(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    let cases = [
        ("bridge.write_first", 3, BridgeOrder::WriteFirst, InitScheme::Constant),
        ("bridge.read_first", 3, BridgeOrder::ReadFirst, InitScheme::Constant),
        ("bridge.sequence5", 5, BridgeOrder::WriteFirst, InitScheme::Learned),
    ];
    for (name, t_len, order, init) in cases {
        let d = 6;
        let cfg = BridgeConfig {
            d_model: d,
            ntm: NtmConfig {
                init,
                ..small_ntm(SharpenMode::Softmax)
            },
            order,
        };
        let mut rng = item_stream(opts.seed, name, 0);
        let mut store = ParamStore::<f64>::new();
        let bridge = Bridge::new(&mut store, "bridge", cfg, &mut rng)?;
        randomize(&mut store, opts.seed, name, SCALE);
        let h = Tensor::new(vec![t_len, d], random_vec(&mut rng, t_len * d, -1.0, 1.0))?;
        let case = BridgeCase {
            bridge: &bridge,
            h: &h,
            seed: opts.seed,
            name,
        };
        out.push(opts.check.check_params(&format!("{name}.params"), &store, &case)?);
        out.push(opts.check.check_input(&format!("{name}.input"), &store, &h, &case)?);
    }
    Ok(out)
}

fn ctc(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let (frames, classes, blank) = (6, 4, 0);
    let mut trials = Vec::new();
    for trial in 0..opts.trials {
        let mut rng = item_stream(opts.seed, "ctc", trial as u64);
        let len = rng.gen_range(1..=3);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(1..classes)).collect();
        let theta = random_vec(&mut rng, frames * classes, -2.0, 2.0);
        let f = |g: &mut Graph<'_, f64>, x: Var| -> Result<Var> {
            let logits = g.reshape(x, &[frames, classes])?;
            ctc_loss(g, logits, &target, blank)
        };
        trials.push(opts.check.check("ctc", f, &Tensor::vector(theta))?);
    }
    Ok(vec![worst(String::from("ctc.loss"), trials)])
}

fn attention(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let (rows, classes) = (4, 5);
    let mut trials = Vec::new();
    for trial in 0..opts.trials {
        let mut rng = item_stream(opts.seed, "attention", trial as u64);
        let targets: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
        let theta = random_vec(&mut rng, rows * classes, -2.0, 2.0);
        let smoothing = if trial % 2 == 0 { 0.1 } else { 0.0 };
        let f = |g: &mut Graph<'_, f64>, x: Var| -> Result<Var> {
            let logits = g.reshape(x, &[rows, classes])?;
            attention_loss(g, logits, &targets, smoothing)
        };
        trials.push(opts.check.check("attention", f, &Tensor::vector(theta))?);
    }
    Ok(vec![worst(String::from("attention.loss"), trials)])
}

fn tiny_encoder(kind: InputKind, input_dim: usize, subsample: bool) -> EncoderConfig {
    EncoderConfig {
        input_kind: kind,
        input_dim,
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        ff_dim: 16,
        conv_kernel: 3,
        subsample,
        subsample_channels: 2,
    }
}

struct EncoderCase<'a> {
    encoder: &'a Encoder,
    tokens: &'a [usize],
    features: Option<&'a Tensor<f64>>,
    seed: u64,
}

impl ParamFn for EncoderCase<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let h = match self.features {
            Some(x) => self.encoder.forward(g, EncoderInput::Features(&x.cast()))?,
            None => self.encoder.forward(g, EncoderInput::Tokens(self.tokens))?,
        };
        project(g, h, self.seed, "encoder")
    }
}

fn encoder(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    {
        let mut rng = item_stream(opts.seed, "encoder.tokens", 0);
        let mut store = ParamStore::<f64>::new();
        let enc = Encoder::new(&mut store, tiny_encoder(InputKind::Tokens, 5, false), &mut rng)?;
        randomize(&mut store, opts.seed, "encoder.tokens", SCALE);
        let tokens: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
        let case = EncoderCase {
            encoder: &enc,
            tokens: &tokens,
            features: None,
            seed: opts.seed,
        };
        out.push(opts.check.check_params("encoder.tokens", &store, &case)?);
    }
    {
        let mut rng = item_stream(opts.seed, "encoder.features", 0);
        let mut store = ParamStore::<f64>::new();
        let enc = Encoder::new(&mut store, tiny_encoder(InputKind::Features, 7, true), &mut rng)?;
        randomize(&mut store, opts.seed, "encoder.features", SCALE);
        let x = Tensor::new(vec![19, 7], random_vec(&mut rng, 19 * 7, -1.0, 1.0))?;
        let case = EncoderCase {
            encoder: &enc,
            tokens: &[],
            features: Some(&x),
            seed: opts.seed,
        };
        out.push(opts.check.check_params("encoder.subsampled", &store, &case)?);
    }
    Ok(out)
}

fn tiny_specials() -> SpecialTokens {
    SpecialTokens {
        blank: 2,
        pad: 2,
        sos: 3,
        eos: 4,
    }
}

fn decoder(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let cfg = DecoderConfig {
        vocab_size: 5,
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        ff_dim: 16,
        specials: tiny_specials(),
        max_target_len: 16,
    };
    let mut rng = item_stream(opts.seed, "decoder", 0);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, cfg, &mut rng)?;
    randomize(&mut store, opts.seed, "decoder", SCALE);
    let memory = Tensor::new(vec![4, 8], random_vec(&mut rng, 32, -1.0, 1.0))?;
    let case = DecoderCase {
        decoder: &dec,
        memory: &memory,
        target: &[0, 1, 1],
    };
    Ok(vec![opts.check.check_params("decoder.block", &store, &case)?])
}

struct DecoderCase<'a> {
    decoder: &'a Decoder,
    memory: &'a Tensor<f64>,
    target: &'a [usize],
}

impl ParamFn for DecoderCase<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let m = g.constant(self.memory.cast());
        let logits = self.decoder.decode_train(g, m, self.target)?;
        let shifted = self.decoder.shifted_targets(self.target);
        attention_loss(g, logits, &shifted, 0.1)
    }
}

/// Encoder, bridge and decoder with the joint loss: `T = 8`, `d = 8`,
/// `8 × 4` memory, five output classes.
pub fn toy_model_config(memory: MemoryKind) -> ModelConfig {
    let specials = tiny_specials();
    ModelConfig {
        encoder: tiny_encoder(InputKind::Tokens, 5, false),
        decoder: DecoderConfig {
            vocab_size: 5,
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            ff_dim: 16,
            specials,
            max_target_len: 16,
        },
        memory,
        ntm: small_ntm(SharpenMode::Softmax),
        order: BridgeOrder::WriteFirst,
        objective: ObjectiveConfig::new(specials.blank),
    }
}

fn model(opts: &BatteryOptions) -> Result<Vec<GradReport>> {
    let cfg = toy_model_config(MemoryKind::Ntm);
    let (m, mut store) = Model::new::<f64>(cfg, opts.seed)?;
    randomize(&mut store, opts.seed, "model", SCALE);
    let mut rng = item_stream(opts.seed, "model", 0);
    let input: Vec<usize> = (0..8).map(|_| rng.gen_range(0..5)).collect();
    let case = ModelCase {
        model: &m,
        input: &input,
        target: &[0, 1, 1],
    };
    Ok(vec![opts.check.check_params("model.joint", &store, &case)?])
}

struct ModelCase<'a> {
    model: &'a Model,
    input: &'a [usize],
    target: &'a [usize],
}

impl ParamFn for ModelCase<'_> {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        Ok(self.model.loss(g, EncoderInput::Tokens(self.input), self.target)?.total)
    }
}
