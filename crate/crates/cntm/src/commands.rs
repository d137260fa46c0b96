//! The work behind each subcommand, callable without the argument parser.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cntm_core::gradcheck::battery::{run_all, run_suite, BatteryOptions};
use cntm_core::gradcheck::GradReport;
use cntm_core::model::{DecodeOptions, InputKind, Model};
use cntm_core::tasks::{gen_copy, gen_repeat_copy, link_segments, SplitSpec, Utterance};
use cntm_core::trainer::{examples, train, Checkpoint, Example, TrainObserver, TrainOutcome};
use cntm_core::{ParamStore, Real};

use crate::config::{Precision, RunConfig, TaskKind};
use crate::container;
use crate::corpus::{read_corpus, write_corpus};
use crate::error::{CliError, Result};
use crate::metrics_log::MetricsLog;
use crate::parallel::Pool;
use crate::report::{render_table, score_tokens, split_index, to_structured, SystemScores};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "metrics.tsv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const DIVERGED_CHECKPOINT: &str = "diverged.ckpt";

/// How a generated corpus is cut down before writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Full,
    LongestK,
    ConcatLongestK,
}

impl FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(SplitKind::Full),
            "longest-k" => Ok(SplitKind::LongestK),
            "concat-longest-k" => Ok(SplitKind::ConcatLongestK),
            _ => Err(format!("unknown split {s:?} (expected full, longest-k or concat-longest-k)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub task: TaskKind,
    pub seed: u64,
    pub count: usize,
    pub len_range: (usize, usize),
    pub split: SplitKind,
    pub k: usize,
    pub out: PathBuf,
}

impl GenDataArgs {
    /// Task, lengths and k from the config; the caller picks count and output.
    pub fn from_config(cfg: &RunConfig, count: usize, out: PathBuf) -> Self {
        GenDataArgs {
            task: cfg.task.kind,
            seed: cfg.seed,
            count,
            len_range: (cfg.task.min_len, cfg.task.max_len),
            split: SplitKind::Full,
            k: cfg.task.k,
            out,
        }
    }
}

pub fn generate(cfg: &RunConfig, args: &GenDataArgs) -> Result<Vec<Utterance>> {
    let vocab = cfg.vocab()?;
    let mut corpus = match args.task {
        TaskKind::Copy => gen_copy(args.seed, args.count, args.len_range, vocab)?,
        TaskKind::RepeatCopy => gen_repeat_copy(
            args.seed,
            args.count,
            args.len_range,
            (cfg.task.min_repeats, cfg.task.max_repeats),
            vocab,
        )?,
    };
    let spec = match args.split {
        SplitKind::Full => SplitSpec::Full,
        SplitKind::LongestK => SplitSpec::LongestK(args.k),
        SplitKind::ConcatLongestK => {
            link_segments(args.seed, &mut corpus, (cfg.task.chain_min, cfg.task.chain_max))?;
            SplitSpec::ConcatThenLongestK(args.k)
        }
    };
    Ok(spec.apply(&corpus)?)
}

pub fn cmd_gen_data(cfg: &RunConfig, args: &GenDataArgs) -> Result<usize> {
    let corpus = generate(cfg, args)?;
    write_corpus(&args.out, &corpus)?;
    Ok(corpus.len())
}

/// Train, dev, long and very-long corpora in `dir`, all from the config.
pub fn cmd_gen_suite(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let t = &cfg.task;
    let base = |count, seed_offset: u64, name: &str| {
        let mut a = GenDataArgs::from_config(cfg, count, dir.join(name));
        a.seed = cfg.seed.wrapping_add(seed_offset);
        a
    };
    let jobs = [
        base(t.train_count, 0, "train.txt"),
        base(t.dev_count, 1, "dev.txt"),
        GenDataArgs {
            len_range: (t.min_len, t.long_max_len),
            split: SplitKind::LongestK,
            ..base(t.long_pool, 2, "long.txt")
        },
        GenDataArgs {
            len_range: (t.very_long_min_len, t.very_long_max_len),
            split: SplitKind::ConcatLongestK,
            ..base(t.very_long_pool, 3, "very-long.txt")
        },
    ];
    let mut out = Vec::new();
    for job in &jobs {
        cmd_gen_data(cfg, job)?;
        out.push(job.out.clone());
    }
    Ok(out)
}

/// Pins the input kind and width in `cfg` to what the corpus holds.
fn resolve_input(cfg: &mut RunConfig, corpus: &[Utterance]) -> Result<()> {
    match corpus.first().and_then(|u| u.features.as_ref()) {
        Some(f) => {
            cfg.model.input = InputKind::Features;
            cfg.model.input_dim = f.cols();
        }
        None => {
            cfg.model.input = InputKind::Tokens;
            cfg.model.input_dim = 0;
        }
    }
    let vocab = cfg.vocab()?;
    if let Some(u) = corpus.iter().find(|u| u.tokens.iter().any(|&t| t > vocab.sep())) {
        return Err(CliError::Data(format!(
            "utterance {} has tokens outside the {} symbols and separator",
            u.id,
            vocab.symbols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub parameters: usize,
    pub steps: u64,
    pub epochs: usize,
    pub final_dev_loss: Option<f64>,
    pub final_dev_accuracy: Option<f64>,
}

struct RunObserver<T> {
    log: MetricsLog<BufWriter<File>>,
    diverged: Option<Checkpoint<T>>,
    fingerprint: u64,
}

impl<T: Real> TrainObserver<T> for RunObserver<T> {
    fn on_step(&mut self, r: &cntm_core::trainer::StepRecord) {
        TrainObserver::<T>::on_step(&mut self.log, r);
    }

    fn on_epoch(&mut self, r: &cntm_core::trainer::EpochRecord) {
        TrainObserver::<T>::on_epoch(&mut self.log, r);
    }

    fn on_divergence(&mut self, store: &ParamStore<T>, step: u64, _error: &cntm_core::Error) {
        self.diverged = Some(Checkpoint::from_store(store, step, f64::NAN, self.fingerprint));
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, train_set: &[Utterance], dev_set: &[Utterance], out: &Path) -> Result<TrainSummary> {
    let vocab = cfg.vocab()?;
    let (model, mut store) = Model::new::<T>(cfg.model_config()?, cfg.seed)?;
    let tcfg = cfg.train_config()?;
    let train_ex: Vec<Example<T>> = examples(train_set, vocab);
    let dev_ex: Vec<Example<T>> = examples(dev_set, vocab);
    let log_path = out.join(LOG_FILE);
    let log_file = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let fingerprint = model.fingerprint(&store);
    let mut obs = RunObserver {
        log: MetricsLog::new(BufWriter::new(log_file)),
        diverged: None,
        fingerprint,
    };
    log::info!("{} parameters, memory {}", store.num_scalars(), cfg.model.memory.as_str());
    let result = if cfg.train.threads > 1 {
        train(&model, &mut store, &train_ex, &dev_ex, &tcfg, &Pool::new(cfg.train.threads)?, &mut obs)
    } else {
        train(&model, &mut store, &train_ex, &dev_ex, &tcfg, &cntm_core::trainer::Serial, &mut obs)
    };
    let precision = cfg.train.precision;
    if let Some(c) = obs.diverged.take() {
        container::save(&out.join(DIVERGED_CHECKPOINT), &c, precision)?;
    }
    obs.log.finish().map_err(|e| CliError::io(&log_path, e))?;
    let outcome: TrainOutcome<T> = result?;
    container::save(&out.join(FINAL_CHECKPOINT), &outcome.final_checkpoint, precision)?;
    for (i, c) in outcome.best.iter().enumerate() {
        container::save(&out.join(format!("best-{i}.ckpt")), c, precision)?;
    }
    let last = outcome.epochs.last();
    Ok(TrainSummary {
        parameters: store.num_scalars(),
        steps: outcome.steps.last().map_or(0, |s| s.step),
        epochs: outcome.epochs.len(),
        final_dev_loss: last.map(|e| e.dev.loss),
        final_dev_accuracy: last.map(|e| e.dev.accuracy),
    })
}

/// Train on the corpora and write the config, log and checkpoints to `out`.
pub fn cmd_train(cfg: &RunConfig, train_path: &Path, dev_path: &Path, out: &Path) -> Result<TrainSummary> {
    let train_set = read_corpus(train_path)?;
    let dev_set = read_corpus(dev_path)?;
    let mut cfg = cfg.clone();
    resolve_input(&mut cfg, &train_set)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.dump()).map_err(|e| CliError::io(&cfg_path, e))?;
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &train_set, &dev_set, out),
        Precision::F64 => train_typed::<f64>(&cfg, &train_set, &dev_set, out),
    }
}

/// Number of trainable scalars the config builds.
pub fn parameter_count(cfg: &RunConfig) -> Result<usize> {
    let (_, store) = Model::new::<f32>(cfg.model_config()?, cfg.seed)?;
    Ok(store.num_scalars())
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub run: PathBuf,
    /// Defaults to the run's final checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// (split name, corpus path).
    pub splits: Vec<(String, PathBuf)>,
    pub beam: Option<usize>,
    pub name: String,
    /// Structured report of a baseline system to compare against.
    pub baseline: Option<PathBuf>,
    /// Where to write this system's structured report.
    pub report_out: Option<PathBuf>,
    /// Directory for per-split hypothesis corpora.
    pub hyp_dir: Option<PathBuf>,
}

pub fn load_run_config(run: &Path) -> Result<RunConfig> {
    RunConfig::load(&run.join(CONFIG_FILE), RunConfig::full())
}

/// Decode every utterance of `corpus` with the model in `store`.
pub fn decode_corpus<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    corpus: &[Utterance],
    cfg: &RunConfig,
    beam: usize,
) -> Result<Vec<(String, Vec<usize>)>> {
    let vocab = cfg.vocab()?;
    let ex: Vec<Example<T>> = examples(corpus, vocab);
    let opts = DecodeOptions {
        max_len: (cfg.eval.max_len > 0).then_some(cfg.eval.max_len),
    };
    let decode = |e: &Example<T>| -> Result<(String, Vec<usize>)> {
        let hyp = if beam <= 1 {
            model.greedy_decode_with(store, e.input.as_input(), &opts)?
        } else {
            model
                .beam_decode_with(store, e.input.as_input(), beam, &opts)?
                .into_iter()
                .next()
                .ok_or_else(|| CliError::Numerical(format!("no hypothesis for {}", e.id)))?
        };
        Ok((e.id.clone(), hyp.tokens))
    };
    let results: Vec<Result<(String, Vec<usize>)>> = if cfg.train.threads > 1 {
        use cntm_core::trainer::Executor;
        Pool::new(cfg.train.threads)?.map(&ex, decode)
    } else {
        ex.iter().map(decode).collect()
    };
    results.into_iter().collect()
}

fn eval_typed<T: Real>(cfg: &RunConfig, args: &EvalArgs, ckpt: &Checkpoint<T>) -> Result<SystemScores> {
    let (model, mut store) = Model::new::<T>(cfg.model_config()?, cfg.seed)?;
    let fingerprint = model.fingerprint(&store);
    if ckpt.fingerprint != fingerprint {
        return Err(CliError::Data(format!(
            "checkpoint fingerprint {:016x} does not match the configured model {fingerprint:016x}",
            ckpt.fingerprint
        )));
    }
    ckpt.load_into(&mut store, fingerprint)?;
    let beam = args.beam.unwrap_or(cfg.eval.beam);
    let mut scores = SystemScores {
        name: args.name.clone(),
        ..SystemScores::default()
    };
    for (split, path) in &args.splits {
        let i = split_index(split)?;
        let corpus = read_corpus(path)?;
        let hyps = decode_corpus(&model, &store, &corpus, cfg, beam)?;
        if let Some(dir) = &args.hyp_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let hyp_corpus: Vec<Utterance> = hyps
                .iter()
                .filter(|(_, t)| !t.is_empty())
                .map(|(id, t)| Utterance::from_tokens(id.clone(), t.clone()))
                .collect();
            write_corpus(&dir.join(format!("{split}.txt")), &hyp_corpus)?;
        }
        let r = score_tokens(&corpus, &hyps)?;
        log::info!("{split}: {}", r.cell());
        scores.splits[i] = Some(r);
    }
    Ok(scores)
}

/// Decode and score the splits. Returns this system's scores and the
/// rendered table, which includes the baseline and reductions when given.
pub fn cmd_eval(args: &EvalArgs) -> Result<(SystemScores, String)> {
    if args.splits.is_empty() {
        return Err(CliError::Usage("no evaluation splits given".into()));
    }
    let cfg = load_run_config(&args.run)?;
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| args.run.join(FINAL_CHECKPOINT));
    let scores = match cfg.train.precision {
        Precision::F32 => eval_typed::<f32>(&cfg, args, &container::load(&ckpt_path)?.0)?,
        Precision::F64 => eval_typed::<f64>(&cfg, args, &container::load(&ckpt_path)?.0)?,
    };
    if let Some(p) = &args.report_out {
        std::fs::write(p, to_structured(&scores)).map_err(|e| CliError::io(p, e))?;
    }
    let mut rows = Vec::new();
    let mut baseline_name = None;
    if let Some(p) = &args.baseline {
        let base = read_report(p)?;
        baseline_name = Some(base.name.clone());
        rows.push(base);
    }
    rows.push(scores.clone());
    let table = render_table(&rows, baseline_name.as_deref())?;
    Ok((scores, table))
}

pub fn read_report(path: &Path) -> Result<SystemScores> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    crate::report::parse_structured(&text).map_err(|e| CliError::data(path, e))
}

/// Combine structured reports into one table.
pub fn cmd_report(reports: &[PathBuf], baseline: Option<&str>) -> Result<String> {
    let rows = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    render_table(&rows, baseline)
}

/// Run the gradient battery (or one suite). `fault` corrupts the first
/// analytic coordinate of every check, for testing the checker.
pub fn cmd_gradcheck(only: Option<&str>, fault: Option<f64>, seed: u64) -> Result<Vec<GradReport>> {
    let mut opts = BatteryOptions {
        seed,
        ..BatteryOptions::default()
    };
    opts.check.fault = fault;
    Ok(match only {
        Some(name) => run_suite(name, &opts)?,
        None => run_all(&opts)?,
    })
}

pub fn render_grad_reports(reports: &[GradReport]) -> String {
    let mut out = String::from("check\tmax_rel_error\tmax_abs_error\tresult\n");
    for r in reports {
        out.push_str(&format!(
            "{}\t{:.3e}\t{:.3e}\t{}{}\n",
            r.op_name,
            r.max_rel_error,
            r.max_abs_error,
            if r.passed { "PASS" } else { "FAIL" },
            r.diagnostic.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
        ));
    }
    out
}
