//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cntm::commands::{cmd_eval, cmd_gen_suite, cmd_gradcheck, cmd_train, EvalArgs};
use cntm::report::SystemScores;
use cntm::RunConfig;
use cntm_core::bridge::{Bridge, BridgeConfig, BridgeOrder};
use cntm_core::metrics::relative_reduction;
use cntm_core::model::{subsampled_len, InputKind, MemoryKind, Model, ModelConfig};
use cntm_core::ntm::{address, read, write, HeadEmissions, HeadKind, MemoryMatrix, NtmConfig, SharpenMode};
use cntm_core::numerics::{Graph, ParamStore, Tensor};
use cntm_core::objective::ctc_loss;
use cntm_core::rng::{substream, Rng as ChaRng};
use cntm_core::tasks::Vocab;
use cntm_core::trainer::{checkpoint_average, lr_at, Checkpoint};
use rand::Rng;

const ORACLE_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-4;
const CTC_TOL: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-6;
const COPY_ACCURACY: f64 = 99.0;
const REDUCTION_TOL: f64 = 0.05;
const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

mod oracle {
    //! Straight-line formulas, written independently of the library.

    fn softmax(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    pub struct Stages {
        pub content: Vec<f64>,
        pub gated: Vec<f64>,
        pub shifted: Vec<f64>,
        pub weights: Vec<f64>,
    }

    #[allow(clippy::too_many_arguments)]
    pub fn address(
        key: &[f64],
        beta: f64,
        gate: f64,
        shift: &[f64],
        gamma: f64,
        mem: &[Vec<f64>],
        prev: &[f64],
        shifts: &[i64],
        power: bool,
    ) -> Stages {
        let n = mem.len();
        let key_norm = key.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut sims = vec![0.0; n];
        for i in 0..n {
            let mut dot = 0.0;
            let mut row_sq = 0.0;
            for c in 0..key.len() {
                dot += key[c] * mem[i][c];
                row_sq += mem[i][c] * mem[i][c];
            }
            sims[i] = beta * dot / (key_norm * row_sq.sqrt() + 1e-8);
        }
        let content = softmax(&sims);
        let mut gated = vec![0.0; n];
        for i in 0..n {
            gated[i] = gate * content[i] + (1.0 - gate) * prev[i];
        }
        let mut shifted = vec![0.0; n];
        for i in 0..n {
            for (k, &d) in shifts.iter().enumerate() {
                let j = (i as i64 - d).rem_euclid(n as i64) as usize;
                shifted[i] += gated[j] * shift[k];
            }
        }
        let powered: Vec<f64> = shifted.iter().map(|x| x.powf(gamma)).collect();
        let weights = if power {
            let s: f64 = powered.iter().sum();
            powered.iter().map(|x| x / s).collect()
        } else {
            softmax(&powered)
        };
        Stages {
            content,
            gated,
            shifted,
            weights,
        }
    }

    pub fn read(mem: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; mem[0].len()];
        for (i, row) in mem.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                r[c] += w[i] * x;
            }
        }
        r
    }

    pub fn write(mem: &[Vec<f64>], w: &[f64], e: &[f64], a: &[f64]) -> Vec<Vec<f64>> {
        let mut out = mem.to_vec();
        for i in 0..mem.len() {
            for c in 0..mem[i].len() {
                out[i][c] = mem[i][c] * (1.0 - w[i] * e[c]) + w[i] * a[c];
            }
        }
        out
    }

    /// `−ln P(y | x)` by summing every frame-level path that collapses to `y`.
    pub fn ctc_nll(probs: &[Vec<f64>], y: &[usize], blank: usize) -> f64 {
        let (frames, classes) = (probs.len(), probs[0].len());
        let mut total = 0.0;
        for code in 0..classes.pow(frames as u32) {
            let mut path = Vec::with_capacity(frames);
            let mut c = code;
            for _ in 0..frames {
                path.push(c % classes);
                c /= classes;
            }
            let mut collapsed = Vec::new();
            let mut last = None;
            for &p in &path {
                if Some(p) != last && p != blank {
                    collapsed.push(p);
                }
                last = Some(p);
            }
            if collapsed == y {
                total += path.iter().enumerate().map(|(t, &p)| probs[t][p]).product::<f64>();
            }
        }
        -total.ln()
    }

    pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
        logits.chunks(classes).map(softmax).collect()
    }
}

fn simplex(rng: &mut ChaRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn random_rows(rng: &mut ChaRng, n: usize, w: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> MemoryMatrix<f64> {
    MemoryMatrix::new(rows.len(), rows[0].len(), rows.concat()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ntm_config(rows: usize, cols: usize, sharpen: SharpenMode) -> NtmConfig {
    NtmConfig {
        rows,
        cols,
        sharpen,
        ..NtmConfig::toy()
    }
}

fn addressing_oracle() -> Outcome {
    let mut rng = substream(101, "acceptance-address");
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.gen_range(2..=8);
        let w = rng.gen_range(1..=4);
        let mode = if trial % 2 == 0 { SharpenMode::Softmax } else { SharpenMode::Power };
        let cfg = ntm_config(n, w, mode);
        let rows = random_rows(&mut rng, n, w);
        let prev = simplex(&mut rng, n);
        let em = HeadEmissions {
            key: (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            beta: rng.gen_range(0.01..20.0),
            gate: rng.gen_range(0.01..0.99),
            shift: simplex(&mut rng, cfg.shifts.len()),
            gamma: rng.gen_range(1.0..5.0),
            erase: None,
            add: None,
        };
        let got = address(&em, &matrix(&rows), &prev, &cfg).unwrap();
        let want = oracle::address(
            &em.key,
            em.beta,
            em.gate,
            &em.shift,
            em.gamma,
            &rows,
            &prev,
            &cfg.shifts,
            mode == SharpenMode::Power,
        );
        for (a, b) in got.stages().into_iter().zip([&want.content, &want.gated, &want.shifted, &want.weights]) {
            worst = worst.max(max_diff(a, b));
        }
    }
    outcome(worst < ORACLE_TOL, format!("200 instances, max |diff| {worst:.2e} (tol {ORACLE_TOL:.0e})"))
}

fn read_write_oracle() -> Outcome {
    let mut rng = substream(102, "acceptance-memory");
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=8);
        let w = rng.gen_range(1..=4);
        let rows = random_rows(&mut rng, n, w);
        let mem = matrix(&rows);
        let weights = simplex(&mut rng, n);
        let e: Vec<f64> = (0..w).map(|_| rng.gen_range(0.01..0.99)).collect();
        let a: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(max_diff(&read(&mem, &weights).unwrap(), &oracle::read(&rows, &weights)));
        let got = write(&mem, &weights, &e, &a).unwrap();
        worst = worst.max(max_diff(got.tensor().data(), &oracle::write(&rows, &weights, &e, &a).concat()));
    }
    outcome(worst < ORACLE_TOL, format!("200 instances, max |diff| {worst:.2e} (tol {ORACLE_TOL:.0e})"))
}

fn gradient_battery() -> Outcome {
    let reports = cmd_gradcheck(None, None, 7).unwrap();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op_name.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && worst < GRAD_TOL,
        format!("{} checks, max rel error {worst:.2e} (tol {GRAD_TOL:.0e}), failed {failed:?}", reports.len()),
    )
}

fn ctc_exhaustive() -> Outcome {
    const BLANK: usize = 0;
    let mut rng = substream(104, "acceptance-ctc");
    let (mut cases, mut infeasible, mut mismatches) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for vocab in 1..=3usize {
        let classes = vocab + 1;
        for frames in 1..=4usize {
            for len in 0..=3u32 {
                for code in 0..vocab.pow(len) {
                    let y: Vec<usize> = (0..len).map(|i| 1 + code / vocab.pow(i) % vocab).collect();
                    let logits: Vec<f64> = (0..frames * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    let want = oracle::ctc_nll(&oracle::softmax_rows(&logits, classes), &y, BLANK);
                    let mut g = Graph::detached();
                    let x = g.constant(Tensor::matrix(frames, classes, logits).unwrap());
                    cases += 1;
                    match ctc_loss(&mut g, x, &y, BLANK) {
                        Ok(l) => worst = worst.max((g.value(l).data()[0] - want).abs()),
                        Err(_) if want.is_infinite() => infeasible += 1,
                        Err(_) => mismatches += 1,
                    }
                }
            }
        }
    }
    outcome(
        worst < CTC_TOL && mismatches == 0,
        format!("{cases} cases ({infeasible} infeasible), max |diff| {worst:.2e} (tol {CTC_TOL:.0e})"),
    )
}

fn is_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

fn simplex_fuzz() -> Outcome {
    let mut rng = substream(105, "acceptance-simplex");
    let mut bad = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(2..=32);
        let w = rng.gen_range(1..=8);
        let mode = if trial % 2 == 0 { SharpenMode::Softmax } else { SharpenMode::Power };
        let cfg = ntm_config(n, w, mode);
        let scale = [1.0, 10.0, 50.0][trial % 3];
        let raw: Vec<f64> = (0..HeadKind::Write.raw_size(w, 3)).map(|_| rng.gen_range(-scale..scale)).collect();
        let em = HeadEmissions::from_raw(&raw, HeadKind::Write, w, 3).unwrap();
        let rows = random_rows(&mut rng, n, w);
        let got = address(&em, &matrix(&rows), &simplex(&mut rng, n), &cfg).unwrap();
        bad += got.stages().iter().filter(|s| !is_simplex(s)).count();
    }
    let mut rollouts = 0;
    for seed in 0..8u64 {
        for (sharpen, order) in [
            (SharpenMode::Softmax, BridgeOrder::WriteFirst),
            (SharpenMode::Power, BridgeOrder::ReadFirst),
        ] {
            let cfg = BridgeConfig {
                d_model: 6,
                ntm: ntm_config(8, 4, sharpen),
                order,
            };
            let mut store = ParamStore::<f64>::new();
            let b = Bridge::new(&mut store, "bridge", cfg, &mut substream(seed, "acceptance-bridge")).unwrap();
            let mut frng = substream(seed, "acceptance-frames");
            let h = Tensor::matrix(64, 6, (0..64 * 6).map(|_| frng.gen_range(-3.0..3.0)).collect()).unwrap();
            let mut g = Graph::new(&store);
            let x = g.constant(h);
            let (_, traces) = b.sequence_traced(&mut g, x).unwrap();
            for trace in &traces {
                for av in trace.write.iter().chain(&trace.read) {
                    for v in [av.content, av.gated, av.shifted, av.weights] {
                        bad += usize::from(!is_simplex(g.value(v).data()));
                    }
                }
            }
            rollouts += 1;
        }
    }
    outcome(bad == 0, format!("1000 addressing trials, {rollouts} rollouts of 64 steps, {bad} violations"))
}

/// Token error rates of one trained system on full, long and very-long.
fn train_and_score(root: &Path, seed: u64, memory: MemoryKind) -> ([f64; 3], Duration) {
    let start = Instant::now();
    let mut cfg = RunConfig::toy();
    cfg.seed = seed;
    let data = root.join(format!("data-{seed}"));
    if !data.exists() {
        cmd_gen_suite(&cfg, &data).unwrap();
    }
    cfg.model.memory = memory;
    let run = root.join(format!("{}-{seed}", memory.as_str()));
    cmd_train(&cfg, &data.join("train.txt"), &data.join("dev.txt"), &run).unwrap();
    let args = EvalArgs {
        run,
        checkpoint: None,
        splits: ["full", "long", "very-long"]
            .iter()
            .zip(["dev.txt", "long.txt", "very-long.txt"])
            .map(|(s, f)| (s.to_string(), data.join(f)))
            .collect(),
        beam: None,
        name: memory.as_str().to_string(),
        baseline: None,
        report_out: None,
        hyp_dir: None,
    };
    let (scores, _): (SystemScores, _) = cmd_eval(&args).unwrap();
    (scores.splits.map(|s| s.unwrap().wer()), start.elapsed())
}

struct Experiment {
    /// Per seed: (memory, baseline) error rates.
    runs: Vec<([f64; 3], [f64; 3])>,
    /// Wall time of the first memory run.
    first: Duration,
    elapsed: Duration,
}

fn run_experiment() -> Experiment {
    let tmp = tempfile::TempDir::new().unwrap();
    let start = Instant::now();
    let mut first = None;
    let runs = SEEDS
        .iter()
        .map(|&s| {
            let (ntm, t) = train_and_score(tmp.path(), s, MemoryKind::Ntm);
            first.get_or_insert(t);
            let (none, _) = train_and_score(tmp.path(), s, MemoryKind::None);
            println!(
                "  seed {s}: ntm full/long/very-long {:.2}/{:.2}/{:.2}  none {:.2}/{:.2}/{:.2}",
                ntm[0], ntm[1], ntm[2], none[0], none[1], none[2]
            );
            (ntm, none)
        })
        .collect();
    Experiment {
        runs,
        first: first.unwrap(),
        elapsed: start.elapsed(),
    }
}

fn copy_learnability(exp: &Experiment) -> Outcome {
    let accuracy = 100.0 - exp.runs[0].0[0];
    outcome(
        accuracy >= COPY_ACCURACY && exp.first < Duration::from_secs(1800),
        format!(
            "seed {} held-out greedy accuracy {accuracy:.2}% (need {COPY_ACCURACY}%), trained in {:.0?}",
            SEEDS[0], exp.first
        ),
    )
}

fn length_generalization(exp: &Experiment) -> Outcome {
    let mean = |f: &dyn Fn(&([f64; 3], [f64; 3])) -> f64| exp.runs.iter().map(f).sum::<f64>() / exp.runs.len() as f64;
    let ntm_long = mean(&|r| r.0[1]);
    let ntm_vlong = mean(&|r| r.0[2]);
    let none_long = mean(&|r| r.1[1]);
    let none_vlong = mean(&|r| r.1[2]);
    let widening = exp.runs.iter().filter(|(m, b)| b[2] - m[2] >= b[1] - m[1]).count();
    let passed = ntm_long < none_long && ntm_vlong < none_vlong && widening >= 2;
    outcome(
        passed && exp.elapsed < Duration::from_secs(2 * 3600),
        format!(
            "mean TER long {ntm_long:.2} vs {none_long:.2}, very-long {ntm_vlong:.2} vs {none_vlong:.2}, \
             gap widens in {widening}/3 seeds, {:.0?}",
            exp.elapsed
        ),
    )
}

fn reduction_formula() -> Outcome {
    let a = relative_reduction(9.3, 3.9).unwrap();
    let b = relative_reduction(14.7, 10.8).unwrap();
    outcome(
        (a - 58.1).abs() <= REDUCTION_TOL && (b - 26.5).abs() <= REDUCTION_TOL,
        format!("{a:.3}% and {b:.3}%"),
    )
}

fn subsampling_formula() -> Outcome {
    let examples = subsampled_len(11).unwrap() == 2 && subsampled_len(7).unwrap() == 1;
    let bad: Vec<usize> = (7..=200).filter(|&t| subsampled_len(t).unwrap() != ((t - 1) / 2 - 1) / 2).collect();
    outcome(examples && bad.is_empty(), format!("11→2, 7→1, formula mismatches {bad:?}"))
}

fn schedule_and_averaging() -> Outcome {
    let exact = [(0.002, 15000), (0.002, 200), (1e-3, 1), (0.0123, 777)]
        .iter()
        .all(|&(peak, w)| lr_at(w, peak, w).unwrap() == peak);
    let vocab = Vocab::new(16).unwrap();
    let cfg = ModelConfig::toy(InputKind::Tokens, vocab.size(), vocab.size(), vocab.specials());
    let (model, store) = Model::new::<f64>(cfg, 5).unwrap();
    let c = Checkpoint::from_store(&store, 10, 0.5, model.fingerprint(&store));
    let avg = checkpoint_average(&[c.clone(), c.clone(), c.clone()]).unwrap();
    let bits = |c: &Checkpoint<f64>| -> Vec<u64> {
        c.tensors.iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect()
    };
    let identical = bits(&avg) == bits(&c) && avg.names == c.names;
    outcome(
        exact && identical,
        format!("lr(warmup) == peak: {exact}, average of 3 identical checkpoints bit-identical: {identical}"),
    )
}

fn report(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let passed = o.passed && elapsed < limit;
    println!(
        "criterion {n:>2} {name:<28} {}  {} [{elapsed:.1?}]",
        if passed { "PASS" } else { "FAIL" },
        o.detail
    );
    passed
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut results = vec![
        report(1, "addressing oracle", secs(10), addressing_oracle),
        report(2, "read/write oracle", secs(10), read_write_oracle),
        report(3, "gradient battery", secs(300), gradient_battery),
        report(4, "ctc exhaustive", secs(60), ctc_exhaustive),
        report(5, "simplex invariants", secs(60), simplex_fuzz),
    ];
    println!("  training ntm and none on seeds {SEEDS:?}");
    let exp = run_experiment();
    results.push(report(6, "copy learnability", secs(1800), || copy_learnability(&exp)));
    results.push(report(7, "length generalization", secs(7200), || length_generalization(&exp)));
    results.push(report(8, "relative reduction", secs(1), reduction_formula));
    results.push(report(9, "subsampling length", secs(1), subsampling_formula));
    results.push(report(10, "schedule and averaging", secs(1), schedule_and_averaging));
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
