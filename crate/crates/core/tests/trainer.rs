use approx::assert_abs_diff_eq;
use cntm_core::model::{InputKind, Model, ModelConfig};
use cntm_core::numerics::{Graph, ParamStore, Tensor};
use cntm_core::tasks::{gen_copy, Vocab};
use cntm_core::trainer::{
    adam_step, checkpoint_average, clip_global_norm, examples, lr_at, select_best_k, token_batches, train,
    AdamConfig, AdamState, BestK, Checkpoint, DevMetric, Example, Serial, StepRecord, TrainConfig, TrainObserver,
};
use cntm_core::Error;
use proptest::prelude::*;

fn scalar_store(x: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.add("x", Tensor::vector(vec![x]));
    s
}

fn checkpoint(values: &[f64], fingerprint: u64) -> Checkpoint<f64> {
    Checkpoint {
        names: vec!["a".into(), "b".into()],
        tensors: vec![Tensor::vector(values.to_vec()), Tensor::vector(vec![values[0] * 3.0])],
        step: 0,
        dev_score: 0.0,
        fingerprint,
    }
}

fn toy_model(vocab: Vocab, seed: u64) -> (Model, ParamStore<f64>) {
    let cfg = ModelConfig::toy(InputKind::Tokens, vocab.size(), vocab.size(), vocab.specials());
    Model::new::<f64>(cfg, seed).unwrap()
}

#[derive(Default)]
struct Steps(Vec<StepRecord>);

impl TrainObserver<f64> for Steps {
    fn on_step(&mut self, r: &StepRecord) {
        self.0.push(r.clone());
    }
}

#[test]
fn schedule_examples() {
    let (peak, w) = (0.002, 15000);
    assert_eq!(lr_at(w, peak, w).unwrap(), peak);
    assert_abs_diff_eq!(lr_at(w / 4, peak, w).unwrap(), peak / 4.0, epsilon = 1e-15);
    assert_abs_diff_eq!(lr_at(4 * w, peak, w).unwrap(), peak / 2.0, epsilon = 1e-15);
    assert!(matches!(lr_at(0, peak, w), Err(Error::Domain(_))));
    assert!(lr_at(1, peak, 0).is_err());
}

#[test]
fn schedule_is_continuous_and_peaks_at_warmup() {
    let (peak, w) = (1.0, 100);
    let lrs: Vec<f64> = (1..=1000).map(|s| lr_at(s, peak, w).unwrap()).collect();
    let top = lrs.iter().cloned().fold(0.0, f64::max);
    assert_eq!(top, lrs[w as usize - 1]);
    for pair in lrs.windows(2) {
        assert!((pair[1] - pair[0]).abs() < 0.011);
    }
}

#[test]
fn adam_single_scalar_by_hand() {
    let cfg = AdamConfig::default();
    assert_eq!((cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay), (0.9, 0.999, 1e-8, 1e-6));
    let (x0, lr) = (0.5, 0.01);
    let mut store = scalar_store(x0);
    let mut state = AdamState::new(&store);
    adam_step(&mut store, &[Tensor::vector(vec![1.0])], &mut state, lr, &cfg).unwrap();
    // m = 0.1, v = 0.001; bias correction makes both unit
    let m_hat: f64 = 0.1 / (1.0 - 0.9);
    let v_hat: f64 = 0.001 / (1.0 - 0.999);
    let want = x0 - lr * m_hat / (v_hat.sqrt() + 1e-8) - lr * 1e-6 * x0;
    assert_abs_diff_eq!(store.tensors()[0].data()[0], want, epsilon = 1e-15);
    assert_eq!(state.t, 1);
    assert_abs_diff_eq!(state.m[0].data()[0], 0.1, epsilon = 1e-15);
    assert_abs_diff_eq!(state.v[0].data()[0], 0.001, epsilon = 1e-15);
}

#[test]
fn adam_zero_gradient_without_decay_is_identity() {
    let cfg = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut store = scalar_store(1.25);
    let mut state = AdamState::new(&store);
    for _ in 0..5 {
        adam_step(&mut store, &[Tensor::vector(vec![0.0])], &mut state, 0.1, &cfg).unwrap();
    }
    assert_eq!(store.tensors()[0].data()[0], 1.25);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut store = scalar_store(1.0);
    let mut state = AdamState::new(&store);
    let err = adam_step(&mut store, &[Tensor::vector(vec![f64::NAN])], &mut state, 0.1, &AdamConfig::default());
    assert!(matches!(err, Err(Error::Numerical(_))));
    assert_eq!(store.tensors()[0].data()[0], 1.0);
    assert_eq!(state.t, 0);
}

#[test]
fn clipping_scales_to_the_bound() {
    let mut grads = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
    assert_eq!(clip_global_norm(&mut grads, 1.0), 5.0);
    assert_abs_diff_eq!(grads[0].data()[0], 0.6, epsilon = 1e-15);
    assert_abs_diff_eq!(grads[1].data()[0], 0.8, epsilon = 1e-15);
    let mut small = vec![Tensor::vector(vec![0.3, 0.4])];
    assert_abs_diff_eq!(clip_global_norm(&mut small, 1.0), 0.5, epsilon = 1e-15);
    assert_eq!(small[0].data(), &[0.3, 0.4]);
}

#[test]
fn averaging_examples() {
    let avg = checkpoint_average(&[checkpoint(&[0.0], 7), checkpoint(&[2.0], 7)]).unwrap();
    assert_eq!(avg.tensors[0].data(), &[1.0]);
    assert_eq!(avg.tensors[1].data(), &[3.0]);

    let c = checkpoint(&[0.1, -0.7, 1e-3], 7);
    let single = checkpoint_average(std::slice::from_ref(&c)).unwrap();
    assert_eq!(single.tensors, c.tensors);
    let copies = checkpoint_average(&[c.clone(), c.clone(), c.clone()]).unwrap();
    assert_eq!(copies.tensors, c.tensors);

    assert!(checkpoint_average::<f64>(&[]).is_err());
    assert!(checkpoint_average(&[checkpoint(&[0.0], 7), checkpoint(&[2.0], 8)]).is_err());
}

#[test]
fn checkpoint_round_trip_and_fingerprint_guard() {
    let mut store = scalar_store(3.0);
    let c = Checkpoint::from_store(&store, 12, 0.5, 99);
    store.tensors_mut()[0].data_mut()[0] = -1.0;
    c.load_into(&mut store, 99).unwrap();
    assert_eq!(store.tensors()[0].data()[0], 3.0);
    assert!(c.load_into(&mut store, 100).is_err());
}

#[test]
fn best_k_examples() {
    let mut picked = select_best_k(&[3.0, 1.0, 2.0], 2, DevMetric::Loss);
    picked.sort();
    assert_eq!(picked, vec![1, 2]);
    let mut picked = select_best_k(&[0.3, 0.1, 0.2], 2, DevMetric::Accuracy);
    picked.sort();
    assert_eq!(picked, vec![0, 2]);
    assert_eq!(select_best_k(&[1.0, 2.0], 5, DevMetric::Loss).len(), 2);

    let mut best = BestK::new(2, DevMetric::Loss);
    for (step, score) in [(1, 3.0), (2, 1.0), (3, 2.0), (4, 5.0)] {
        let mut c = checkpoint(&[step as f64], 1);
        c.step = step;
        c.dev_score = score;
        best.offer(c);
    }
    let mut steps: Vec<u64> = best.kept().iter().map(|c| c.step).collect();
    steps.sort();
    assert_eq!(steps, vec![2, 3]);
}

#[test]
fn batches_cover_in_order() {
    let lens = [4, 9, 1, 1, 6, 3];
    let b = token_batches(&lens, 8).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!(b.iter().map(|r| r.len()).sum::<usize>(), lens.len());
    assert!(token_batches(&lens, 0).is_err());
    assert!(token_batches(&[], 8).unwrap().is_empty());
    assert_eq!(token_batches(&[100], 8).unwrap(), vec![0..1]);
}

#[test]
fn config_validation() {
    let p = TrainConfig::full();
    assert_eq!((p.peak_lr, p.warmup_steps, p.keep_best_k), (0.002, 15000, 10));
    assert!(p.validate().is_ok());
    assert!(TrainConfig { warmup_steps: 0, ..p.clone() }.validate().is_err());
    assert!(TrainConfig { peak_lr: -1.0, ..p.clone() }.validate().is_err());
    assert!(TrainConfig { batch_bins: 0, ..p }.validate().is_err());
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        peak_lr: 0.002,
        warmup_steps: 10,
        epochs: 1,
        batch_bins: 12,
        keep_best_k: 2,
        seed,
        ..TrainConfig::full()
    }
}

#[test]
fn one_epoch_logs_one_step_per_batch() {
    let vocab = Vocab::new(4).unwrap();
    let corpus = gen_copy(5, 10, (1, 6), vocab).unwrap();
    let total: usize = corpus.iter().map(|u| u.tokens.len()).sum();
    let train_set: Vec<Example<f64>> = examples(&corpus, vocab);
    let (model, mut store) = toy_model(vocab, 1);
    let cfg = quick_config(3);
    let mut obs = Steps::default();
    let out = train(&model, &mut store, &train_set, &train_set[..2], &cfg, &Serial, &mut obs).unwrap();
    let expected = total.div_ceil(cfg.batch_bins).min(corpus.len());
    assert_eq!(out.steps.len(), expected);
    assert_eq!(obs.0.len(), expected);
    assert_eq!(out.steps.iter().map(|s| s.batch_size).sum::<usize>(), 10);
    assert_eq!(out.epochs.len(), 1);
    for (i, s) in out.steps.iter().enumerate() {
        assert_eq!(s.step, i as u64 + 1);
        assert_eq!(s.lr, lr_at(s.step, cfg.peak_lr, cfg.warmup_steps).unwrap());
    }
}

#[test]
fn training_is_deterministic() {
    let vocab = Vocab::new(4).unwrap();
    let corpus = gen_copy(6, 8, (1, 5), vocab).unwrap();
    let set: Vec<Example<f64>> = examples(&corpus, vocab);
    let cfg = TrainConfig { epochs: 2, ..quick_config(9) };
    let run = || {
        let (model, mut store) = toy_model(vocab, 2);
        let out = train(&model, &mut store, &set, &set[..3], &cfg, &Serial, &mut ()).unwrap();
        (out.steps.iter().map(|s| s.train_loss.to_bits()).collect::<Vec<_>>(), store)
    };
    let (l1, s1) = run();
    let (l2, s2) = run();
    assert_eq!(l1, l2);
    assert_eq!(s1.tensors(), s2.tensors());
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let vocab = Vocab::new(4).unwrap();
    let corpus = gen_copy(7, 4, (10, 14), vocab).unwrap();
    let batch: Vec<Example<f64>> = examples(&corpus, vocab);
    let (model, mut store) = toy_model(vocab, 3);
    let cfg = AdamConfig::default();
    let mut state = AdamState::new(&store);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let mut grads: Vec<Tensor<f64>> = store.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut loss = 0.0;
        for ex in &batch {
            let mut g = Graph::new(&store);
            let l = model.loss(&mut g, ex.input.as_input(), &ex.target).unwrap();
            loss += g.value(l.total).item();
            let gr = g.backward(l.total).unwrap();
            for (acc, p) in grads.iter_mut().zip(g.param_grads(&gr)) {
                if let Some(p) = p {
                    for (a, x) in acc.data_mut().iter_mut().zip(p.data()) {
                        *a += x / batch.len() as f64;
                    }
                }
            }
        }
        losses.push(loss / batch.len() as f64);
        adam_step(&mut store, &grads, &mut state, 1e-3, &cfg).unwrap();
    }
    for pair in losses.windows(2) {
        assert!(pair[1] < pair[0], "{losses:?}");
    }
}

proptest! {
    #[test]
    fn averaging_is_permutation_invariant(
        values in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6),
        rot in 0usize..6,
    ) {
        let cs: Vec<Checkpoint<f64>> = values.iter().map(|v| checkpoint(v, 1)).collect();
        let mut rotated = cs.clone();
        rotated.rotate_left(rot % cs.len());
        let mut reversed = cs.clone();
        reversed.reverse();
        let a = checkpoint_average(&cs).unwrap();
        for other in [checkpoint_average(&rotated).unwrap(), checkpoint_average(&reversed).unwrap()] {
            for (x, y) in a.tensors.iter().zip(&other.tensors) {
                for (p, q) in x.data().iter().zip(y.data()) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn schedule_never_exceeds_peak(step in 1u64..1_000_000, warmup in 1u64..50_000) {
        let lr = lr_at(step, 0.002, warmup).unwrap();
        prop_assert!(lr > 0.0 && lr <= 0.002);
    }
}
