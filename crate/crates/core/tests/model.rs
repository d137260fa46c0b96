use approx::assert_abs_diff_eq;
use cntm_core::gradcheck::battery::{run_suite, toy_model_config, BatteryOptions};
use cntm_core::model::{
    subsampled_len, DecodeOptions, Encoder, EncoderConfig, EncoderInput, InputKind, MemoryKind, Model, ModelConfig,
    SpecialTokens,
};
use cntm_core::numerics::{Graph, ParamStore, Tensor};
use cntm_core::rng::substream;
use cntm_core::Error;
use proptest::prelude::*;
use rand::Rng;

/// Three symbols plus blank, sos and eos.
fn three_symbol_config(memory: MemoryKind) -> ModelConfig {
    let specials = SpecialTokens {
        blank: 3,
        pad: 3,
        sos: 4,
        eos: 5,
    };
    let mut cfg = toy_model_config(memory);
    cfg.encoder.input_dim = 6;
    cfg.decoder.vocab_size = 6;
    cfg.decoder.specials = specials;
    cfg.objective.blank = 3;
    cfg
}

fn features(seed: u64, rows: usize, cols: usize) -> Tensor<f64> {
    let mut rng = substream(seed, "features");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Two stride-2, kernel-3 valid convolutions applied one after the other.
fn conv_len(frames: usize) -> usize {
    let once = |t: usize| (t - 3) / 2 + 1;
    once(once(frames))
}

fn feature_encoder(seed: u64) -> (Encoder, ParamStore<f64>) {
    let cfg = EncoderConfig {
        input_kind: InputKind::Features,
        input_dim: 8,
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        ff_dim: 16,
        conv_kernel: 3,
        subsample: true,
        subsample_channels: 2,
    };
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, cfg, &mut substream(seed, "enc")).unwrap();
    (enc, store)
}

#[test]
fn subsampling_examples() {
    assert_eq!(subsampled_len(11).unwrap(), 2);
    assert_eq!(subsampled_len(7).unwrap(), 1);
    assert!(matches!(subsampled_len(6), Err(Error::SequenceTooShort { len: 6, min: 7 })));
    for t in 7..200 {
        assert_eq!(subsampled_len(t).unwrap(), conv_len(t), "T = {t}");
    }
}

#[test]
fn subsampling_encoder_output_length() {
    let (enc, store) = feature_encoder(1);
    for t in [7, 8, 11, 23] {
        let mut g = Graph::new(&store);
        let x = features(t as u64, t, 8);
        let h = enc.forward(&mut g, EncoderInput::Features(&x)).unwrap();
        assert_eq!(g.shape(h), &[subsampled_len(t).unwrap(), 8]);
    }
    let mut g = Graph::new(&store);
    let short = features(0, 6, 8);
    assert!(matches!(
        enc.forward(&mut g, EncoderInput::Features(&short)),
        Err(Error::SequenceTooShort { .. })
    ));
}

#[test]
fn token_input_keeps_length() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 2).unwrap();
    let mut g = Graph::new(&store);
    let (h, o) = model.forward(&mut g, EncoderInput::Tokens(&[0, 1, 2, 2, 1])).unwrap();
    assert_eq!(g.shape(h), &[5, 8]);
    assert_eq!(g.shape(o), &[5, 8]);
}

#[test]
fn encoder_is_order_sensitive() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::None), 3).unwrap();
    let run = |tokens: &[usize]| {
        let mut g = Graph::new(&store);
        let h = model.encoder().forward(&mut g, EncoderInput::Tokens(tokens)).unwrap();
        g.value(h).clone()
    };
    let a = run(&[0, 1, 2, 0]);
    let b = run(&[2, 0, 0, 1]);
    // same multiset of tokens, so only positions can tell them apart
    let mut ra: Vec<Vec<u64>> = (0..4).map(|i| a.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    let mut rb: Vec<Vec<u64>> = (0..4).map(|i| b.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    ra.sort();
    rb.sort();
    assert_ne!(ra, rb);
}

#[test]
fn decoder_is_causal() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 4).unwrap();
    let logits = |target: &[usize]| {
        let mut g = Graph::new(&store);
        let (_, o) = model.forward(&mut g, EncoderInput::Tokens(&[0, 1, 2, 1, 0, 2])).unwrap();
        let l = model.decoder().decode_train(&mut g, o, target).unwrap();
        g.value(l).clone()
    };
    let base = logits(&[0, 1, 2, 0]);
    assert_eq!(base.shape(), &[5, 6]);
    for j in 0..4 {
        let mut changed = vec![0, 1, 2, 0];
        changed[j] = (changed[j] + 1) % 3;
        let out = logits(&changed);
        for i in 0..=j {
            assert_eq!(out.row(i), base.row(i), "row {i} saw a change at {j}");
        }
        assert_ne!(out.row(j + 1), base.row(j + 1));
    }
}

#[test]
fn decoder_rejects_reserved_and_long_targets() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::None), 4).unwrap();
    let mut g = Graph::new(&store);
    let (_, o) = model.forward(&mut g, EncoderInput::Tokens(&[0, 1])).unwrap();
    assert!(matches!(model.decoder().decode_train(&mut g, o, &[0, 4]), Err(Error::Domain(_))));
    assert!(matches!(model.decoder().decode_train(&mut g, o, &[0; 17]), Err(Error::Domain(_))));
}

#[test]
fn model_is_causal_end_to_end() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 5).unwrap();
    let run = |tokens: &[usize]| {
        let mut g = Graph::new(&store);
        let (_, o) = model.forward(&mut g, EncoderInput::Tokens(tokens)).unwrap();
        g.value(o).clone()
    };
    // encoder self-attention is bidirectional; the bridge alone is causal
    let mut g = Graph::new(&store);
    let h = features(5, 6, 8);
    let hv = g.constant(h.clone());
    let o = model.bridge().unwrap().sequence(&mut g, hv).unwrap();
    let base = g.value(o).clone();
    let mut h2 = h.clone();
    h2.data_mut()[5 * 8] += 1.0;
    let mut g = Graph::new(&store);
    let hv = g.constant(h2);
    let o = model.bridge().unwrap().sequence(&mut g, hv).unwrap();
    for t in 0..5 {
        assert_eq!(g.value(o).row(t), base.row(t));
    }
    assert_ne!(run(&[0, 1, 2]), run(&[0, 1, 1]));
}

#[test]
fn no_memory_has_fewer_parameters() {
    let (_, with) = Model::new::<f32>(three_symbol_config(MemoryKind::Ntm), 6).unwrap();
    let (_, without) = Model::new::<f32>(three_symbol_config(MemoryKind::None), 6).unwrap();
    assert!(without.num_scalars() < with.num_scalars());
    assert!(without.iter().all(|(name, _)| !name.starts_with("bridge")));
}

#[test]
fn forced_eos_gives_empty_output() {
    let (model, mut store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 7).unwrap();
    let bias = store.find("decoder.output.bias").unwrap();
    store.get_mut(bias).data_mut()[5] = 1e3;
    let h = model.greedy_decode(&store, EncoderInput::Tokens(&[0, 1, 2])).unwrap();
    assert!(h.tokens.is_empty());
    assert!(!h.truncated);
    let beams = model.beam_decode(&store, EncoderInput::Tokens(&[0, 1, 2]), 4).unwrap();
    assert!(beams[0].tokens.is_empty());
}

#[test]
fn greedy_is_deterministic_and_capped() {
    let (model, mut store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 8).unwrap();
    let bias = store.find("decoder.output.bias").unwrap();
    store.get_mut(bias).data_mut()[1] = 1e3;
    let input = [0, 2, 1, 1];
    let a = model.greedy_decode(&store, EncoderInput::Tokens(&input)).unwrap();
    let b = model.greedy_decode(&store, EncoderInput::Tokens(&input)).unwrap();
    assert_eq!(a, b);
    assert!(a.truncated);
    assert_eq!(a.tokens, vec![1; 2 * 4 + 10]);
}

#[test]
fn beam_of_one_is_greedy() {
    for seed in 0..5 {
        let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), seed).unwrap();
        let mut rng = substream(seed, "beam1");
        let input: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let opts = DecodeOptions { max_len: Some(6) };
        let greedy = model.greedy_decode_with(&store, EncoderInput::Tokens(&input), &opts).unwrap();
        let beam = model.beam_decode_with(&store, EncoderInput::Tokens(&input), 1, &opts).unwrap();
        assert_eq!(beam[0].tokens, greedy.tokens);
        assert_abs_diff_eq!(beam[0].log_prob, greedy.log_prob, epsilon = 1e-12);
    }
}

#[test]
fn beam_rejects_zero_width() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::None), 1).unwrap();
    assert!(matches!(
        model.beam_decode(&store, EncoderInput::Tokens(&[0, 1]), 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn wide_beam_matches_exhaustive_search() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 9).unwrap();
    let input = [2, 0, 1, 1, 0];
    let eos = 5;
    let memory = {
        let mut g = Graph::new(&store);
        let (_, o) = model.forward(&mut g, EncoderInput::Tokens(&input)).unwrap();
        g.value(o).clone()
    };
    let next = |prefix: &[usize]| {
        let mut g = Graph::new(&store);
        let o = g.constant(memory.clone());
        let l = model.decoder().forward_prefix(&mut g, o, prefix).unwrap();
        log_softmax(g.value(l).row(prefix.len() - 1))
    };
    // (tokens, log-prob, scored steps)
    let mut all: Vec<(Vec<usize>, f64, usize)> = Vec::new();
    let first = next(&[4]);
    for t1 in 0..6 {
        if t1 == eos {
            all.push((vec![], first[t1], 1));
            continue;
        }
        let second = next(&[4, t1]);
        for t2 in 0..6 {
            let lp = first[t1] + second[t2];
            if t2 == eos {
                all.push((vec![t1], lp, 2));
            } else {
                all.push((vec![t1, t2], lp, 2));
            }
        }
    }
    all.sort_by(|a, b| (b.1 / b.2 as f64).partial_cmp(&(a.1 / a.2 as f64)).unwrap());

    let opts = DecodeOptions { max_len: Some(2) };
    let beams = model.beam_decode_with(&store, EncoderInput::Tokens(&input), 64, &opts).unwrap();
    assert_eq!(beams.len(), all.len());
    for (h, (tokens, lp, steps)) in beams.iter().zip(&all) {
        assert_eq!(&h.tokens, tokens);
        assert_abs_diff_eq!(h.log_prob, *lp, epsilon = 1e-9);
        assert_abs_diff_eq!(h.score, lp / *steps as f64, epsilon = 1e-9);
    }
    assert!(beams.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn loss_is_finite_and_positive() {
    for memory in [MemoryKind::Ntm, MemoryKind::None] {
        let (model, store) = Model::new::<f32>(three_symbol_config(memory), 10).unwrap();
        let mut g = Graph::new(&store);
        let lv = model.loss(&mut g, EncoderInput::Tokens(&[0, 1, 2, 2, 1, 0]), &[0, 1, 2]).unwrap();
        let total = g.value(lv.total).item();
        assert!(total.is_finite() && total > 0.0);
        assert_eq!(g.shape(lv.logits), &[4, 6]);
        let want = 0.3 * g.value(lv.ctc.unwrap()).item() + 0.7 * g.value(lv.attention).item();
        assert!((total - want).abs() < 1e-5);
    }
}

#[test]
fn loss_reports_infeasible_alignment() {
    let (model, store) = Model::new::<f64>(three_symbol_config(MemoryKind::Ntm), 11).unwrap();
    let mut g = Graph::new(&store);
    let err = model.loss(&mut g, EncoderInput::Tokens(&[0, 1]), &[0, 0, 1]).unwrap_err();
    assert!(matches!(err, Error::InfeasibleAlignment { frames: 2, required: 4 }));
}

#[test]
fn fingerprint_tracks_architecture() {
    let (a, sa) = Model::new::<f32>(three_symbol_config(MemoryKind::Ntm), 1).unwrap();
    let (b, sb) = Model::new::<f32>(three_symbol_config(MemoryKind::Ntm), 2).unwrap();
    let (c, sc) = Model::new::<f32>(three_symbol_config(MemoryKind::None), 1).unwrap();
    assert_eq!(a.fingerprint(&sa), b.fingerprint(&sb));
    assert_ne!(a.fingerprint(&sa), c.fingerprint(&sc));
    assert!("dnc".parse::<MemoryKind>().is_err());
}

#[test]
fn encoder_decoder_and_model_gradients() {
    for suite in ["encoder", "decoder", "model"] {
        for r in run_suite(suite, &BatteryOptions::default()).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn subsampled_len_formula(t in 7usize..5000) {
        let got = subsampled_len(t).unwrap();
        prop_assert_eq!(got, conv_len(t));
        prop_assert!(got >= 1 && 4 * got <= t);
    }

    #[test]
    fn shapes_for_random_configs(
        heads in 1usize..4,
        head_dim in 1usize..4,
        blocks in 1usize..3,
        kernel in prop::sample::select(vec![1usize, 3, 5]),
        frames in 1usize..12,
        target_len in 0usize..5,
        memory in prop::bool::ANY,
        seed in any::<u64>(),
    ) {
        let d = heads * head_dim;
        let mut cfg = three_symbol_config(if memory { MemoryKind::Ntm } else { MemoryKind::None });
        cfg.encoder.d_model = d;
        cfg.encoder.n_heads = heads;
        cfg.encoder.n_blocks = blocks;
        cfg.encoder.conv_kernel = kernel;
        cfg.decoder.d_model = d;
        cfg.decoder.n_heads = heads;
        cfg.decoder.n_blocks = blocks;
        let (model, store) = Model::new::<f32>(cfg, seed).unwrap();
        let mut rng = substream(seed, "shapes");
        let input: Vec<usize> = (0..frames).map(|_| rng.gen_range(0..6)).collect();
        let target: Vec<usize> = (0..target_len).map(|_| rng.gen_range(0..3)).collect();
        let mut g = Graph::new(&store);
        let (h, o) = model.forward(&mut g, EncoderInput::Tokens(&input)).unwrap();
        prop_assert_eq!(g.shape(h), &[frames, d]);
        prop_assert_eq!(g.shape(o), &[frames, d]);
        let logits = model.decoder().decode_train(&mut g, o, &target).unwrap();
        prop_assert_eq!(g.shape(logits), &[target_len + 1, 6]);
    }
}
