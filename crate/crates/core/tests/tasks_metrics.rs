use std::collections::{BTreeMap, HashMap};

use approx::assert_abs_diff_eq;
use cntm_core::metrics::{edit_distance, relative_reduction, render_tokens, score, score_report, Unit};
use cntm_core::tasks::{
    concat_segments, duration_stats, gen_copy, gen_repeat_copy, link_segments, longest_k, SplitSpec, Utterance,
    Vocab, FRAMES_PER_TOKEN,
};
use cntm_core::Error;
use proptest::prelude::*;

fn vocab() -> Vocab {
    Vocab::new(16).unwrap()
}

fn utt(id: &str, duration: f64, chain: Option<&str>) -> Utterance {
    let mut u = Utterance::from_tokens(id, vec![1; duration as usize]);
    u.segment_chain = chain.map(String::from);
    u
}

/// Memoized recursive Levenshtein distance.
fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = (go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
            .min(go(&a[1..], b, memo) + 1)
            .min(go(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut HashMap::new())
}

#[test]
fn vocab_layout() {
    let v = vocab();
    assert_eq!((v.sep(), v.blank(), v.pad(), v.sos(), v.eos(), v.marker()), (16, 17, 18, 19, 20, 21));
    assert_eq!(v.size(), 22);
    assert_eq!(v.encoder_tokens(&[3, 1]), vec![3, 3, 1, 1]);
    assert_eq!(v.encoder_tokens(&[3, 16, 3]), vec![3, 3, 21, 21, 21, 21]);
    assert!(Vocab::new(0).is_err());
}

#[test]
fn copy_corpus_contract() {
    let a = gen_copy(42, 500, (1, 8), vocab()).unwrap();
    assert_eq!(a, gen_copy(42, 500, (1, 8), vocab()).unwrap());
    assert_ne!(a, gen_copy(43, 500, (1, 8), vocab()).unwrap());
    for u in &a {
        assert!((1..=8).contains(&u.tokens.len()));
        assert!(u.tokens.iter().all(|&t| t < 16));
        assert_eq!(u.duration, u.tokens.len() as f64);
        assert_eq!(vocab().encoder_tokens(&u.tokens).len(), FRAMES_PER_TOKEN * u.tokens.len());
    }
    assert!(gen_copy(1, 1, (0, 3), vocab()).is_err());
    assert!(gen_copy(1, 1, (4, 3), vocab()).is_err());
    assert!(gen_copy(1, 1, (1, 513), vocab()).is_err());
}

#[test]
fn copy_lengths_are_uniform() {
    let corpus = gen_copy(7, 10_000, (1, 8), vocab()).unwrap();
    let (mean, min, max) = duration_stats(&corpus).unwrap();
    assert!((mean - 4.5).abs() < 0.05 * 4.5, "{mean}");
    assert_eq!((min, max), (1.0, 8.0));
}

#[test]
fn repeat_copy_contract() {
    let v = vocab();
    let single = gen_repeat_copy(3, 50, (2, 6), (1, 1), v).unwrap();
    assert!(single.iter().all(|u| !u.tokens.contains(&v.sep())));
    let corpus = gen_repeat_copy(3, 200, (2, 6), (1, 4), v).unwrap();
    assert_eq!(corpus, gen_repeat_copy(3, 200, (2, 6), (1, 4), v).unwrap());
    for u in &corpus {
        let parts: Vec<&[usize]> = u.tokens.split(|&t| t == v.sep()).collect();
        let (r, len) = (parts.len(), parts[0].len());
        assert!((1..=4).contains(&r) && (2..=6).contains(&len));
        assert!(parts.iter().all(|p| *p == parts[0]));
        assert_eq!(u.tokens.len(), r * len + r - 1);
    }
    assert!(gen_repeat_copy(3, 1, (1, 300), (1, 2), v).is_err());
}

#[test]
fn longest_k_examples() {
    let c = vec![utt("a", 3.0, None), utt("b", 1.0, None), utt("c", 2.0, None)];
    let ids = |v: Vec<Utterance>| v.into_iter().map(|u| u.id).collect::<Vec<_>>();
    assert_eq!(ids(longest_k(&c, 2).unwrap()), ["a", "c"]);
    assert_eq!(ids(longest_k(&c, 3).unwrap()), ["a", "c", "b"]);
    let tied = vec![utt("z", 2.0, None), utt("m", 2.0, None), utt("q", 5.0, None)];
    assert_eq!(ids(longest_k(&tied, 3).unwrap()), ["q", "m", "z"]);
    assert!(matches!(longest_k(&c, 4), Err(Error::Domain(_))));
}

#[test]
fn concat_examples() {
    let plain = vec![utt("a", 2.0, None), utt("b", 3.0, None)];
    assert_eq!(concat_segments(&plain).unwrap(), plain);

    let mut a = Utterance::from_tokens("a", vec![1, 2]);
    let mut b = Utterance::from_tokens("b", vec![3, 4, 5]);
    b.segment_chain = Some("a".into());
    a.duration = 2.0;
    let merged = concat_segments(&[a, b]).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].tokens, vec![1, 2, 3, 4, 5]);
    assert_eq!(merged[0].duration, 5.0);

    let cyclic = vec![utt("a", 1.0, Some("b")), utt("b", 1.0, Some("a"))];
    assert!(matches!(concat_segments(&cyclic), Err(Error::Data(_))));
    let dangling = vec![utt("a", 1.0, Some("x"))];
    assert!(matches!(concat_segments(&dangling), Err(Error::Data(_))));
}

#[test]
fn duration_stats_examples() {
    let c = vec![utt("a", 1.0, None), utt("b", 2.0, None), utt("c", 3.0, None)];
    assert_eq!(duration_stats(&c).unwrap(), (2.0, 1.0, 3.0));
    assert_eq!(duration_stats(&c[1..2]).unwrap(), (2.0, 2.0, 2.0));
    assert!(matches!(duration_stats(&[]), Err(Error::Domain(_))));
}

#[test]
fn very_long_split_is_longer_than_long_split() {
    let mut pool = gen_copy(5, 400, (8, 16), vocab()).unwrap();
    link_segments(5, &mut pool, (2, 4)).unwrap();
    let long = SplitSpec::LongestK(100).apply(&pool).unwrap();
    let very_long = SplitSpec::ConcatThenLongestK(100).apply(&pool).unwrap();
    let mean = |c: &[Utterance]| duration_stats(c).unwrap().0;
    assert!(mean(&very_long) > mean(&long));
    assert_eq!(SplitSpec::Full.apply(&pool).unwrap(), pool);
}

#[test]
fn edit_distance_examples() {
    let e = edit_distance(b"kitten", b"sitting");
    assert_eq!(e.distance, 3);
    assert_eq!(e.distance, e.substitutions + e.insertions + e.deletions);
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]).distance, 0);
    let e = edit_distance(&["a", "b", "c", "d"], &["a", "x", "c", "d"]);
    assert_eq!((e.distance, e.substitutions, e.insertions, e.deletions), (1, 1, 0, 0));
}

#[test]
fn score_examples() {
    let refs = [("u1", "a b c d"), ("u2", "x y")];
    assert_eq!(score(&refs, &refs, Unit::Word).unwrap().rate(), 0.0);
    let one_sub = [("u1", "a q c d")];
    assert_eq!(score(&refs[..1], &one_sub, Unit::Word).unwrap().rate(), 25.0);
    let swapped = [("u2", "x y"), ("u1", "a b c d")];
    assert_eq!(score(&refs, &swapped, Unit::Word).unwrap().errors(), 0);
    let wrong = [("u1", "a b c d"), ("u3", "x y")];
    assert!(matches!(score(&refs, &wrong, Unit::Word), Err(Error::Data(_))));

    let hyps = [("u1", "a b d"), ("u2", "x yy z")];
    let report = score_report(&refs, &hyps).unwrap();
    // per-utterance oracle: words 1 + 2 over 6, chars 1 + 2 over 6
    assert_abs_diff_eq!(report.wer(), 50.0, epsilon = 1e-12);
    assert_abs_diff_eq!(report.cer(), 50.0, epsilon = 1e-12);
    assert_eq!(report.cell(), "50.0 (50.0)");
    assert!("phone".parse::<Unit>().is_err());
    assert_eq!(render_tokens(&[3, 1, 4]), "3 1 4");
}

#[test]
fn relative_reduction_examples() {
    assert_abs_diff_eq!(relative_reduction(9.3, 3.9).unwrap(), 58.1, epsilon = 0.05);
    assert_abs_diff_eq!(relative_reduction(14.7, 10.8).unwrap(), 26.5, epsilon = 0.05);
    assert_eq!(relative_reduction(4.2, 4.2).unwrap(), 0.0);
    assert!(matches!(relative_reduction(0.0, 1.0), Err(Error::Domain(_))));
}

fn chained_corpus() -> impl Strategy<Value = Vec<Utterance>> {
    prop::collection::vec((1usize..6, prop::bool::ANY), 1..30).prop_map(|items| {
        items
            .iter()
            .enumerate()
            .map(|(i, &(len, link))| {
                let mut u = Utterance::from_tokens(format!("u{i:03}"), vec![i % 7; len]);
                if link && i > 0 {
                    u.segment_chain = Some(format!("u{:03}", i - 1));
                }
                u
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn edit_distance_matches_recursion(
        a in prop::collection::vec(0u8..3, 0..9),
        b in prop::collection::vec(0u8..3, 0..9),
    ) {
        let e = edit_distance(&a, &b);
        prop_assert_eq!(e.distance, levenshtein(&a, &b));
        prop_assert_eq!(e.distance, e.substitutions + e.insertions + e.deletions);
    }

    #[test]
    fn edit_distance_symmetry(
        a in prop::collection::vec(0u8..4, 0..12),
        b in prop::collection::vec(0u8..4, 0..12),
    ) {
        let (ab, ba) = (edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(ab.distance, ba.distance);
        prop_assert_eq!(ab.substitutions, ba.substitutions);
        prop_assert_eq!(ab.insertions, ba.deletions);
        prop_assert_eq!(ab.deletions, ba.insertions);
    }

    #[test]
    fn triangle_inequality(
        a in prop::collection::vec(0u8..4, 0..10),
        b in prop::collection::vec(0u8..4, 0..10),
        c in prop::collection::vec(0u8..4, 0..10),
    ) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).distance;
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }

    #[test]
    fn longest_k_dominates_excluded(
        durations in prop::collection::vec(1u32..50, 1..40),
        k_frac in 0.0f64..1.0,
    ) {
        let corpus: Vec<Utterance> = durations
            .iter()
            .enumerate()
            .map(|(i, &d)| utt(&format!("u{i:02}"), d as f64, None))
            .collect();
        let k = 1 + ((corpus.len() - 1) as f64 * k_frac) as usize;
        let kept = longest_k(&corpus, k).unwrap();
        prop_assert_eq!(kept.len(), k);
        prop_assert!(kept.windows(2).all(|w| w[0].duration >= w[1].duration));
        let floor = kept.last().unwrap().duration;
        let kept_ids: Vec<&str> = kept.iter().map(|u| u.id.as_str()).collect();
        for u in corpus.iter().filter(|u| !kept_ids.contains(&u.id.as_str())) {
            prop_assert!(u.duration <= floor);
        }
    }

    #[test]
    fn concat_merges_each_chain_once(corpus in chained_corpus()) {
        let merged = concat_segments(&corpus).unwrap();
        // chain heads are the utterances without a predecessor
        let heads = corpus.iter().filter(|u| u.segment_chain.is_none()).count();
        prop_assert_eq!(merged.len(), heads);
        let tokens = |c: &[Utterance]| c.iter().map(|u| u.tokens.len()).sum::<usize>();
        prop_assert_eq!(tokens(&merged), tokens(&corpus));
        let total = |c: &[Utterance]| c.iter().map(|u| u.duration).sum::<f64>();
        prop_assert!((total(&merged) - total(&corpus)).abs() < 1e-9);
        let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, u) in merged.iter().enumerate() {
            for part in u.id.split('+') {
                prop_assert!(owner.insert(part, i).is_none());
            }
        }
        prop_assert_eq!(owner.len(), corpus.len());
    }

    #[test]
    fn generators_are_reproducible(seed in any::<u64>()) {
        prop_assert_eq!(gen_copy(seed, 20, (1, 8), vocab()).unwrap(), gen_copy(seed, 20, (1, 8), vocab()).unwrap());
        let mut a = gen_copy(seed, 20, (1, 8), vocab()).unwrap();
        let mut b = a.clone();
        link_segments(seed, &mut a, (1, 3)).unwrap();
        link_segments(seed, &mut b, (1, 3)).unwrap();
        prop_assert_eq!(a, b);
    }
}
