//! Synthetic corpora and evaluation-split construction.
//!
//! Token ids `0..symbols` are content symbols. The ids after them are
//! reserved: separator, CTC blank, padding, start, end, and the marker frame
//! that fills the encoder input of a repeat-copy item.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;

use crate::error::{config_err, data_err, domain_err, Result};
use crate::model::SpecialTokens;
use crate::numerics::Tensor;
use crate::rng::item_stream;

/// Longest sequence a generator will produce.
pub const MAX_LEN: usize = 512;

/// Encoder frames spent per target token, so that CTC always has room for
/// repeated symbols.
pub const FRAMES_PER_TOKEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    symbols: usize,
}

impl Vocab {
    pub fn new(symbols: usize) -> Result<Self> {
        if symbols == 0 {
            return Err(config_err!("vocabulary needs at least one symbol"));
        }
        Ok(Vocab { symbols })
    }

    pub fn symbols(self) -> usize {
        self.symbols
    }

    pub fn sep(self) -> usize {
        self.symbols
    }

    pub fn blank(self) -> usize {
        self.symbols + 1
    }

    pub fn pad(self) -> usize {
        self.symbols + 2
    }

    pub fn sos(self) -> usize {
        self.symbols + 3
    }

    pub fn eos(self) -> usize {
        self.symbols + 4
    }

    pub fn marker(self) -> usize {
        self.symbols + 5
    }

    /// Number of ids including the reserved ones.
    pub fn size(self) -> usize {
        self.symbols + 6
    }

    pub fn specials(self) -> SpecialTokens {
        SpecialTokens {
            blank: self.blank(),
            pad: self.pad(),
            sos: self.sos(),
            eos: self.eos(),
        }
    }

    /// Encoder token input for a target: the first separator-delimited
    /// segment with every token repeated, then marker frames up to
    /// `FRAMES_PER_TOKEN · |target|`.
    pub fn encoder_tokens(self, target: &[usize]) -> Vec<usize> {
        let first = target.iter().position(|&t| t == self.sep()).unwrap_or(target.len());
        let mut out = Vec::with_capacity(FRAMES_PER_TOKEN * target.len());
        for &t in &target[..first] {
            for _ in 0..FRAMES_PER_TOKEN {
                out.push(t);
            }
        }
        out.resize(FRAMES_PER_TOKEN * target.len(), self.marker());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// Target token sequence.
    pub tokens: Vec<usize>,
    pub features: Option<Tensor<f64>>,
    /// Token count for token corpora, frame count for feature corpora.
    pub duration: f64,
    /// Id of the preceding continuous segment, if any.
    pub segment_chain: Option<String>,
}

impl Utterance {
    pub fn from_tokens(id: impl Into<String>, tokens: Vec<usize>) -> Self {
        Utterance {
            id: id.into(),
            duration: tokens.len() as f64,
            tokens,
            features: None,
            segment_chain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(data_err!("utterance {} has no tokens", self.id));
        }
        if !(self.duration > 0.0) {
            return Err(data_err!("utterance {} has duration {}", self.id, self.duration));
        }
        Ok(())
    }
}

/// Which evaluation subset to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSpec {
    Full,
    LongestK(usize),
    ConcatThenLongestK(usize),
}

impl SplitSpec {
    pub fn apply(self, corpus: &[Utterance]) -> Result<Vec<Utterance>> {
        match self {
            SplitSpec::Full => Ok(corpus.to_vec()),
            SplitSpec::LongestK(k) => longest_k(corpus, k),
            SplitSpec::ConcatThenLongestK(k) => longest_k(&concat_segments(corpus)?, k),
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize), max: usize) -> Result<()> {
    if lo < 1 || lo > hi || hi > max {
        return Err(config_err!("{name} range {lo}..={hi} must lie within 1..={max}"));
    }
    Ok(())
}

fn item_id(prefix: &str, i: usize) -> String {
    format!("{prefix}-{i:06}")
}

/// Copy task: each target is a uniform random symbol string with uniform length.
pub fn gen_copy(seed: u64, count: usize, len_range: (usize, usize), vocab: Vocab) -> Result<Vec<Utterance>> {
    check_range("length", len_range, MAX_LEN)?;
    Ok((0..count)
        .map(|i| {
            let mut rng = item_stream(seed, "copy", i as u64);
            let len = rng.gen_range(len_range.0..=len_range.1);
            let tokens = (0..len).map(|_| rng.gen_range(0..vocab.symbols())).collect();
            Utterance::from_tokens(item_id("copy", i), tokens)
        })
        .collect())
}

/// Repeat-copy task: the target is the sequence repeated `r` times with
/// separators between repetitions.
pub fn gen_repeat_copy(
    seed: u64,
    count: usize,
    len_range: (usize, usize),
    repeats_range: (usize, usize),
    vocab: Vocab,
) -> Result<Vec<Utterance>> {
    check_range("length", len_range, MAX_LEN)?;
    check_range("repeat", repeats_range, MAX_LEN)?;
    let longest = repeats_range.1 * len_range.1 + repeats_range.1 - 1;
    if longest > MAX_LEN {
        return Err(config_err!("repeat-copy targets of up to {longest} tokens exceed {MAX_LEN}"));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = item_stream(seed, "repeat-copy", i as u64);
            let len = rng.gen_range(len_range.0..=len_range.1);
            let reps = rng.gen_range(repeats_range.0..=repeats_range.1);
            let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab.symbols())).collect();
            let mut tokens = Vec::with_capacity(reps * len + reps - 1);
            for r in 0..reps {
                if r > 0 {
                    tokens.push(vocab.sep());
                }
                tokens.extend_from_slice(&seq);
            }
            Utterance::from_tokens(item_id("repcopy", i), tokens)
        })
        .collect())
}

/// Link consecutive utterances into continuous-segment chains whose lengths
/// are drawn from `chain_range`.
pub fn link_segments(seed: u64, corpus: &mut [Utterance], chain_range: (usize, usize)) -> Result<()> {
    check_range("chain", chain_range, usize::MAX)?;
    let mut rng = item_stream(seed, "chains", 0);
    let mut i = 0;
    while i < corpus.len() {
        let len = rng.gen_range(chain_range.0..=chain_range.1);
        corpus[i].segment_chain = None;
        for j in i + 1..(i + len).min(corpus.len()) {
            corpus[j].segment_chain = Some(corpus[j - 1].id.clone());
        }
        i += len;
    }
    Ok(())
}

fn by_duration_desc(a: &Utterance, b: &Utterance) -> Ordering {
    b.duration
        .partial_cmp(&a.duration)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

/// The `k` longest utterances, longest first; equal durations ordered by id.
pub fn longest_k(corpus: &[Utterance], k: usize) -> Result<Vec<Utterance>> {
    if k == 0 {
        return Err(domain_err!("longest-k needs k ≥ 1"));
    }
    if k > corpus.len() {
        return Err(domain_err!("asked for {k} utterances from a corpus of {}", corpus.len()));
    }
    let mut sorted = corpus.to_vec();
    sorted.sort_by(by_duration_desc);
    sorted.truncate(k);
    Ok(sorted)
}

/// Merge every maximal segment chain into one utterance. Chains are emitted
/// in the order of their first segment; the merged id joins the segment ids
/// with `+`.
pub fn concat_segments(corpus: &[Utterance]) -> Result<Vec<Utterance>> {
    let mut index = BTreeMap::new();
    for (i, u) in corpus.iter().enumerate() {
        if index.insert(u.id.as_str(), i).is_some() {
            return Err(data_err!("duplicate utterance id {}", u.id));
        }
    }
    let mut next: Vec<Option<usize>> = alloc::vec![None; corpus.len()];
    for (i, u) in corpus.iter().enumerate() {
        if let Some(pred) = &u.segment_chain {
            let &p = index
                .get(pred.as_str())
                .ok_or_else(|| data_err!("{} follows unknown segment {pred}", u.id))?;
            if next[p].replace(i).is_some() {
                return Err(data_err!("segment {pred} has more than one successor"));
            }
        }
    }
    let mut visited = alloc::vec![false; corpus.len()];
    let mut out = Vec::new();
    for (head, u) in corpus.iter().enumerate() {
        if u.segment_chain.is_some() {
            continue;
        }
        let mut members = Vec::new();
        let mut cur = Some(head);
        while let Some(i) = cur {
            visited[i] = true;
            members.push(i);
            cur = next[i];
        }
        out.push(merge(corpus, &members)?);
    }
    if let Some(i) = visited.iter().position(|v| !v) {
        return Err(data_err!("segment chain through {} is cyclic", corpus[i].id));
    }
    Ok(out)
}

fn merge(corpus: &[Utterance], members: &[usize]) -> Result<Utterance> {
    if members.len() == 1 {
        return Ok(corpus[members[0]].clone());
    }
    let parts: Vec<&Utterance> = members.iter().map(|&i| &corpus[i]).collect();
    let id = parts.iter().map(|u| u.id.as_str()).collect::<Vec<_>>().join("+");
    let tokens = parts.iter().flat_map(|u| u.tokens.iter().copied()).collect();
    let duration = parts.iter().map(|u| u.duration).sum();
    let features = if parts.iter().all(|u| u.features.is_some()) {
        let tensors: Vec<&Tensor<f64>> = parts.iter().filter_map(|u| u.features.as_ref()).collect();
        let cols = tensors[0].cols();
        if tensors.iter().any(|t| t.cols() != cols) {
            return Err(data_err!("segments of {id} have different feature widths"));
        }
        let rows = tensors.iter().map(|t| t.rows()).sum();
        let data = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        Some(Tensor::matrix(rows, cols, data)?)
    } else if parts.iter().any(|u| u.features.is_some()) {
        return Err(data_err!("segments of {id} mix feature and token-only utterances"));
    } else {
        None
    };
    Ok(Utterance {
        id,
        tokens,
        features,
        duration,
        segment_chain: None,
    })
}

/// `(mean, min, max)` of the durations.
pub fn duration_stats(corpus: &[Utterance]) -> Result<(f64, f64, f64)> {
    if corpus.is_empty() {
        return Err(domain_err!("duration statistics of an empty corpus"));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for u in corpus {
        min = min.min(u.duration);
        max = max.max(u.duration);
        sum += u.duration;
    }
    Ok((sum / corpus.len() as f64, min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn utt(id: &str, d: f64, chain: Option<&str>) -> Utterance {
        Utterance {
            id: id.to_string(),
            tokens: vec![0; d as usize],
            features: None,
            duration: d,
            segment_chain: chain.map(|s| s.to_string()),
        }
    }

    #[test]
    fn reserved_ids_follow_symbols() {
        let v = Vocab::new(16).unwrap();
        assert_eq!((v.sep(), v.blank(), v.eos(), v.marker(), v.size()), (16, 17, 20, 21, 22));
    }

    #[test]
    fn encoder_tokens_for_repeat_copy() {
        let v = Vocab::new(4).unwrap();
        let target = [1, 2, v.sep(), 1, 2];
        let m = v.marker();
        assert_eq!(v.encoder_tokens(&target), vec![1, 1, 2, 2, m, m, m, m, m, m]);
        assert_eq!(v.encoder_tokens(&[3, 0]), vec![3, 3, 0, 0]);
    }

    #[test]
    fn longest_two_of_three() {
        let c = vec![utt("a", 3.0, None), utt("b", 1.0, None), utt("c", 2.0, None)];
        let out = longest_k(&c, 2).unwrap();
        assert_eq!(out.iter().map(|u| u.duration).collect::<Vec<_>>(), vec![3.0, 2.0]);
        assert!(longest_k(&c, 4).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let c = vec![utt("b", 2.0, None), utt("a", 2.0, None), utt("c", 1.0, None)];
        let ids: Vec<_> = longest_k(&c, 3).unwrap().into_iter().map(|u| u.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn chain_of_two_merges() {
        let mut a = utt("a", 2.0, None);
        a.tokens = vec![1, 2];
        let mut b = utt("b", 3.0, Some("a"));
        b.tokens = vec![3, 4, 5];
        let out = concat_segments(&[a, b, utt("c", 1.0, None)]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].duration, 5.0);
        assert_eq!(out[0].tokens, vec![1, 2, 3, 4, 5]);
        assert_eq!(out[0].id, "a+b");
    }

    #[test]
    fn cycles_are_rejected() {
        let c = vec![utt("a", 1.0, Some("b")), utt("b", 1.0, Some("a"))];
        assert!(matches!(concat_segments(&c), Err(crate::Error::Data(_))));
    }

    #[test]
    fn stats() {
        let c = vec![utt("a", 1.0, None), utt("b", 2.0, None), utt("c", 3.0, None)];
        assert_eq!(duration_stats(&c).unwrap(), (2.0, 1.0, 3.0));
        assert_eq!(duration_stats(&c[..1]).unwrap(), (1.0, 1.0, 1.0));
        assert!(duration_stats(&[]).is_err());
    }

    #[test]
    fn repeat_once_is_copy_shaped() {
        let v = Vocab::new(8).unwrap();
        for u in gen_repeat_copy(5, 50, (1, 8), (1, 1), v).unwrap() {
            assert!(!u.tokens.contains(&v.sep()));
        }
        for u in gen_repeat_copy(5, 50, (1, 8), (1, 4), v).unwrap() {
            let r = u.tokens.iter().filter(|&&t| t == v.sep()).count() + 1;
            let len = (u.tokens.len() + 1) / r - 1;
            assert_eq!(u.tokens.len(), r * len + r - 1);
        }
    }
}
