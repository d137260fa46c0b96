//! Levenshtein alignment, WER/CER scoring and relative reductions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::AddAssign;
use core::str::FromStr;

use crate::error::{config_err, data_err, domain_err, Error, Result};

/// Edit operations of one optimal alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Minimal unit-cost edit distance from `reference` to `hypothesis`.
///
/// Among optimal alignments the one with the fewest insertions plus deletions
/// is reported, which makes the counts symmetric: swapping the arguments
/// swaps insertions with deletions and keeps substitutions. Remaining ties in
/// the backtrace prefer substitution (or match), then deletion, then insertion.
pub fn edit_distance<A: PartialEq>(reference: &[A], hypothesis: &[A]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (distance, insertions + deletions), compared lexicographically
    let mut dp = vec![(0usize, 0usize); (n + 1) * w];
    for j in 0..=m {
        dp[j] = (j, j);
    }
    let step = |(d, k): (usize, usize), cost: usize, indel: usize| (d + cost, k + indel);
    for i in 1..=n {
        dp[i * w] = (i, i);
        for j in 1..=m {
            let differ = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let sub = step(dp[(i - 1) * w + j - 1], differ, 0);
            let del = step(dp[(i - 1) * w + j], 1, 1);
            let ins = step(dp[i * w + j - 1], 1, 1);
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts {
        distance: dp[n * w + m].0,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let differ = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if step(dp[(i - 1) * w + j - 1], differ, 0) == here {
                counts.substitutions += differ;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && step(dp[(i - 1) * w + j], 1, 1) == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Word,
    Char,
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Unit::Word),
            "char" => Ok(Unit::Char),
            other => Err(config_err!("unknown scoring unit {other:?}")),
        }
    }
}

/// Pooled error counts over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub n_ref_units: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Error rate in percent; zero for an empty reference.
    pub fn rate(&self) -> f64 {
        if self.n_ref_units == 0 {
            0.0
        } else {
            100.0 * self.errors() as f64 / self.n_ref_units as f64
        }
    }
}

impl AddAssign<EditCounts> for ErrorCounts {
    fn add_assign(&mut self, e: EditCounts) {
        self.substitutions += e.substitutions;
        self.insertions += e.insertions;
        self.deletions += e.deletions;
    }
}

/// Word and character scores of one hypothesis set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreReport {
    pub words: ErrorCounts,
    pub chars: ErrorCounts,
}

impl ScoreReport {
    pub fn wer(&self) -> f64 {
        self.words.rate()
    }

    pub fn cer(&self) -> f64 {
        self.chars.rate()
    }

    /// `W.W (C.C)`.
    pub fn cell(&self) -> String {
        format!("{:.1} ({:.1})", self.wer(), self.cer())
    }
}

fn units(text: &str, unit: Unit) -> Vec<&str> {
    match unit {
        Unit::Word => text.split_whitespace().collect(),
        Unit::Char => text
            .split_whitespace()
            .flat_map(|w| w.char_indices().map(move |(i, c)| &w[i..i + c.len_utf8()]))
            .collect(),
    }
}

/// Corpus-level pooled counts; hypotheses are matched to references by id.
/// Character units ignore whitespace.
pub fn score<S: AsRef<str>>(refs: &[(S, S)], hyps: &[(S, S)], unit: Unit) -> Result<ErrorCounts> {
    if refs.len() != hyps.len() {
        return Err(data_err!("{} references but {} hypotheses", refs.len(), hyps.len()));
    }
    let mut by_id = BTreeMap::new();
    for (id, text) in hyps {
        if by_id.insert(id.as_ref(), text.as_ref()).is_some() {
            return Err(data_err!("duplicate hypothesis id {}", id.as_ref()));
        }
    }
    let mut total = ErrorCounts::default();
    for (id, text) in refs {
        let hyp = by_id
            .get(id.as_ref())
            .ok_or_else(|| data_err!("no hypothesis for {}", id.as_ref()))?;
        let r = units(text.as_ref(), unit);
        total += edit_distance(&r, &units(hyp, unit));
        total.n_ref_units += r.len();
    }
    Ok(total)
}

pub fn score_report<S: AsRef<str>>(refs: &[(S, S)], hyps: &[(S, S)]) -> Result<ScoreReport> {
    Ok(ScoreReport {
        words: score(refs, hyps, Unit::Word)?,
        chars: score(refs, hyps, Unit::Char)?,
    })
}

/// `100 · (baseline − system) / baseline`.
pub fn relative_reduction(baseline: f64, system: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(domain_err!("baseline error rate {baseline} must be positive"));
    }
    Ok(100.0 * (baseline - system) / baseline)
}

/// Space-separated decimal rendering of a token sequence, one word per token.
pub fn render_tokens(tokens: &[usize]) -> String {
    let parts: Vec<String> = tokens.iter().map(|t| format!("{t}")).collect();
    parts.join(" ")
}
