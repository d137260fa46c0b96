//! Error-rate tables laid out as full / long / very-long columns, with
//! relative reductions against a baseline system.

use std::fmt::Write as _;

use cntm_core::metrics::{relative_reduction, render_tokens, score_report, ErrorCounts, ScoreReport};
use cntm_core::tasks::Utterance;

use crate::error::{CliError, Result};

/// Column order of every table.
pub const SPLITS: [&str; 3] = ["full", "long", "very-long"];

/// Scores of one system on each split; a missing split prints as `-`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SystemScores {
    pub name: String,
    pub splits: [Option<ScoreReport>; 3],
}

pub fn split_index(name: &str) -> Result<usize> {
    SPLITS
        .iter()
        .position(|s| *s == name)
        .ok_or_else(|| CliError::Usage(format!("unknown split {name:?}; expected one of {}", SPLITS.join(", "))))
}

/// Score hypotheses (id, tokens) against a reference corpus.
pub fn score_tokens(refs: &[Utterance], hyps: &[(String, Vec<usize>)]) -> Result<ScoreReport> {
    let r: Vec<(String, String)> = refs.iter().map(|u| (u.id.clone(), render_tokens(&u.tokens))).collect();
    let h: Vec<(String, String)> = hyps.iter().map(|(id, t)| (id.clone(), render_tokens(t))).collect();
    Ok(score_report(&r, &h)?)
}

fn cell(s: &Option<ScoreReport>) -> String {
    s.as_ref().map_or_else(|| "-".to_string(), ScoreReport::cell)
}

/// Tab-separated table: header, one row per system, then one reduction row
/// per non-baseline system when `baseline` names a row.
pub fn render_table(rows: &[SystemScores], baseline: Option<&str>) -> Result<String> {
    let mut out = String::from("system");
    for s in SPLITS {
        let _ = write!(out, "\t{s}");
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.name);
        for s in &row.splits {
            let _ = write!(out, "\t{}", cell(s));
        }
        out.push('\n');
    }
    if let Some(name) = baseline {
        let base = rows
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| CliError::Usage(format!("baseline {name:?} is not among the systems")))?;
        for row in rows.iter().filter(|r| r.name != name) {
            let _ = write!(out, "reduction {} vs {}", row.name, base.name);
            for (b, s) in base.splits.iter().zip(&row.splits) {
                let _ = write!(out, "\t{}", reduction_cell(b, s));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn reduction_cell(base: &Option<ScoreReport>, system: &Option<ScoreReport>) -> String {
    let (Some(b), Some(s)) = (base, system) else {
        return "-".to_string();
    };
    let part = |b: f64, s: f64| relative_reduction(b, s).map_or_else(|_| "n/a".to_string(), |r| format!("{r:.1}%"));
    format!("{} ({})", part(b.wer(), s.wer()), part(b.cer(), s.cer()))
}

fn counts_text(c: &ErrorCounts) -> String {
    format!("{} {} {} {}", c.substitutions, c.insertions, c.deletions, c.n_ref_units)
}

fn parse_counts(v: &str) -> Option<ErrorCounts> {
    let n: Vec<usize> = v.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().ok()?;
    let [substitutions, insertions, deletions, n_ref_units] = n[..] else {
        return None;
    };
    Some(ErrorCounts {
        substitutions,
        insertions,
        deletions,
        n_ref_units,
    })
}

/// Structured text: `system = name`, then per split `<split>.words` and
/// `<split>.chars` as `S I D N`, plus derived `<split>.wer` / `<split>.cer`.
pub fn to_structured(s: &SystemScores) -> String {
    let mut out = format!("system = {}\n", s.name);
    for (name, r) in SPLITS.iter().zip(&s.splits) {
        if let Some(r) = r {
            let _ = writeln!(out, "{name}.words = {}", counts_text(&r.words));
            let _ = writeln!(out, "{name}.chars = {}", counts_text(&r.chars));
            let _ = writeln!(out, "{name}.wer = {:.4}", r.wer());
            let _ = writeln!(out, "{name}.cer = {:.4}", r.cer());
        }
    }
    out
}

pub fn parse_structured(text: &str) -> std::result::Result<SystemScores, String> {
    let mut s = SystemScores::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        if k == "system" {
            s.name = v.to_string();
            continue;
        }
        let (split, field) = k.rsplit_once('.').ok_or_else(|| format!("line {}: unknown key {k}", n + 1))?;
        let i = split_index(split).map_err(|e| format!("line {}: {e}", n + 1))?;
        let slot = s.splits[i].get_or_insert_with(ScoreReport::default);
        match field {
            "words" => slot.words = parse_counts(v).ok_or_else(|| format!("line {}: bad counts", n + 1))?,
            "chars" => slot.chars = parse_counts(v).ok_or_else(|| format!("line {}: bad counts", n + 1))?,
            "wer" | "cer" => {}
            _ => return Err(format!("line {}: unknown key {k}", n + 1)),
        }
    }
    if s.name.is_empty() {
        return Err("missing `system = name` line".into());
    }
    Ok(s)
}
