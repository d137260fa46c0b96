//! Corpus text files: one utterance per line, `id`, predecessor id or `-`,
//! and space-separated tokens, tab-separated. Feature corpora keep their
//! frames in a companion container next to the text file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cntm_core::tasks::Utterance;
use cntm_core::trainer::Checkpoint;

use crate::config::Precision;
use crate::container;
use crate::error::{CliError, Result};

/// `<corpus>.feats`.
pub fn features_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".feats");
    PathBuf::from(p)
}

fn check_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() || id == "-" || id.chars().any(char::is_whitespace) {
        return Err(format!("invalid utterance id {id:?}"));
    }
    Ok(())
}

pub fn format_corpus(corpus: &[Utterance]) -> Result<String> {
    let mut out = String::new();
    for u in corpus {
        check_id(&u.id).map_err(CliError::Data)?;
        let pred = u.segment_chain.as_deref().unwrap_or("-");
        let tokens: Vec<String> = u.tokens.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}\t{}\t{}", u.id, pred, tokens.join(" "));
    }
    Ok(out)
}

pub fn parse_corpus(text: &str) -> std::result::Result<Vec<Utterance>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, pred, tokens] = fields[..] else {
            return Err(format!("line {}: expected 3 tab-separated fields, got {}", n + 1, fields.len()));
        };
        check_id(id).map_err(|e| format!("line {}: {e}", n + 1))?;
        let tokens = tokens
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| format!("line {}: bad token {t:?}", n + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut u = Utterance::from_tokens(id, tokens);
        u.segment_chain = (pred != "-").then(|| pred.to_string());
        u.validate().map_err(|e| format!("line {}: {e}", n + 1))?;
        out.push(u);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &[Utterance]) -> Result<()> {
    std::fs::write(path, format_corpus(corpus)?).map_err(|e| CliError::io(path, e))?;
    if corpus.iter().any(|u| u.features.is_some()) {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for u in corpus {
            let f = u
                .features
                .clone()
                .ok_or_else(|| CliError::Data(format!("{} has no features but others do", u.id)))?;
            names.push(u.id.clone());
            tensors.push(f);
        }
        let c = Checkpoint {
            names,
            tensors,
            step: 0,
            dev_score: 0.0,
            fingerprint: 0,
        };
        container::save(&features_path(path), &c, Precision::F64)?;
    }
    Ok(())
}

/// Reads the text file and, when present, its feature companion.
pub fn read_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut corpus = parse_corpus(&text).map_err(|e| CliError::data(path, e))?;
    let feats = features_path(path);
    if feats.exists() {
        let (c, _) = container::load::<f64>(&feats)?;
        if c.names.len() != corpus.len() {
            return Err(CliError::data(
                &feats,
                format!("{} feature tensors for {} utterances", c.names.len(), corpus.len()),
            ));
        }
        for ((u, name), t) in corpus.iter_mut().zip(c.names).zip(c.tensors) {
            if name != u.id {
                return Err(CliError::data(&feats, format!("features for {name} where {} expected", u.id)));
            }
            if t.rank() != 2 || t.rows() == 0 {
                return Err(CliError::data(&feats, format!("features of {name} are not a nonempty matrix")));
            }
            u.duration = t.rows() as f64;
            u.features = Some(t);
        }
    }
    Ok(corpus)
}
