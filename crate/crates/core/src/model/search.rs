use alloc::vec;
use alloc::vec::Vec;

use super::{EncoderInput, Model};
use crate::error::{config_err, Result};
use crate::numerics::kernels::log_sum_exp;
use crate::numerics::{Graph, ParamStore, Real, Tensor};

/// A decoded token sequence (without `sos`/`eos`).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Total log-probability, including `eos` when it was emitted.
    pub log_prob: f64,
    /// Ranking score: `log_prob` divided by the number of scored steps.
    pub score: f64,
    /// Length cap reached before `eos`.
    pub truncated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DecodeOptions {
    /// Overrides the `2·T'' + 10` length cap.
    pub max_len: Option<usize>,
}

struct Context<T> {
    memory: Tensor<T>,
    max_len: usize,
}

fn prepare<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    input: EncoderInput<'_, T>,
    opts: &DecodeOptions,
) -> Result<Context<T>> {
    let mut g = Graph::new(store);
    let (_, o) = model.forward(&mut g, input)?;
    let memory = g.value(o).clone();
    let max_len = opts.max_len.unwrap_or(2 * memory.rows() + 10);
    Ok(Context { memory, max_len })
}

/// Log-probabilities of the next token after `prefix` (which starts with `sos`).
fn next_log_probs<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    ctx: &Context<T>,
    prefix: &[usize],
) -> Result<Vec<f64>> {
    let mut g = Graph::new(store);
    let o = g.constant(ctx.memory.clone());
    let logits = model.decoder.forward_prefix(&mut g, o, prefix)?;
    let row: Vec<f64> = g.value(logits).row(prefix.len() - 1).iter().map(|v| v.as_f64()).collect();
    let lse = log_sum_exp(&row);
    Ok(row.into_iter().map(|v| v - lse).collect())
}

pub(super) fn greedy<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    input: EncoderInput<'_, T>,
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    let ctx = prepare(model, store, input, opts)?;
    let specials = model.decoder.config().specials;
    let mut prefix = vec![specials.sos];
    let mut log_prob = 0.0;
    let mut steps = 0usize;
    loop {
        if steps >= ctx.max_len {
            break;
        }
        let lp = next_log_probs(model, store, &ctx, &prefix)?;
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        log_prob += lp[best];
        steps += 1;
        if best == specials.eos {
            return Ok(finish(prefix, log_prob, steps, false));
        }
        prefix.push(best);
    }
    Ok(finish(prefix, log_prob, steps, true))
}

fn finish(prefix: Vec<usize>, log_prob: f64, steps: usize, truncated: bool) -> Hypothesis {
    Hypothesis {
        tokens: prefix[1..].to_vec(),
        log_prob,
        score: if steps == 0 { 0.0 } else { log_prob / steps as f64 },
        truncated,
    }
}

pub(super) fn beam<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    input: EncoderInput<'_, T>,
    beam_size: usize,
    opts: &DecodeOptions,
) -> Result<Vec<Hypothesis>> {
    if beam_size < 1 {
        return Err(config_err!("beam size must be at least 1"));
    }
    let ctx = prepare(model, store, input, opts)?;
    let eos = model.decoder.config().specials.eos;
    let sos = model.decoder.config().specials.sos;
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![sos], 0.0)];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 0..ctx.max_len {
        // (hypothesis index, token, cumulative log-prob), ordered by score then
        // hypothesis then token so that ties resolve as in greedy decoding.
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for (h, (prefix, lp)) in live.iter().enumerate() {
            let next = next_log_probs(model, store, &ctx, prefix)?;
            cands.extend(next.iter().enumerate().map(|(tok, &v)| (h, tok, lp + v)));
        }
        cands.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        cands.truncate(beam_size);
        let mut next_live = Vec::with_capacity(beam_size);
        for (h, tok, lp) in cands {
            let mut prefix = live[h].0.clone();
            if tok == eos {
                done.push(finish(prefix, lp, step + 1, false));
            } else {
                prefix.push(tok);
                next_live.push((prefix, lp));
            }
        }
        live = next_live;
        if live.is_empty() || done.len() >= beam_size {
            break;
        }
    }
    for (prefix, lp) in live {
        let steps = prefix.len() - 1;
        done.push(finish(prefix, lp, steps, true));
    }
    done.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    Ok(done)
}
