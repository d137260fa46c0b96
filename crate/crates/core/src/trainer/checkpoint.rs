use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::str::FromStr;

use crate::error::{config_err, data_err, domain_err, Error, Result};
use crate::numerics::{ParamStore, Real, Tensor};

/// Named parameter values with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
    pub step: u64,
    pub dev_score: f64,
    pub fingerprint: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_store(store: &ParamStore<T>, step: u64, dev_score: f64, fingerprint: u64) -> Self {
        Checkpoint {
            names: store.iter().map(|(n, _)| String::from(n)).collect(),
            tensors: store.tensors().to_vec(),
            step,
            dev_score,
            fingerprint,
        }
    }

    /// Copy the values into `store`, whose architecture must have `fingerprint`.
    pub fn load_into(&self, store: &mut ParamStore<T>, fingerprint: u64) -> Result<()> {
        if fingerprint != self.fingerprint {
            return Err(data_err!(
                "checkpoint fingerprint {:016x} does not match model {:016x}",
                self.fingerprint,
                fingerprint
            ));
        }
        store.load_named(self.names.iter().map(String::as_str).zip(&self.tensors))
    }
}

/// Parameter-wise arithmetic mean. Uses a running mean so that averaging
/// copies of one checkpoint reproduces it exactly.
pub fn checkpoint_average<T: Real>(checkpoints: &[Checkpoint<T>]) -> Result<Checkpoint<T>> {
    let first = checkpoints
        .first()
        .ok_or_else(|| domain_err!("cannot average zero checkpoints"))?;
    for c in &checkpoints[1..] {
        if c.fingerprint != first.fingerprint || c.names != first.names {
            return Err(data_err!(
                "checkpoint fingerprints differ: {:016x} vs {:016x}",
                first.fingerprint,
                c.fingerprint
            ));
        }
        for (a, b) in first.tensors.iter().zip(&c.tensors) {
            if a.shape() != b.shape() {
                return Err(data_err!("checkpoint tensor shapes differ"));
            }
        }
    }
    let mut avg = first.clone();
    for (k, c) in checkpoints.iter().enumerate().skip(1) {
        let inv = T::lit(1.0 / (k + 1) as f64);
        for (acc, t) in avg.tensors.iter_mut().zip(&c.tensors) {
            for (a, &x) in acc.data_mut().iter_mut().zip(t.data()) {
                *a = *a + (x - *a) * inv;
            }
        }
    }
    avg.step = checkpoints.iter().map(|c| c.step).max().unwrap_or(0);
    avg.dev_score = checkpoints.iter().map(|c| c.dev_score).sum::<f64>() / checkpoints.len() as f64;
    Ok(avg)
}

/// Dev statistic used to rank checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DevMetric {
    #[default]
    Loss,
    /// Teacher-forced token accuracy.
    Accuracy,
}

impl FromStr for DevMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(DevMetric::Loss),
            "accuracy" => Ok(DevMetric::Accuracy),
            other => Err(config_err!("unknown dev metric {other:?}")),
        }
    }
}

impl DevMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            DevMetric::Loss => "loss",
            DevMetric::Accuracy => "accuracy",
        }
    }

    /// Ordering with the better score first.
    pub fn rank(self, a: f64, b: f64) -> Ordering {
        let o = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        match self {
            DevMetric::Loss => o,
            DevMetric::Accuracy => o.reverse(),
        }
    }
}

/// Indices of the `k` best scores, best first; ties keep the earlier index.
pub fn select_best_k(scores: &[f64], k: usize, metric: DevMetric) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| metric.rank(scores[a], scores[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The best `k` checkpoints seen so far.
#[derive(Debug, Clone)]
pub struct BestK<T> {
    k: usize,
    metric: DevMetric,
    kept: Vec<Checkpoint<T>>,
}

impl<T: Real> BestK<T> {
    pub fn new(k: usize, metric: DevMetric) -> Self {
        BestK {
            k,
            metric,
            kept: Vec::new(),
        }
    }

    pub fn offer(&mut self, c: Checkpoint<T>) {
        let pos = self
            .kept
            .iter()
            .position(|e| self.metric.rank(c.dev_score, e.dev_score) == Ordering::Less)
            .unwrap_or(self.kept.len());
        if pos < self.k {
            self.kept.insert(pos, c);
            self.kept.truncate(self.k);
        }
    }

    pub fn kept(&self) -> &[Checkpoint<T>] {
        &self.kept
    }
}
