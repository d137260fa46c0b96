//! Differentiable dense arrays: tensors, the reverse-mode tape, and the
//! vector-level simplex operations the memory is built from.

mod graph;
pub mod kernels;
mod params;
mod extended;
mod real;
mod tensor;

use alloc::vec::Vec;

pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use extended::Extended;
pub use real::{Precision, Real};
pub use tensor::Tensor;

use crate::error::{config_err, domain_err, shape_err, Result};

/// Denominator stabilizer of the cosine similarity.
pub const COSINE_DELTA: f64 = 1e-8;

/// Max-subtracted softmax of a vector.
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(domain_err!("softmax of an empty vector"));
    }
    let mut g = Graph::detached();
    let x = g.constant(Tensor::vector(v.to_vec()));
    let y = g.softmax(x)?;
    Ok(g.value(y).data().to_vec())
}

/// `u·v / (‖u‖‖v‖ + δ)`
pub fn cosine_similarity<T: Real>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(shape_err!("cosine_similarity: {} vs {}", u.len(), v.len()));
    }
    let mut g = Graph::detached();
    let k = g.constant(Tensor::vector(u.to_vec()));
    let m = g.constant(Tensor::from_parts(alloc::vec![1, v.len()], v.to_vec()));
    let c = g.cosine_rows(k, m, T::lit(COSINE_DELTA))?;
    Ok(g.value(c).data()[0])
}

/// Circular convolution of `w` with the shift distribution `s` over `shifts`.
pub fn circular_convolve<T: Real>(w: &[T], s: &[T], shifts: &[i64]) -> Result<Vec<T>> {
    if s.len() != shifts.len() {
        return Err(config_err!(
            "shift distribution has {} entries, shift set has {}",
            s.len(),
            shifts.len()
        ));
    }
    let mut g = Graph::detached();
    let wv = g.constant(Tensor::vector(w.to_vec()));
    let sv = g.constant(Tensor::vector(s.to_vec()));
    let out = g.circular_convolve(wv, sv, shifts)?;
    Ok(g.value(out).data().to_vec())
}
