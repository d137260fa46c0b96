use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{InitScheme, NtmConfig};
use crate::error::{shape_err, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Value of every memory entry under the constant initialization.
pub const CONSTANT_INIT: f64 = 1e-6;

/// `N × W` memory contents.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMatrix<T>(Tensor<T>);

impl<T: Real> MemoryMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows < 2 || cols < 1 {
            return Err(shape_err!("memory must be at least 2×1, got {rows}×{cols}"));
        }
        Ok(MemoryMatrix(Tensor::matrix(rows, cols, data)?))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 2 {
            return Err(shape_err!("memory must be a matrix, got {:?}", t.shape()));
        }
        let (r, c) = t.dims2();
        Self::new(r, c, t.into_data())
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Previous final weights of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState<T> {
    pub w_prev: Vec<T>,
}

/// `r = Σ_i w(i) M(i)`
pub fn read<T: Real>(mem: &MemoryMatrix<T>, w: &[T]) -> Result<Vec<T>> {
    let mut g = Graph::detached();
    let m = g.constant(mem.tensor().clone());
    let wv = g.constant(Tensor::vector(w.to_vec()));
    let r = g.read_memory(m, wv)?;
    Ok(g.value(r).data().to_vec())
}

/// Erase `M(i) ∘ (1 − w(i) e)`, then add `w(i) a`.
pub fn write<T: Real>(mem: &MemoryMatrix<T>, w: &[T], erase: &[T], add: &[T]) -> Result<MemoryMatrix<T>> {
    let mut g = Graph::detached();
    let m = g.constant(mem.tensor().clone());
    let wv = g.constant(Tensor::vector(w.to_vec()));
    let e = g.constant(Tensor::vector(erase.to_vec()));
    let a = g.constant(Tensor::vector(add.to_vec()));
    let out = g.write_memory(m, wv, e, a)?;
    Ok(MemoryMatrix(g.value(out).clone()))
}

/// Initial memory and head weights, trainable under [`InitScheme::Learned`].
#[derive(Debug, Clone)]
pub struct MemoryInit {
    scheme: InitScheme,
    rows: usize,
    cols: usize,
    heads: usize,
    memory: Option<ParamId>,
    w_prev_logits: Vec<ParamId>,
}

impl MemoryInit {
    /// `heads` counts every head that keeps previous weights (reads and writes).
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &NtmConfig,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let (memory, w_prev_logits) = match cfg.init {
            InitScheme::Constant => (None, Vec::new()),
            InitScheme::Learned => {
                let bound = 1.0 / libm::sqrt((cfg.rows + cfg.cols) as f64);
                let m = store.add_uniform(format!("{name}.memory"), &[cfg.rows, cfg.cols], bound, rng);
                let logits = (0..heads)
                    .map(|h| store.add(format!("{name}.w_prev.{h}"), Tensor::zeros(&[cfg.rows])))
                    .collect();
                (Some(m), logits)
            }
        };
        MemoryInit {
            scheme: cfg.init,
            rows: cfg.rows,
            cols: cfg.cols,
            heads,
            memory,
            w_prev_logits,
        }
    }

    pub fn scheme(&self) -> InitScheme {
        self.scheme
    }

    /// Fresh memory and one previous-weight vector per head.
    pub fn init_vars<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<(Var, Vec<Var>)> {
        match self.scheme {
            InitScheme::Constant => {
                let m = g.constant(Tensor::full(&[self.rows, self.cols], T::lit(CONSTANT_INIT)));
                let mut one_hot = vec![T::zero(); self.rows];
                one_hot[0] = T::one();
                let w = (0..self.heads)
                    .map(|_| g.constant(Tensor::vector(one_hot.clone())))
                    .collect();
                Ok((m, w))
            }
            InitScheme::Learned => {
                let m = g.param(self.memory.expect("learned init has memory"));
                let mut w = Vec::with_capacity(self.heads);
                for &id in &self.w_prev_logits {
                    let logits = g.param(id);
                    w.push(g.softmax(logits)?);
                }
                Ok((m, w))
            }
        }
    }
}

/// Initial memory and head states for `heads` heads as values.
pub fn init_memory<T: Real>(
    cfg: &NtmConfig,
    heads: usize,
    init: &MemoryInit,
    store: &ParamStore<T>,
) -> Result<(MemoryMatrix<T>, Vec<HeadState<T>>)> {
    cfg.validate()?;
    let mut g = Graph::new(store);
    let (m, ws) = init.init_vars(&mut g)?;
    let mem = MemoryMatrix::from_tensor(g.value(m).clone())?;
    let states = ws
        .into_iter()
        .take(heads)
        .map(|w| HeadState {
            w_prev: g.value(w).data().to_vec(),
        })
        .collect();
    Ok((mem, states))
}
