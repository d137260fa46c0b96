//! Define-by-run reverse-mode tape.
//!
//! Every op appends a node holding its value and the data its vector-Jacobian
//! product needs. Nodes only reference earlier nodes, so a single reverse sweep
//! over the node list is a valid topological order.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{domain_err, shape_err, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Sigmoid,
    Softplus,
    Tanh,
    Relu,
    Silu,
    Exp,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ScaleBy(Var, Var),
    Pow(Var, T),
    PowBy(Var, Var),
    Unary(Unary, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    SwapLeading { x: Var, dims: [usize; 3] },
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    LayerNorm { x: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    Normalize { x: Var, total: T },
    Lerp { a: Var, b: Var, g: Var },
    Cosine { key: Var, mem: Var, delta: T },
    CircConv { w: Var, s: Var, shifts: Vec<i64> },
    ReadMem { mem: Var, w: Var },
    WriteMem { mem: Var, w: Var, e: Var, a: Var },
    DepthwiseConv { x: Var, kernel: Var },
    Conv2d { x: Var, kernel: Var, bias: Var, stride: usize },
    /// Fused loss with its input gradient precomputed in the forward pass.
    Fused { x: Var, dx: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros when `v` does not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Recording tape for one forward pass.
pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::detached()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// Graph without a parameter store; only leaves and constants.
    pub fn detached() -> Self {
        Graph {
            nodes: Vec::new(),
            params: None,
            param_vars: Vec::new(),
        }
    }

    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            nodes: Vec::new(),
            params: Some(params),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push(value, op, needs)
    }

    /// Input leaf; gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf for a stored parameter; repeated requests share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let v = self.leaf(store.get(id).clone(), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Parameter gradients of a sweep, aligned with the store's ids.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.param_vars
            .iter()
            .map(|v| v.and_then(|v| grads.get(v).cloned()))
            .collect()
    }

    // ---- elementwise ------------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    fn check_row(&self, x: Var, b: Var, what: &str) -> Result<()> {
        let c = self.value(x).cols();
        if self.value(b).numel() != c {
            return Err(shape_err!(
                "{what}: row vector of {} against {} columns",
                self.value(b).numel(),
                c
            ));
        }
        Ok(())
    }

    /// `x[i, j] + b[j]`
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_row(x, b, "add_row")?;
        let bd = self.data(b);
        let c = bd.len();
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % c])
            .collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push_op(out, Op::AddRow(x, b), &[x, b]))
    }

    /// `x[i, j] · g[j]`
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        self.check_row(x, g, "mul_row")?;
        let gd = self.data(g);
        let c = gd.len();
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gd[i % c])
            .collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push_op(out, Op::MulRow(x, g), &[x, g]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push_op(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push_op(out, Op::AddScalar(x), &[x])
    }

    /// `x · s` for a one-element `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err!("scale_by: factor has shape {:?}", self.shape(s)));
        }
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push_op(out, Op::ScaleBy(x, s), &[x, s]))
    }

    /// Elementwise `x^p` for a constant exponent.
    pub fn pow(&mut self, x: Var, p: T) -> Var {
        let out = self.value(x).map(|v| v.powf(p));
        self.push_op(out, Op::Pow(x, p), &[x])
    }

    /// Elementwise `x^γ` for a one-element exponent `γ`; requires `x ≥ 0`.
    pub fn pow_by(&mut self, x: Var, gamma: Var) -> Result<Var> {
        if self.value(gamma).numel() != 1 {
            return Err(shape_err!("pow_by: exponent has shape {:?}", self.shape(gamma)));
        }
        let gv = self.value(gamma).item();
        let out = self.value(x).map(|v| v.powf(gv));
        Ok(self.push_op(out, Op::PowBy(x, gamma), &[x, gamma]))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f: fn(T) -> T = match kind {
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Softplus => kernels::softplus,
            Unary::Tanh => |v: T| v.tanh(),
            Unary::Relu => |v: T| v.max(T::zero()),
            Unary::Silu => |v: T| v * kernels::sigmoid(v),
            Unary::Exp => |v: T| v.exp(),
        };
        let out = self.value(x).map(f);
        self.push_op(out, Op::Unary(kind, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }
    /// `x · σ(x)` (swish).
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(Unary::Silu, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    // ---- linear algebra and layout ---------------------------------------

    /// `a[m×k] · b[k×n]`; a vector `a` is one row and yields a vector.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(shape_err!(
                "matmul: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let n = bs[1];
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.data(a), self.data(b), &mut out);
        let shape = if self.value(a).rank() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        Ok(self.push_op(Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return Err(shape_err!("transpose needs a matrix, got {:?}", self.shape(x)));
        }
        let out = self.value(x).transposed();
        Ok(self.push_op(out, Op::Transpose(x), &[x]))
    }

    /// Concatenate along the last axis; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(domain_err!("concat of nothing"));
        }
        let rows = self.value(parts[0]).rows();
        let all_vec = parts.iter().all(|&p| self.value(p).rank() == 1);
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err!("concat: row counts differ"));
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if all_vec { vec![total] } else { vec![rows, total] };
        Ok(self.push_op(
            Tensor::from_parts(shape, out),
            Op::Concat(parts.to_vec()),
            parts,
        ))
    }

    /// Stack vectors (or matrices) vertically into one matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(domain_err!("stack_rows of nothing"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err!("stack_rows: column counts differ"));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        Ok(self.push_op(
            Tensor::from_parts(vec![rows, cols], out),
            Op::StackRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if start + len > cols {
            return Err(shape_err!("slice_cols {start}+{len} beyond {cols}"));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let shape = if t.rank() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        Ok(self.push_op(
            Tensor::from_parts(shape, out),
            Op::SliceCols { x, start },
            &[x],
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if t.rank() != 2 || start + len > rows {
            return Err(shape_err!("slice_rows {start}+{len} of {:?}", t.shape()));
        }
        let out = t.data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push_op(
            Tensor::from_parts(vec![len, cols], out),
            Op::SliceRows { x, start },
            &[x],
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let r = self.slice_rows(x, i, 1)?;
        let cols = self.value(x).cols();
        self.reshape(r, &[cols])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push_op(out, Op::Reshape(x), &[x]))
    }

    /// `[a, b, c] → [b, a, c]`
    pub fn swap_leading(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(shape_err!("swap_leading needs rank 3, got {:?}", s));
        }
        let dims = [s[0], s[1], s[2]];
        let d = self.data(x);
        let mut out = Vec::with_capacity(d.len());
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let base = (i * dims[1] + j) * dims[2];
                out.extend_from_slice(&d[base..base + dims[2]]);
            }
        }
        let t = Tensor::from_parts(vec![dims[1], dims[0], dims[2]], out);
        Ok(self.push_op(t, Op::SwapLeading { x, dims }, &[x]))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.data(x).iter().copied().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::lit(self.value(x).numel() as f64);
        let s: T = self.data(x).iter().copied().sum();
        self.push_op(Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "dot")?;
        let s: T = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .sum();
        Ok(self.push_op(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    // ---- neural-network primitives ----------------------------------------

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        let n = T::lit(cols as f64);
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), xhat.clone());
        self.push_op(out, Op::LayerNorm { x, xhat, inv_std }, &[x])
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(shape_err!("embedding table must be a matrix"));
        }
        let (v, d) = t.dims2();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(domain_err!("token {id} outside embedding of {v}"));
            }
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], out);
        Ok(self.push_op(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    fn softmax_rows_impl(&self, x: Var, causal: bool) -> Result<Tensor<T>> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(domain_err!("softmax of an empty vector"));
        }
        let (rows, cols) = t.dims2();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            if causal {
                let keep = (r + 1).min(cols);
                kernels::softmax_in_place(&mut row[..keep]);
                for v in &mut row[keep..] {
                    *v = T::zero();
                }
            } else {
                kernels::softmax_in_place(row);
            }
        }
        Ok(Tensor::from_parts(t.shape().to_vec(), out))
    }

    /// Row-wise softmax (a vector is a single row).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.softmax_rows_impl(x, false)?;
        Ok(self.push_op(out, Op::Softmax(x), &[x]))
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.softmax_rows_impl(x, true)?;
        Ok(self.push_op(out, Op::Softmax(x), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(domain_err!("log_softmax of an empty vector"));
        }
        let (rows, cols) = t.dims2();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let lse = kernels::log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push_op(out, Op::LogSoftmax(x), &[x]))
    }

    /// `x / Σ x` for a nonnegative vector with positive sum.
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        let total: T = self.data(x).iter().copied().sum();
        if !(total > T::zero()) {
            return Err(domain_err!("normalize: nonpositive total"));
        }
        let out = self.value(x).map(|v| v / total);
        Ok(self.push_op(out, Op::Normalize { x, total }, &[x]))
    }

    /// `g · a + (1 − g) · b` for a one-element gate `g`.
    pub fn lerp(&mut self, a: Var, b: Var, g: Var) -> Result<Var> {
        self.same_shape(a, b, "lerp")?;
        if self.value(g).numel() != 1 {
            return Err(shape_err!("lerp: gate has shape {:?}", self.shape(g)));
        }
        let gv = self.value(g).item();
        let out = self.zip_with(a, b, |x, y| gv * x + (T::one() - gv) * y);
        Ok(self.push_op(out, Op::Lerp { a, b, g }, &[a, b, g]))
    }

    // ---- memory primitives -------------------------------------------------

    /// Cosine similarity of `key[W]` with every row of `mem[N×W]`:
    /// `k·m / (‖k‖‖m‖ + δ)`.
    pub fn cosine_rows(&mut self, key: Var, mem: Var, delta: T) -> Result<Var> {
        let (n, w) = self.value(mem).dims2();
        if self.value(mem).rank() != 2 || self.value(key).numel() != w {
            return Err(shape_err!(
                "cosine: key {:?} against memory {:?}",
                self.shape(key),
                self.shape(mem)
            ));
        }
        let k = self.data(key);
        let m = self.data(mem);
        let kn = k.iter().map(|&v| v * v).sum::<T>().sqrt();
        let out = (0..n)
            .map(|i| {
                let row = &m[i * w..(i + 1) * w];
                let dot: T = row.iter().zip(k).map(|(&a, &b)| a * b).sum();
                let rn = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                dot / (kn * rn + delta)
            })
            .collect();
        Ok(self.push_op(
            Tensor::vector(out),
            Op::Cosine { key, mem, delta },
            &[key, mem],
        ))
    }

    /// Circular convolution `out(i) = Σ_k s(k) · w((i − shift_k) mod N)`.
    pub fn circular_convolve(&mut self, w: Var, s: Var, shifts: &[i64]) -> Result<Var> {
        let n = self.value(w).numel();
        if self.value(s).numel() != shifts.len() {
            return Err(shape_err!(
                "circular_convolve: {} shift weights for {} shifts",
                self.value(s).numel(),
                shifts.len()
            ));
        }
        let wd = self.data(w);
        let sd = self.data(s);
        let mut out = vec![T::zero(); n];
        for (k, &shift) in shifts.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                let j = (i as i64 - shift).rem_euclid(n as i64) as usize;
                *o += sd[k] * wd[j];
            }
        }
        Ok(self.push_op(
            Tensor::vector(out),
            Op::CircConv {
                w,
                s,
                shifts: shifts.to_vec(),
            },
            &[w, s],
        ))
    }

    /// `r = Σ_i w(i) · M(i)`
    pub fn read_memory(&mut self, mem: Var, w: Var) -> Result<Var> {
        let (n, cols) = self.value(mem).dims2();
        if self.value(w).numel() != n {
            return Err(shape_err!("read: {} weights for {} rows", self.value(w).numel(), n));
        }
        let mut out = vec![T::zero(); cols];
        gemm_nn(1, n, cols, self.data(w), self.data(mem), &mut out);
        Ok(self.push_op(Tensor::vector(out), Op::ReadMem { mem, w }, &[mem, w]))
    }

    /// Erase then add: `M(i) ∘ (1 − w(i) e) + w(i) a`.
    pub fn write_memory(&mut self, mem: Var, w: Var, e: Var, a: Var) -> Result<Var> {
        let (n, cols) = self.value(mem).dims2();
        if self.value(w).numel() != n
            || self.value(e).numel() != cols
            || self.value(a).numel() != cols
        {
            return Err(shape_err!(
                "write: memory {:?}, weights {:?}, erase {:?}, add {:?}",
                self.shape(mem),
                self.shape(w),
                self.shape(e),
                self.shape(a)
            ));
        }
        let (m, wd, ed, ad) = (self.data(mem), self.data(w), self.data(e), self.data(a));
        let mut out = Vec::with_capacity(n * cols);
        for i in 0..n {
            for j in 0..cols {
                out.push(m[i * cols + j] * (T::one() - wd[i] * ed[j]) + wd[i] * ad[j]);
            }
        }
        let out = Tensor::from_parts(vec![n, cols], out);
        Ok(self.push_op(out, Op::WriteMem { mem, w, e, a }, &[mem, w, e, a]))
    }

    // ---- convolutions ------------------------------------------------------

    /// Per-channel convolution over time with "same" zero padding:
    /// `x[T×C]`, `kernel[K×C]`, odd `K`.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t, c) = self.value(x).dims2();
        let ks = self.shape(kernel);
        if ks.len() != 2 || ks[1] != c || ks[0] % 2 == 0 {
            return Err(shape_err!(
                "depthwise_conv: kernel {:?} for input {:?}",
                ks,
                self.shape(x)
            ));
        }
        let k = ks[0];
        let half = (k / 2) as isize;
        let (xd, kd) = (self.data(x), self.data(kernel));
        let mut out = vec![T::zero(); t * c];
        for ti in 0..t {
            for j in 0..k {
                let src = ti as isize + j as isize - half;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let src = src as usize;
                for ch in 0..c {
                    out[ti * c + ch] += kd[j * c + ch] * xd[src * c + ch];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(
            Tensor::from_parts(shape, out),
            Op::DepthwiseConv { x, kernel },
            &[x, kernel],
        ))
    }

    /// Unpadded strided 2-D convolution: `x[Cin×H×W]`, `kernel[Cout×Cin×kh×kw]`,
    /// `bias[Cout]` → `[Cout×H'×W']` with `H' = (H − kh)/stride + 1`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || stride == 0 {
            return Err(shape_err!("conv2d: input {:?}, kernel {:?}", xs, ks));
        }
        if self.value(bias).numel() != ks[0] {
            return Err(shape_err!("conv2d: bias of {} for {} channels", self.value(bias).numel(), ks[0]));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if h < kh || w < kw {
            return Err(Error::SequenceTooShort { len: h, min: kh });
        }
        let (ho, wo) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
        let (xd, kd, bd) = (self.data(x), self.data(kernel), self.data(bias));
        let mut out = vec![T::zero(); cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bd[co];
                    for ci in 0..cin {
                        for dy in 0..kh {
                            let iy = oy * stride + dy;
                            for dx in 0..kw {
                                let ix = ox * stride + dx;
                                acc += kd[((co * cin + ci) * kh + dy) * kw + dx]
                                    * xd[(ci * h + iy) * w + ix];
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let t = Tensor::from_parts(vec![cout, ho, wo], out);
        Ok(self.push_op(
            t,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
            },
            &[x, kernel, bias],
        ))
    }

    /// Scalar loss whose gradient with respect to `x` was computed alongside it.
    pub(crate) fn fused_scalar(&mut self, x: Var, value: T, dx: Vec<T>) -> Var {
        debug_assert_eq!(dx.len(), self.value(x).numel());
        self.push_op(Tensor::scalar(value), Op::Fused { x, dx }, &[x])
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Exact reverse-mode gradients of a one-element `loss` with respect to
    /// every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(domain_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        add_into(s, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (sv, &gv) in s.iter_mut().zip(g) {
                        *sv -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * bd[k];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for k in 0..g.len() {
                        s[k] += g[k] * ad[k];
                    }
                }
            }
            Op::AddRow(x, b) => {
                if let Some(s) = self.slot(grads, *x) {
                    add_into(s, g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    let c = s.len();
                    for (k, &gv) in g.iter().enumerate() {
                        s[k % c] += gv;
                    }
                }
            }
            Op::MulRow(x, r) => {
                let (xd, rd) = (self.data(*x), self.data(*r));
                let c = rd.len();
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        s[k] += g[k] * rd[k % c];
                    }
                }
                if let Some(s) = self.slot(grads, *r) {
                    for k in 0..g.len() {
                        s[k % c] += g[k] * xd[k];
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        s[k] += g[k] * *c;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    add_into(s, g);
                }
            }
            Op::ScaleBy(x, f) => {
                let xd = self.data(*x);
                let fv = self.value(*f).item();
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        s[k] += g[k] * fv;
                    }
                }
                if let Some(s) = self.slot(grads, *f) {
                    s[0] += dot(g, xd);
                }
            }
            Op::Pow(x, p) => {
                let xd = self.data(*x);
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        s[k] += g[k] * *p * xd[k].powf(*p - T::one());
                    }
                }
            }
            Op::PowBy(x, gamma) => {
                let xd = self.data(*x);
                let gv = self.value(*gamma).item();
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        if xd[k] > T::zero() {
                            s[k] += g[k] * gv * out[k] / xd[k];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *gamma) {
                    let mut acc = T::zero();
                    for k in 0..g.len() {
                        if xd[k] > T::zero() {
                            acc += g[k] * out[k] * xd[k].ln();
                        }
                    }
                    s[0] += acc;
                }
            }
            Op::Unary(kind, x) => {
                let xd = self.data(*x);
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..g.len() {
                        let d = match kind {
                            Unary::Sigmoid => out[k] * (T::one() - out[k]),
                            Unary::Softplus => kernels::sigmoid(xd[k]),
                            Unary::Tanh => T::one() - out[k] * out[k],
                            Unary::Relu => {
                                if xd[k] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Silu => {
                                let sg = kernels::sigmoid(xd[k]);
                                sg * (T::one() + xd[k] * (T::one() - sg))
                            }
                            Unary::Exp => out[k],
                        };
                        s[k] += g[k] * d;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.shape(*b)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(s) = self.slot(grads, *a) {
                    gemm_nt(m, n, k, g, bd, s);
                }
                if let Some(s) = self.slot(grads, *b) {
                    gemm_tn(m, k, n, ad, g, s);
                }
            }
            Op::Transpose(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    let (r, c) = self.value(*x).dims2();
                    for ii in 0..r {
                        for jj in 0..c {
                            s[ii * c + jj] += g[jj * r + ii];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = self.nodes[i].value.rows();
                let total = self.nodes[i].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if let Some(s) = self.slot(grads, p) {
                        for r in 0..rows {
                            for j in 0..c {
                                s[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(s) = self.slot(grads, p) {
                        add_into(s, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let len = self.nodes[i].value.cols();
                if let Some(s) = self.slot(grads, *x) {
                    for (r, grow) in g.chunks(len).enumerate() {
                        add_into(&mut s[r * cols + start..r * cols + start + len], grow);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(*x).cols();
                if let Some(s) = self.slot(grads, *x) {
                    add_into(&mut s[start * cols..start * cols + g.len()], g);
                }
            }
            Op::SwapLeading { x, dims } => {
                if let Some(s) = self.slot(grads, *x) {
                    let [a, b, c] = *dims;
                    for jj in 0..b {
                        for ii in 0..a {
                            let src = (jj * a + ii) * c;
                            let dst = (ii * b + jj) * c;
                            add_into(&mut s[dst..dst + c], &g[src..src + c]);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    for v in s.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    let d = g[0] / T::lit(s.len() as f64);
                    for v in s.iter_mut() {
                        *v += d;
                    }
                }
            }
            Op::Dot(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for k in 0..s.len() {
                        s[k] += g[0] * bd[k];
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for k in 0..s.len() {
                        s[k] += g[0] * ad[k];
                    }
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                if let Some(s) = self.slot(grads, *x) {
                    let cols = self.value(*x).cols();
                    let n = T::lit(cols as f64);
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mg = gr.iter().copied().sum::<T>() / n;
                        let mgx = dot(gr, xh) / n;
                        for j in 0..cols {
                            s[r * cols + j] += is * (gr[j] - mg - xh[j] * mgx);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(s) = self.slot(grads, *table) {
                    let d = self.value(*table).cols();
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    let cols = self.nodes[i].value.cols();
                    for (r, (grow, yrow)) in g.chunks(cols).zip(out.chunks(cols)).enumerate() {
                        let gy = dot(grow, yrow);
                        for j in 0..cols {
                            s[r * cols + j] += yrow[j] * (grow[j] - gy);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    let cols = self.nodes[i].value.cols();
                    for (r, (grow, yrow)) in g.chunks(cols).zip(out.chunks(cols)).enumerate() {
                        let gs: T = grow.iter().copied().sum();
                        for j in 0..cols {
                            s[r * cols + j] += grow[j] - yrow[j].exp() * gs;
                        }
                    }
                }
            }
            Op::Normalize { x, total } => {
                if let Some(s) = self.slot(grads, *x) {
                    let gy = dot(g, out);
                    for k in 0..s.len() {
                        s[k] += (g[k] - gy) / *total;
                    }
                }
            }
            Op::Lerp { a, b, g: gate } => {
                let gv = self.value(*gate).item();
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        s[k] += g[k] * gv;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for k in 0..g.len() {
                        s[k] += g[k] * (T::one() - gv);
                    }
                }
                if let Some(s) = self.slot(grads, *gate) {
                    let mut acc = T::zero();
                    for k in 0..g.len() {
                        acc += g[k] * (ad[k] - bd[k]);
                    }
                    s[0] += acc;
                }
            }
            Op::Cosine { key, mem, delta } => {
                let (n, w) = self.value(*mem).dims2();
                let (k, m) = (self.data(*key), self.data(*mem));
                let kn = k.iter().map(|&v| v * v).sum::<T>().sqrt();
                let mut dk = vec![T::zero(); w];
                let mut dm = vec![T::zero(); n * w];
                for r in 0..n {
                    if g[r] == T::zero() {
                        continue;
                    }
                    let row = &m[r * w..(r + 1) * w];
                    let rn = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let dotv = dot(row, k);
                    let den = kn * rn + *delta;
                    // d/dk (k·m / den) = m/den − (k·m) rn k / (kn den²)
                    for j in 0..w {
                        let mut dkj = row[j] / den;
                        if kn > T::zero() {
                            dkj -= dotv * rn * k[j] / (kn * den * den);
                        }
                        dk[j] += g[r] * dkj;
                        let mut dmj = k[j] / den;
                        if rn > T::zero() {
                            dmj -= dotv * kn * row[j] / (rn * den * den);
                        }
                        dm[r * w + j] += g[r] * dmj;
                    }
                }
                if let Some(s) = self.slot(grads, *key) {
                    add_into(s, &dk);
                }
                if let Some(s) = self.slot(grads, *mem) {
                    add_into(s, &dm);
                }
            }
            Op::CircConv { w, s: sh, shifts } => {
                let n = self.value(*w).numel() as i64;
                let (wd, sd) = (self.data(*w), self.data(*sh));
                if let Some(s) = self.slot(grads, *w) {
                    for (k, &shift) in shifts.iter().enumerate() {
                        for ii in 0..n {
                            let j = (ii - shift).rem_euclid(n) as usize;
                            s[j] += g[ii as usize] * sd[k];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *sh) {
                    for (k, &shift) in shifts.iter().enumerate() {
                        let mut acc = T::zero();
                        for ii in 0..n {
                            let j = (ii - shift).rem_euclid(n) as usize;
                            acc += g[ii as usize] * wd[j];
                        }
                        s[k] += acc;
                    }
                }
            }
            Op::ReadMem { mem, w } => {
                let (n, cols) = self.value(*mem).dims2();
                let (md, wd) = (self.data(*mem), self.data(*w));
                if let Some(s) = self.slot(grads, *mem) {
                    for r in 0..n {
                        for j in 0..cols {
                            s[r * cols + j] += wd[r] * g[j];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *w) {
                    for r in 0..n {
                        s[r] += dot(&md[r * cols..(r + 1) * cols], g);
                    }
                }
            }
            Op::WriteMem { mem, w, e, a } => {
                let (n, cols) = self.value(*mem).dims2();
                let (md, wd, ed, ad) = (self.data(*mem), self.data(*w), self.data(*e), self.data(*a));
                if let Some(s) = self.slot(grads, *mem) {
                    for r in 0..n {
                        for j in 0..cols {
                            s[r * cols + j] += g[r * cols + j] * (T::one() - wd[r] * ed[j]);
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *w) {
                    for r in 0..n {
                        let mut acc = T::zero();
                        for j in 0..cols {
                            acc += g[r * cols + j] * (ad[j] - md[r * cols + j] * ed[j]);
                        }
                        s[r] += acc;
                    }
                }
                if let Some(s) = self.slot(grads, *e) {
                    for r in 0..n {
                        for j in 0..cols {
                            s[j] -= g[r * cols + j] * md[r * cols + j] * wd[r];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..n {
                        for j in 0..cols {
                            s[j] += g[r * cols + j] * wd[r];
                        }
                    }
                }
            }
            Op::DepthwiseConv { x, kernel } => {
                let (t, c) = self.value(*x).dims2();
                let k = self.shape(*kernel)[0];
                let half = (k / 2) as isize;
                let (xd, kd) = (self.data(*x), self.data(*kernel));
                if let Some(s) = self.slot(grads, *x) {
                    for ti in 0..t {
                        for j in 0..k {
                            let src = ti as isize + j as isize - half;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            for ch in 0..c {
                                s[src * c + ch] += g[ti * c + ch] * kd[j * c + ch];
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *kernel) {
                    for ti in 0..t {
                        for j in 0..k {
                            let src = ti as isize + j as isize - half;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            for ch in 0..c {
                                s[j * c + ch] += g[ti * c + ch] * xd[src * c + ch];
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
            } => {
                let xs = self.shape(*x);
                let ks = self.shape(*kernel);
                let os = self.nodes[i].value.shape();
                let (cin, h, w) = (xs[0], xs[1], xs[2]);
                let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
                let (ho, wo) = (os[1], os[2]);
                let (xd, kd) = (self.data(*x), self.data(*kernel));
                if let Some(s) = self.slot(grads, *bias) {
                    for co in 0..cout {
                        s[co] += g[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum::<T>();
                    }
                }
                let mut dx = if self.needs(*x) {
                    Some(vec![T::zero(); xd.len()])
                } else {
                    None
                };
                let mut dk = if self.needs(*kernel) {
                    Some(vec![T::zero(); kd.len()])
                } else {
                    None
                };
                for co in 0..cout {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = g[(co * ho + oy) * wo + ox];
                            if gv == T::zero() {
                                continue;
                            }
                            for ci in 0..cin {
                                for dy in 0..kh {
                                    let iy = oy * stride + dy;
                                    for dxx in 0..kw {
                                        let ix = ox * stride + dxx;
                                        let ki = ((co * cin + ci) * kh + dy) * kw + dxx;
                                        let xi = (ci * h + iy) * w + ix;
                                        if let Some(dx) = dx.as_mut() {
                                            dx[xi] += gv * kd[ki];
                                        }
                                        if let Some(dk) = dk.as_mut() {
                                            dk[ki] += gv * xd[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let (Some(dx), Some(s)) = (dx, self.slot(grads, *x)) {
                    add_into(s, &dx);
                }
                if let (Some(dk), Some(s)) = (dk, self.slot(grads, *kernel)) {
                    add_into(s, &dk);
                }
            }
            Op::Fused { x, dx } => {
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..s.len() {
                        s[k] += g[0] * dx[k];
                    }
                }
            }
        }
    }
}

use crate::error::Error;

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
