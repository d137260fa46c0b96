use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn without_bias<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), in_dim, out_dim, rng);
        Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, T::lit(LAYER_NORM_EPS));
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

/// Position-wise `Linear → activation → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    inner: Linear,
    outer: Linear,
    activation: Activation,
}

impl FeedForward {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng),
            activation,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = match self.activation {
            Activation::Relu => g.relu(h),
            Activation::Swish => g.silu(h),
        };
        self.outer.forward(g, h)
    }
}

/// Scaled dot-product attention over `n_heads` column groups.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    n_heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Self {
        MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            // A key bias only shifts every score of a query equally.
            key: Linear::without_bias(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            n_heads,
            d_model,
        }
    }

    /// Queries from `x[Tq × d]`, keys and values from `context[Tk × d]`.
    /// With `causal`, query `i` only attends to keys `0..=i`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        context: Var,
        causal: bool,
    ) -> Result<Var> {
        if g.value(x).cols() != self.d_model || g.value(context).cols() != self.d_model {
            return Err(shape_err!(
                "attention inputs {:?} / {:?} for width {}",
                g.shape(x),
                g.shape(context),
                self.d_model
            ));
        }
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let dk = self.d_model / self.n_heads;
        let scale = T::lit(1.0 / libm::sqrt(dk as f64));
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = if causal {
                g.causal_softmax(scores)?
            } else {
                g.softmax(scores)?
            };
            heads.push(g.matmul(attn, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads)?
        };
        self.output.forward(g, joined)
    }
}

/// Absolute sinusoidal position table `[len × dim]`.
pub fn sinusoidal_positions<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = libm::pow(10000.0, -2.0 * pair / dim as f64);
            let angle = pos as f64 * rate;
            let v = if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
            data.push(T::lit(v));
        }
    }
    Tensor::from_parts(alloc::vec![len, dim], data)
}

/// `x · √d + positions`
pub fn add_positions<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    let (len, dim) = g.value(x).dims2();
    let scaled = g.scale(x, T::lit(libm::sqrt(dim as f64)));
    let pe = g.constant(sinusoidal_positions(len, dim));
    g.add(scaled, pe)
}
