//! Central finite-difference verification of analytic gradients.
//!
//! [`CheckOptions::check`] differences an `f64` closure. The store and input
//! checks take precision-generic functions and evaluate the differences in
//! double-double arithmetic, so that coordinates with gradients far below
//! the `f64` rounding noise of a deep composite are still resolved.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{domain_err, Result};
use crate::numerics::{Extended, Graph, ParamStore, Real, Tensor, Var};

pub mod battery;

/// A scalar built from the parameters bound to the graph.
pub trait ParamFn {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var>;
}

/// A scalar function of one input tensor; bound parameters stay fixed.
pub trait InputFn {
    fn eval<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var>;
}

/// Outcome of one gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
    /// Coordinate with the largest relative error, or the first non-finite one.
    pub worst_coordinate: Option<usize>,
    pub diagnostic: Option<String>,
}

/// Compare two gradient vectors. The relative error of a coordinate is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn compare(name: &str, analytic: &[f64], numeric: &[f64], tol: f64) -> GradReport {
    let mut report = GradReport {
        op_name: String::from(name),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        passed: true,
        worst_coordinate: None,
        diagnostic: None,
    };
    if analytic.len() != numeric.len() {
        report.passed = false;
        report.max_rel_error = f64::INFINITY;
        report.diagnostic = Some(format!(
            "gradient lengths differ: {} analytic vs {} numeric",
            analytic.len(),
            numeric.len()
        ));
        return report;
    }
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if !a.is_finite() || !n.is_finite() {
            report.passed = false;
            report.max_rel_error = f64::NAN;
            report.max_abs_error = f64::NAN;
            report.worst_coordinate = Some(i);
            report.diagnostic = Some(format!(
                "non-finite gradient at coordinate {i}: analytic {a}, numeric {n}"
            ));
            return report;
        }
        let abs = libm_abs(a - n);
        let rel = abs / libm_abs(a).max(libm_abs(n)).max(1e-8);
        report.max_abs_error = report.max_abs_error.max(abs);
        if report.worst_coordinate.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = Some(i);
        }
    }
    report.passed = report.max_rel_error <= tol;
    if !report.passed {
        let i = report.worst_coordinate.unwrap_or(0);
        report.diagnostic = Some(format!(
            "coordinate {i}: analytic {}, numeric {}",
            analytic[i], numeric[i]
        ));
    }
    report
}

fn libm_abs(x: f64) -> f64 {
    num_traits::Float::abs(x)
}

fn eval_scalar<F>(f: &F, theta: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let mut g = Graph::detached();
    let x = g.leaf(theta.clone(), false);
    let y = f(&mut g, x)?;
    if g.value(y).numel() != 1 {
        return Err(domain_err!("checked function must return a scalar"));
    }
    Ok(g.value(y).item())
}

/// `(f(θ + ε e_i) − f(θ − ε e_i)) / 2ε` for every coordinate.
pub fn numeric_gradient<F>(f: &F, theta: &Tensor<f64>, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(theta.numel());
    for i in 0..theta.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_scalar(f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Analytic gradient of `f` at `theta` via one backward sweep.
pub fn analytic_gradient<F>(f: &F, theta: &Tensor<f64>) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let mut g = Graph::detached();
    let x = g.leaf(theta.clone(), true);
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    Ok(grads.get_or_zeros(x, theta.shape()).into_data())
}

/// Step size, tolerance and an optional corruption added to the first
/// analytic coordinate (a negative control for the checker itself).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub eps: f64,
    pub tol: f64,
    pub fault: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            fault: None,
        }
    }
}

impl CheckOptions {
    pub(crate) fn finish(&self, name: &str, mut analytic: Vec<f64>, numeric: &[f64]) -> GradReport {
        if let (Some(f), Some(a)) = (self.fault, analytic.first_mut()) {
            *a += f;
        }
        compare(name, &analytic, numeric, self.tol)
    }

    pub fn check<F>(&self, name: &str, f: F, theta: &Tensor<f64>) -> Result<GradReport>
    where
        F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
    {
        let analytic = analytic_gradient(&f, theta)?;
        let numeric = numeric_gradient(&f, theta, self.eps)?;
        Ok(self.finish(name, analytic, &numeric))
    }

    /// Gradient with respect to every scalar of `store`.
    pub fn check_params<F: ParamFn>(&self, name: &str, store: &ParamStore<f64>, f: &F) -> Result<GradReport> {
        let analytic: Vec<f64> = {
            let mut g = Graph::new(store);
            let y = scalar(&mut g, |g| f.eval(g))?;
            let grads = g.backward(y)?;
            g.param_grads(&grads)
                .into_iter()
                .zip(store.tensors())
                .flat_map(|(gr, t)| {
                    gr.unwrap_or_else(|| Tensor::zeros(t.shape()))
                        .into_data()
                        .into_iter()
                })
                .collect()
        };
        let eval = |s: &ParamStore<Extended>| -> Result<Extended> {
            let mut g = Graph::new(s);
            let y = scalar(&mut g, |g| f.eval(g))?;
            Ok(g.value(y).item())
        };
        let mut probe = store.cast::<Extended>();
        let mut numeric = Vec::with_capacity(analytic.len());
        for t in 0..probe.len() {
            for i in 0..probe.tensors()[t].numel() {
                numeric.push(self.central(|v| {
                    let orig = probe.tensors()[t].data()[i];
                    probe.tensors_mut()[t].data_mut()[i] = orig + v;
                    let y = eval(&probe);
                    probe.tensors_mut()[t].data_mut()[i] = orig;
                    y
                })?);
            }
        }
        let mut report = self.finish(name, analytic, &numeric);
        if let (Some(c), Some(d)) = (report.worst_coordinate, report.diagnostic.as_mut()) {
            let mut offset = 0;
            for id in store.ids() {
                let n = store.get(id).numel();
                if c < offset + n {
                    d.push_str(&format!(" ({}[{}])", store.name(id), c - offset));
                    break;
                }
                offset += n;
            }
        }
        Ok(report)
    }

    /// Gradient with respect to the input `x` while the parameters of
    /// `store` stay fixed.
    pub fn check_input<F: InputFn>(
        &self,
        name: &str,
        store: &ParamStore<f64>,
        x: &Tensor<f64>,
        f: &F,
    ) -> Result<GradReport> {
        let analytic = {
            let mut g = Graph::new(store);
            let xv = g.leaf(x.clone(), true);
            let y = scalar(&mut g, |g| f.eval(g, xv))?;
            g.backward(y)?.get_or_zeros(xv, x.shape()).into_data()
        };
        let wide = store.cast::<Extended>();
        let mut probe = x.cast::<Extended>();
        let mut numeric = Vec::with_capacity(x.numel());
        for i in 0..x.numel() {
            numeric.push(self.central(|v| {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + v;
                let mut g = Graph::new(&wide);
                let xv = g.leaf(probe.clone(), false);
                let y = scalar(&mut g, |g| f.eval(g, xv));
                probe.data_mut()[i] = orig;
                Ok(g.value(y?).item())
            })?);
        }
        Ok(self.finish(name, analytic, &numeric))
    }

    fn central(&self, mut at: impl FnMut(Extended) -> Result<Extended>) -> Result<f64> {
        let eps = Extended::lit(self.eps);
        let plus = at(eps)?;
        let minus = at(-eps)?;
        Ok(((plus - minus) / (eps + eps)).as_f64())
    }
}

fn scalar<T: Real>(g: &mut Graph<'_, T>, f: impl FnOnce(&mut Graph<'_, T>) -> Result<Var>) -> Result<Var> {
    let y = f(g)?;
    if g.value(y).numel() != 1 {
        return Err(domain_err!("checked function must return a scalar"));
    }
    Ok(y)
}

/// Check the gradient of a scalar function of one tensor input.
pub fn grad_check<F>(name: &str, f: F, theta: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    CheckOptions { eps, tol, fault: None }.check(name, f, theta)
}

/// Check the gradient of a scalar built from a parameter store with respect
/// to every stored scalar.
pub fn grad_check_params<F: ParamFn>(
    name: &str,
    store: &ParamStore<f64>,
    f: &F,
    eps: f64,
    tol: f64,
) -> Result<GradReport> {
    CheckOptions { eps, tol, fault: None }.check_params(name, store, f)
}
