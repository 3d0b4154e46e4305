use super::{Element, Graph, Tensor, Var};
use crate::error::{contract_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over probed coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub probed: usize,
}

/// Compares the tape gradient of scalar `f(x)` against central differences
/// on every coordinate of `x`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_on(f, x, eps, &coords)
}

/// As [`grad_check`], restricted to `coords`.
pub fn grad_check_on<T, F>(f: F, x: &Tensor<T>, eps: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![T::zero(); x.len()]);
    grad_check_coords(&analytic, x.data(), eps, coords, |data| {
        let mut g = Graph::new();
        let t = Tensor::new(x.shape(), data.to_vec())?;
        let xv = g.param(t);
        let loss = f(&mut g, xv)?;
        Ok(g.data(loss)[0].as_f64())
    })
}

/// Central-difference comparison for an arbitrary scalar function of a flat
/// buffer. `eval` receives the perturbed buffer and returns the loss.
pub fn grad_check_coords<T, E>(
    analytic: &[T],
    x0: &[T],
    eps: f64,
    coords: &[usize],
    mut eval: E,
) -> Result<GradCheckReport>
where
    T: Element,
    E: FnMut(&[T]) -> Result<f64>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(contract_err!("grad_check: eps must be positive, got {eps}"));
    }
    let mut buf = x0.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        probed: 0,
    };
    for &i in coords {
        if i >= buf.len() {
            return Err(contract_err!("grad_check: coordinate {i} out of range"));
        }
        let orig = buf[i];
        let hi = T::of(orig.as_f64() + eps);
        let lo = T::of(orig.as_f64() - eps);
        buf[i] = hi;
        let plus = eval(&buf)?;
        buf[i] = lo;
        let minus = eval(&buf)?;
        buf[i] = orig;
        let a = analytic[i].as_f64();
        if !plus.is_finite() || !minus.is_finite() || !a.is_finite() {
            return Err(Error::Numeric {
                index: i,
                message: format!("non-finite value while probing (f+ = {plus}, f- = {minus}, analytic = {a})"),
            });
        }
        // divide by the step actually realized in storage precision
        let numeric = (plus - minus) / (hi.as_f64() - lo.as_f64());
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if report.probed == 0 || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
        }
        report.probed += 1;
    }
    Ok(report)
}
