use thiserror::Error;

use super::{Bindings, Graph, GraphError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradCheckError {
    #[error("function value is not finite at coordinate {0}")]
    NonFinite(usize),
    #[error("analytic gradient has {got} entries, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Compares an analytic gradient with central differences.
///
/// `f` returns the function value and its analytic gradient. The result is
/// `max_i |g_i - fd_i| / max(1, |g_i|)`.
pub fn check_gradient<F>(f: F, point: &[f64], h: f64) -> Result<f64, GradCheckError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (v0, analytic) = f(point);
    if !v0.is_finite() {
        return Err(GradCheckError::NonFinite(0));
    }
    if analytic.len() != point.len() {
        return Err(GradCheckError::Length {
            got: analytic.len(),
            expected: point.len(),
        });
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x).0;
        x[i] = point[i] - h;
        let fm = f(&x).0;
        x[i] = point[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(GradCheckError::NonFinite(i));
        }
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference check of `d root / d leaf` for one parameter or
/// differentiable input, perturbing the leaf through binding overrides.
pub fn check_leaf_gradient(
    graph: &Graph,
    bindings: &Bindings,
    root: Var,
    leaf: Var,
    h: f64,
) -> Result<f64, GradCheckError> {
    let base = match bindings.get(leaf) {
        Some(m) => m.clone(),
        None => graph
            .param_value(leaf)
            .cloned()
            .ok_or(GraphError::BadBinding(leaf.index()))?,
    };
    let shape = base.dim();
    let point: Vec<f64> = base.iter().copied().collect();
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>), GraphError> {
        let mut b = bindings.clone();
        b.set(
            leaf,
            ndarray::Array2::from_shape_vec(shape, x.to_vec()).expect("leaf shape"),
        );
        let ev = graph.forward(&b, &[root])?;
        let v = ev.scalar(root)?;
        let g = ev.backward_wrt(root, &[leaf])?;
        let grad = match g.get(leaf) {
            Some(m) => m.iter().copied().collect(),
            None => vec![0.0; x.len()],
        };
        Ok((v, grad))
    };
    // surface graph errors before differencing
    eval(&point)?;
    check_gradient(
        |x| eval(x).unwrap_or((f64::NAN, vec![f64::NAN; x.len()])),
        &point,
        h,
    )
}
