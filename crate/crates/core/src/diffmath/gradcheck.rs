use super::graph::{Graph, Matrix, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central finite
/// differences. Returns the largest `|autodiff - fd| / max(1, |fd|)` over
/// all coordinates of `x`.
pub fn grad_check<F>(mut f: F, x: &Matrix, step: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    let analytic = g.backward(out)?.wrt(xv);

    let mut eval = |point: Matrix| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(point);
        let out = f(&mut g, v)?;
        let value = g.scalar(out);
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(value)
    };

    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += step;
        let mut minus = x.clone();
        minus[[r, c]] -= step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let err = (analytic[[r, c]] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
