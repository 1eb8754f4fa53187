use super::{AutodiffError, Graph, Tensor, Var};

/// Compares the analytic gradient of a scalar function with central
/// differences and returns the largest relative error,
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` must rebuild its computation on the graph it is handed; it is called
/// once with a differentiable leaf and `2 * x.len()` times with constants.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let leaf = g.param(x.clone());
    let out = f(&mut g, leaf)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(leaf)
        .ok_or_else(|| AutodiffError::Contract("input leaf has no gradient".into()))?
        .clone();

    let eval = |probe: Tensor, coordinate: usize| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let v = g.constant(probe);
        let out = f(&mut g, v)?;
        let y = g.value(out).item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(AutodiffError::NonFinite { coordinate })
        }
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * h);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(AutodiffError::NonFinite { coordinate: i });
        }
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
