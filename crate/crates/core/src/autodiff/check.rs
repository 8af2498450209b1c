use crate::error::Result;
use crate::scalar::Scalar;

use super::{Graph, Tensor, Var};

/// Worst relative disagreement between the reverse-mode gradient of `f` at
/// `x` and central differences with step `eps`. The relative error of each
/// coordinate uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
///
/// `f` must build its scalar output on the graph it is handed, starting from
/// the leaf it is given, and must be deterministic.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let eval = |point: Tensor<T>| -> Result<T> {
        let mut g = Graph::new();
        let leaf = g.constant(point);
        let out = f(&mut g, leaf)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let leaf = g.param(x.clone());
    let out = f(&mut g, leaf)?;
    g.backward(out)?;
    let analytic = g
        .grad(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));

    let two = T::one() + T::one();
    let floor = T::of(1e-8);
    let mut worst = T::zero();
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
