//! Central-difference verification of analytic gradients.

use super::{Graph, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Compares the analytic gradient of a scalar-valued `f` against central
/// differences at `point`, returning
/// `max |analytic - numeric| / max(1, |analytic|)` over all input coordinates.
///
/// `f` must build the same graph for every call; the inputs are handed over
/// as differentiable leaves in order.
pub fn grad_check<T, F>(f: F, point: &[Tensor<T>], step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let two = T::lit(2.0);
    let mut worst = T::zero();
    let mut probe: Vec<Tensor<T>> = point.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, point[k].shape());
        for i in 0..point[k].len() {
            let orig = point[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (two * step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / T::one().max(a.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
