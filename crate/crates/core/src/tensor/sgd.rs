use super::{ConvGrads, ConvParams};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Plain SGD: `p <- p - lr * g` for every scalar of every layer.
///
/// All gradients are checked for finiteness before anything is written, so
/// a failed step leaves the parameters untouched. `names[i]` identifies
/// layer `i` in error messages.
pub fn sgd_step<T: Scalar>(
    params: &mut [ConvParams<T>],
    grads: &[ConvGrads<T>],
    names: &[String],
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != names.len() {
        return shape_err(format!("sgd_step: {} params, {} grads, {} names", params.len(), grads.len(), names.len()));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.weight.shape() != g.weight.shape() || p.bias.len() != g.bias.len() {
            return shape_err(format!(
                "sgd_step: gradient for {name} has shape {} but parameter has {}",
                g.weight.shape(),
                p.weight.shape()
            ));
        }
        if let Some(pos) = g.weight.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {name}.weight at flat index {pos}")));
        }
        if let Some(pos) = g.bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {name}.bias[{pos}]")));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
            *w -= lr * d;
        }
        for (b, &d) in p.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
    }
    Ok(())
}
