//! Linear layers and MLPs over [`ParamVars`].

use crate::error::{Result, TensorError};
use crate::params::ParamVars;
use crate::scalar::Scalar;
use crate::tape::Var;

/// `x · W + b` with `W = {name}.w` of shape `(in, out)` and `b = {name}.b`.
pub fn linear<'t, T: Scalar>(params: &ParamVars<'t, T>, name: &str, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let w = params.get(&format!("{name}.w"))?;
    let b = params.get(&format!("{name}.b"))?;
    x.linear(w, Some(b))
}

/// Linear layers `{name}.l0, {name}.l1, ...` with ReLU between them and no
/// activation after the last. `widths` is the full chain, input first.
pub fn mlp<'t, T: Scalar>(
    params: &ParamVars<'t, T>,
    name: &str,
    x: &Var<'t, T>,
    widths: &[usize],
) -> Result<Var<'t, T>> {
    if widths.len() < 2 {
        return Err(TensorError::invalid("mlp", format!("{name}: need at least two widths")));
    }
    let mut h = x.clone();
    for (i, pair) in widths.windows(2).enumerate() {
        let layer = format!("{name}.l{i}");
        let w = params.get(&format!("{layer}.w"))?;
        if w.shape() != [pair[0], pair[1]] {
            return Err(TensorError::shape("mlp", w.shape(), pair));
        }
        if i > 0 {
            h = h.relu()?;
        }
        h = linear(params, &layer, &h)?;
    }
    Ok(h)
}
