//! Dense 2-D tensors with reverse-mode differentiation.
//!
//! [`Graph`] records operations on [`Mat`] values and back-propagates from a
//! scalar. Trainable tensors live in a [`ParamStore`]; a graph borrows them,
//! and backward adds their gradients into a [`Gradients`] buffer.

mod graph;
mod mat;
mod params;

pub use graph::{Graph, NodeGrads, Var, LAYER_NORM_EPS};
pub use mat::{Mat, Scalar};
pub use params::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Gradients, ParamId, ParamStore};

use crate::Result;

/// Normwise relative error `‖a − b‖_∞ / max(‖a‖_∞, ‖b‖_∞)` (0 when both
/// vanish).
pub fn relative_error(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let diff = a.as_slice().iter().zip(b.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.max_abs().max(b.max_abs());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares backward gradients of `f` with central finite differences.
///
/// `f` builds a scalar from leaf variables holding `inputs`; the returned
/// vector holds one [`relative_error`] per input.
pub fn check_gradients<F>(inputs: &[Mat<f64>], step: f64, f: F) -> Result<Vec<f64>>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Mat<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|m| g.leaf(m.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).get(0, 0))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out, None)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (n, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Mat::zeros(inputs[n].rows(), inputs[n].cols()));
        let mut numeric = Mat::zeros(inputs[n].rows(), inputs[n].cols());
        let mut xs = inputs.to_vec();
        for i in 0..inputs[n].len() {
            let x0 = inputs[n].as_slice()[i];
            xs[n].as_mut_slice()[i] = x0 + step;
            let fp = eval(&xs)?;
            xs[n].as_mut_slice()[i] = x0 - step;
            let fm = eval(&xs)?;
            xs[n].as_mut_slice()[i] = x0;
            numeric.as_mut_slice()[i] = (fp - fm) / (2.0 * step);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
