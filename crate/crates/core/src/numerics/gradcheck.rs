//! Central finite-difference checks of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Per-leaf `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
}

fn evaluate<F>(leaves: &[Tensor], f: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`. Norms below `floor` count as zero, in
/// which case the absolute difference is reported.
pub fn check_gradients<F>(leaves: &[Tensor], f: F, h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t)).collect();
        let out = f(&mut tape, &vars)?;
        let mut grads = tape.backward(out)?;
        vars.iter()
            .zip(leaves)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros_like(t)))
            .collect()
    };

    let mut work = leaves.to_vec();
    let mut relative_errors = Vec::with_capacity(leaves.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let mut numeric = vec![0.0; leaf.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = leaf.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = evaluate(&work, &f)?;
            work[i].data_mut()[j] = orig - h;
            let minus = evaluate(&work, &f)?;
            work[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        let a = analytic[i].data();
        if a.iter().chain(&numeric).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient check"));
        }
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        relative_errors.push(if scale < floor { diff } else { diff / scale });
    }
    let max_relative_error = relative_errors.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        relative_errors,
        max_relative_error,
    })
}
