//! Central finite-difference gradient verification.
//!
//! The numerical side only ever evaluates the forward function, so it stays
//! independent of every backward rule it is used to check.

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per input, `|analytic - numeric| / max(|analytic|, |numeric|)` in the L2 norm.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative_errors.iter().all(|e| *e < tolerance)
    }
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn numerical_gradient(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let up = f(&probe);
            probe.data_mut()[i] = orig - step;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compares tape gradients of `f` against central differences for every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .wrt(*v)
                .map(|g| g.map_or_else(|| vec![0.0; t.numel()], |g| g.data().to_vec()))
        })
        .collect::<Result<_>>()?;

    let eval = |replaced: usize, probe: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(if i == replaced { probe.clone() } else { t.clone() }))
            .collect();
        f(&tape, &vars)?.value().item()
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut failure: Option<Error> = None;
        let numeric = numerical_gradient(input, step, |probe| match eval(i, probe) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        relative_errors.push(relative_error(&analytic[i], &numeric));
    }
    Ok(GradCheckReport { relative_errors })
}
