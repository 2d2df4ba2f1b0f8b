//! Central finite-difference comparison against tape gradients (64-bit).

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement found for one input tensor.
#[derive(Clone, Debug)]
pub struct InputCheck {
    pub index: usize,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares tape gradients of the scalar `f(inputs)` to central differences.
///
/// `f` must build the same graph for any perturbation of the inputs.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, floor: f64, f: F) -> Result<Vec<InputCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    tape.backward(loss)?;

    let mut report = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, &v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        let mut worst = InputCheck {
            index: idx,
            max_rel_err: 0.0,
            worst_element: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for e in 0..inputs[idx].len() {
            let orig = work[idx].data()[e];
            work[idx].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[idx].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[idx].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[e];
            let err = rel_err(a, numeric, floor);
            if err > worst.max_rel_err || e == 0 {
                worst = InputCheck {
                    index: idx,
                    max_rel_err: err.max(worst.max_rel_err),
                    worst_element: e,
                    analytic: a,
                    numeric,
                };
            }
        }
        report.push(worst);
    }
    Ok(report)
}

pub fn max_error(report: &[InputCheck]) -> f64 {
    report.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
}
