//! Central-difference gradient checking at 64-bit precision.

use super::{Precision, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|numeric|, 1)` over all checked entries.
    pub max_rel_err: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the tape's gradients of `f` against central differences.
///
/// `f` maps leaves to an output; non-scalar outputs are summed.
/// `max_entries_per_input` bounds the number of perturbed entries per input
/// (entries are strided evenly when an input is larger).
pub fn check<F>(inputs: &[Tensor], step: f64, max_entries_per_input: usize, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new(Precision::F64);
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars)?;
        Ok(y.sum_all().value().data()[0])
    };

    let tape = Tape::new(Precision::F64);
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = f(&tape, &vars)?.sum_all();
    let grads = tape.backward(y)?;

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").clone();
        let n = xs[k].numel();
        let stride = n.div_ceil(max_entries_per_input.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let orig = xs[k].data()[e];
            xs[k].data_mut()[e] = orig + step;
            let hi = eval(&xs)?;
            xs[k].data_mut()[e] = orig - step;
            let lo = eval(&xs)?;
            xs[k].data_mut()[e] = orig;
            let numeric = (hi - lo) / (2.0 * step);
            let err = (analytic.data()[e] - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (k, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
