//! Central finite-difference checking of tape gradients.

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error among entries whose absolute error exceeds the floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol
    }
}

/// Compares [`Tape::backward`] with central differences of step `h` for
/// every entry of every input.
///
/// `f` builds a scalar from leaves holding `inputs` on a fresh tape. An entry
/// whose absolute error is below `abs_floor` counts as agreeing.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    h: f64,
    abs_floor: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for idx in 0..inputs[which].len() {
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + h;
            let plus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - h;
            let minus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[idx];
            let abs = (a - numeric).abs();
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs <= abs_floor {
                continue;
            }
            let rel = abs / a.abs().max(numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((which, idx));
            }
        }
    }
    Ok(report)
}
