//! Central finite-difference gradient checks.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! the reverse pass it validates.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor so entries with vanishing gradient are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)` over all checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / REL_FLOOR.max(a.abs()).max(n.abs())
}

/// Compares tape gradients of `build(inputs)` with central differences.
///
/// `build` receives the tape and one leaf per input tensor and returns a scalar loss.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..work[ti].len() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((ti, j, a, numeric));
            }
        }
    }
    Ok(report)
}
