use super::tape::{Tape, Var};
use super::{NumError, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared on an absolute scale instead of blowing up.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coords_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences at every coordinate of every input.
pub fn grad_check<F>(f: F, point: &[Tensor], tol: f64) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    grad_check_sampled(f, point, tol, usize::MAX)
}

/// As [`grad_check`], but probes at most `max_coords` evenly strided
/// coordinates per input tensor.
pub fn grad_check_sampled<F>(f: F, point: &[Tensor], tol: f64, max_coords: usize) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let eval = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), NumError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(NumError::NonScalar {
                shape: tape.shape(out).to_vec(),
            });
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(point)?;
    let grads = tape.backward(out);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coords_checked: 0,
        tol,
        passed: true,
    };
    let mut probe = point.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let n = point[ti].len();
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(point[ti].shape()));
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for c in (0..n).step_by(stride) {
            let orig = point[ti].data()[c];
            probe[ti].data_mut()[c] = orig + FD_STEP;
            let (tp, _, op) = eval(&probe)?;
            let plus = tp.value(op).item();
            probe[ti].data_mut()[c] = orig - FD_STEP;
            let (tm, _, om) = eval(&probe)?;
            let minus = tm.value(om).item();
            probe[ti].data_mut()[c] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_err(analytic.data()[c], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ti, c);
            }
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}
