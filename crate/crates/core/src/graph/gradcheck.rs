use serde::Serialize;

use super::{GraphError, NodeId, ParamSet, Tape};

/// Central-difference step used by the checks.
pub const FD_EPSILON: f64 = 1e-4;

/// Comparison of analytic and finite-difference gradients for one parameter.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub frozen: bool,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Passes only when every parameter's error is strictly below the tolerance.
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|)`, with the denominator floored so that two
/// vanishing gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(params: &ParamSet, build: &F) -> Result<f64, GraphError>
where
    F: Fn(&mut Tape) -> Result<NodeId, GraphError>,
{
    let mut tape = Tape::new(params);
    let root = build(&mut tape)?;
    Ok(tape.value(root).data()[0])
}

/// Compares the tape's gradients with central finite differences for every
/// entry of every parameter. Frozen parameters are constants: both the
/// analytic and the numeric gradient are reported as exactly zero.
pub fn grad_check<F>(
    params: &mut ParamSet,
    build: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GraphError>
where
    F: Fn(&mut Tape) -> Result<NodeId, GraphError>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let root = build(&mut tape)?;
        tape.backward(root, 1.0)?
    };
    let mut report = GradCheckReport {
        epsilon,
        tolerance,
        params: Vec::with_capacity(params.len()),
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let (name, frozen, n) = {
            let p = params.get(id);
            (p.name.clone(), p.frozen, p.values.len())
        };
        let mut check = ParamCheck {
            name,
            entries: n,
            frozen,
            max_rel_error: 0.0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
        };
        if !frozen {
            for k in 0..n {
                let orig = params.get(id).values.data()[k];
                params.get_mut(id).values.data_mut()[k] = orig + epsilon;
                let plus = eval_loss(params, &build);
                params.get_mut(id).values.data_mut()[k] = orig - epsilon;
                let minus = eval_loss(params, &build);
                params.get_mut(id).values.data_mut()[k] = orig;
                let numeric = (plus? - minus?) / (2.0 * epsilon);
                let a = analytic.get(id).data()[k];
                check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
                check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
                check.max_abs_numeric = check.max_abs_numeric.max(numeric.abs());
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
