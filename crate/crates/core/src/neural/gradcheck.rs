use crate::error::Result;
use crate::neural::graph::{Eval, Graph, Tape};
use crate::neural::params::ParamStore;

/// A scalar computation that can be recorded on any [`Graph`].
pub trait ScalarProgram {
    fn build<G: Graph>(&self, g: &mut G) -> Result<G::Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients with central differences of step `step`.
///
/// The relative error of each entry is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check<P: ScalarProgram>(
    params: &mut ParamStore,
    program: &P,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let grads = {
        let mut tape = Tape::new(params);
        let loss = program.build(&mut tape)?;
        tape.backward(&loss)?
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let analytic = grads.get(id)?.to_vec();
        for (k, a) in analytic.iter().enumerate() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + step;
            let plus = eval(params, program)?;
            params.get_mut(id).data_mut()[k] = orig - step;
            let minus = eval(params, program)?;
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel;
                report.worst = format!("{}[{k}]", params.name(id));
                report.analytic = *a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn eval<P: ScalarProgram>(params: &ParamStore, program: &P) -> Result<f64> {
    let mut g = Eval::new(params);
    let v = program.build(&mut g)?;
    Ok(g.value(&v)[0])
}
