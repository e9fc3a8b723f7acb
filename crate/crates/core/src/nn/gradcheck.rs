//! Central finite-difference oracle for tape gradients.

use super::{Graph, ParamSet, Real, Var};
use crate::error::Result;

/// A scalar function of the parameters, buildable at any precision.
pub trait LossFn {
    fn loss<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compares the tape gradient at precision `T` against central differences
/// of the f64 loss. The relative error of each element is
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check<T: Real>(params: &ParamSet<f64>, f: &impl LossFn, step: f64, floor: f64) -> Result<GradCheckReport> {
    let cast: ParamSet<T> = params.cast();
    let analytic = {
        let mut g = Graph::new(&cast);
        let loss = f.loss(&mut g)?;
        g.backward(loss)?
    };
    let mut work = params.clone();
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(p);
        let loss = f.loss(&mut g)?;
        Ok(g.scalar(loss))
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        for k in 0..n {
            let orig = params.get(id).as_slice().expect("standard layout")[k];
            work.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig + step;
            let up = eval(&work)?;
            work.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig - step;
            let down = eval(&work)?;
            work.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).as_slice().expect("standard layout")[k].to_f64().unwrap_or(f64::NAN);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if !(rel <= report.max_relative_error) {
                report.max_relative_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_tensor = params.name(id).to_string();
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
