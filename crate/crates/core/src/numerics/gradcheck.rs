//! Central finite-difference verification of tape gradients.

use super::store::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the gradient of `loss` with respect to each listed parameter
/// against central differences. `stride` subsamples large tensors.
pub fn check_params<F>(store: &mut ParameterStore, names: &[&str], stride: usize, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        let grads = tape.backward(l);
        let mut out = Vec::new();
        for name in names {
            let v = tape.param(name)?;
            let n = store.get(name)?.len();
            out.push(grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]));
        }
        out
    };

    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        Ok(tape.scalar(l))
    };

    let mut report = GradCheckReport::default();
    for (name, grad) in names.iter().zip(&analytic) {
        let n = store.get(name)?.len();
        for j in (0..n).step_by(stride.max(1)) {
            let orig = store.get(name)?.values[j];
            store.get_mut(name)?.values[j] = orig + FD_STEP;
            let up = eval(store)?;
            store.get_mut(name)?.values[j] = orig - FD_STEP;
            let down = eval(store)?;
            store.get_mut(name)?.values[j] = orig;
            report.record(grad[j], (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}

/// Same as [`check_params`] but for an input vector fed through `input`.
pub fn check_input<F>(store: &ParameterStore, x: &[f64], loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let xv = tape.input(x.to_vec());
    let l = loss(&mut tape, xv)?;
    let grads = tape.backward(l);
    let analytic = grads.wrt(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |x: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let xv = tape.input(x);
        let l = loss(&mut tape, xv)?;
        Ok(tape.scalar(l))
    };

    let mut report = GradCheckReport::default();
    for j in 0..x.len() {
        let mut up = x.to_vec();
        up[j] += FD_STEP;
        let mut down = x.to_vec();
        down[j] -= FD_STEP;
        report.record(analytic[j], (eval(up)? - eval(down)?) / (2.0 * FD_STEP));
    }
    Ok(report)
}
