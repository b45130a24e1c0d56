//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over elements of `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
    /// with `floor = REL_ERROR_FLOOR · max(1, |f(x)|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Gradient magnitudes below this (relative to `max(1, |f(x)|)`) are
/// compared absolutely; central differences cannot resolve them.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Checks the gradient of the scalar function `f` with respect to every
/// element of every tensor in `inputs` (64-bit).
///
/// `max_coords` limits the number of perturbed elements per input; they are
/// spread evenly over the tensor.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract("grad_check step must be positive".into()));
    }
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::domain("grad_check", format!("f(x) = {v} is not finite")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.value(out).item();
    if !f0.is_finite() {
        return Err(Error::domain("grad_check", "f(x) is not finite"));
    }
    let floor = REL_ERROR_FLOOR * f0.abs().max(1.0);
    tape.backward(out)?;

    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; x.numel()]);
        let n = x.numel();
        let count = max_coords.map_or(n, |m| m.min(n));
        for c in 0..count {
            let j = if count == n { c } else { c * n / count };
            let orig = x.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let abs = (analytic[j] - numeric).abs();
            let denom = analytic[j].abs().max(numeric.abs()).max(floor);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / denom);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked,
        passed: max_rel < tol,
    })
}

/// [`grad_check`] with respect to the trainable parameters of `store`.
/// `f` builds the scalar on a fresh tape, reading parameters from the store.
pub fn grad_check_params<F>(
    store: &mut ParamStore<f64>,
    f: F,
    step: f64,
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract("grad_check step must be positive".into()));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape_value(f(s, &mut tape)?, &tape);
        if !v.is_finite() {
            return Err(Error::domain("grad_check", format!("f(x) = {v} is not finite")));
        }
        Ok(v)
    };
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let f0 = tape_value(out, &tape);
    if !f0.is_finite() {
        return Err(Error::domain("grad_check", "f(x) is not finite"));
    }
    let floor = REL_ERROR_FLOOR * f0.abs().max(1.0);
    tape.backward(out)?;
    store.zero_grad();
    store.accumulate_grads(&tape)?;

    let (mut max_rel, mut max_abs, mut checked) = (0.0f64, 0.0f64, 0);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let analytic = store.get(id).grad.clone();
        let n = analytic.len();
        let count = max_coords.map_or(n, |m| m.min(n));
        for c in 0..count {
            let j = if count == n { c } else { c * n / count };
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let abs = (analytic[j] - numeric).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / analytic[j].abs().max(numeric.abs()).max(floor));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        checked,
        passed: max_rel < tol,
    })
}

fn tape_value(v: Var, tape: &Tape<f64>) -> f64 {
    tape.value(v).item()
}
