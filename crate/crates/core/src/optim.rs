//! AdamW with decoupled weight decay.

use crate::autodiff::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moments per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        AdamWState {
            step: 0,
            m: store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
            v: store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
        }
    }
}

/// One update over every trainable parameter:
/// `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`, with `wd` applied only to parameters
/// flagged for decay.
pub fn adamw_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamWState<T>, cfg: &AdamWConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::shape("adamw_step", format!("{} moments for {} params", state.m.len(), store.len())));
    }
    for p in store.iter() {
        if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", p.name),
                epoch: 0,
                step: state.step as usize + 1,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let (one_b1, one_b2) = (T::c(1.0 - cfg.beta1), T::c(1.0 - cfg.beta2));
    let lr = T::c(cfg.learning_rate);
    let (inv_bc1, inv_bc2) = (T::c(1.0 / bc1), T::c(1.0 / bc2));
    let eps = T::c(cfg.eps);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let wd = T::c(if p.decay { cfg.weight_decay } else { 0.0 });
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for ((theta, &g), (mi, vi)) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = b1 * *mi + one_b1 * g;
            *vi = b2 * *vi + one_b2 * g * g;
            let mhat = *mi * inv_bc1;
            let vhat = *vi * inv_bc2;
            *theta = *theta - lr * (mhat / (vhat.sqrt() + eps) + wd * *theta);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one_param(value: f64, grad: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(&[1], &[value]).unwrap(), decay);
        s.get_mut(id).grad[0] = grad;
        s
    }

    #[test]
    fn decay_acts_without_gradient() {
        let mut s = one_param(1.0, 0.0, true);
        let mut st = AdamWState::new(&s);
        let cfg = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        adamw_step(&mut s, &mut st, &cfg).unwrap();
        assert!((s.iter().next().unwrap().value.data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        for g in [3.0, -0.2] {
            let mut s = one_param(0.5, g, true);
            let mut st = AdamWState::new(&s);
            let cfg = AdamWConfig {
                learning_rate: 0.01,
                weight_decay: 0.0,
                ..Default::default()
            };
            adamw_step(&mut s, &mut st, &cfg).unwrap();
            let expected = 0.5 - 0.01 * g / (g.abs() + 1e-8);
            assert!((s.iter().next().unwrap().value.data()[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rate_and_frozen_params_do_not_move() {
        let mut s = one_param(0.5, 1.0, true);
        let mut st = AdamWState::new(&s);
        let cfg = AdamWConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        adamw_step(&mut s, &mut st, &cfg).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.5);

        let mut s = one_param(0.5, 1.0, true);
        s.set_trainable_prefix("w", false);
        let mut st = AdamWState::new(&s);
        adamw_step(&mut s, &mut st, &AdamWConfig::default()).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.5);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = one_param(0.5, f64::NAN, true);
        let mut st = AdamWState::new(&s);
        let err = adamw_step(&mut s, &mut st, &AdamWConfig::default()).unwrap_err();
        assert!(err.to_string().contains("gradient of w"), "{err}");
    }
}
