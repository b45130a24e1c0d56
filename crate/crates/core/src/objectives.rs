//! Symmetric contrastive alignment and the exp(α)-weighted joint loss.

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const INIT_TEMPERATURE: f64 = 0.07;
pub const TEMPERATURE_MIN: f64 = 0.01;
pub const TEMPERATURE_MAX: f64 = 100.0;
/// Training aborts when any loss weight exceeds this.
pub const MAX_LOSS_WEIGHT: f64 = 1e4;

/// CLIP-style loss over paired rows of `eeg` and `text`, both `[N, D]`,
/// at temperature `exp(log_temperature)` clamped into
/// `[TEMPERATURE_MIN, TEMPERATURE_MAX]`.
pub fn contrastive_loss<T: Real>(tape: &mut Tape<T>, eeg: Var, text: Var, log_temperature: Var) -> Result<Var> {
    let (se, st) = (tape.shape(eeg).to_vec(), tape.shape(text).to_vec());
    if se.len() != 2 || se != st {
        return Err(Error::shape("contrastive_loss", format!("{se:?} vs {st:?}")));
    }
    let n = se[0];
    if n < 2 {
        return Err(Error::Contract(format!("contrastive loss needs at least 2 pairs, got {n}")));
    }
    let a = tape.l2_normalize(eeg)?;
    let b = tape.l2_normalize(text)?;
    let bt = tape.transpose(b, 0, 1)?;
    let sim = tape.matmul(a, bt)?;
    let lt = tape.clamp(log_temperature, TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    let neg = tape.scale(lt, -1.0);
    let inv_tau = tape.exp(neg);
    let logits = tape.mul(sim, inv_tau)?;
    let diag: Vec<Option<usize>> = (0..n).map(Some).collect();
    let rows = tape.cross_entropy(logits, &diag)?;
    let rows = tape.mean_all(rows);
    let logits_t = tape.transpose(logits, 0, 1)?;
    let cols = tape.cross_entropy(logits_t, &diag)?;
    let cols = tape.mean_all(cols);
    let sum = tape.add(rows, cols)?;
    Ok(tape.scale(sum, 0.5))
}

/// Loss terms by position in the weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Cls = 0,
    Con = 1,
    Rec = 2,
}

impl Term {
    pub const ALL: [Term; 3] = [Term::Cls, Term::Con, Term::Rec];

    pub fn name(self) -> &'static str {
        match self {
            Term::Cls => "cls",
            Term::Con => "con",
            Term::Rec => "rec",
        }
    }
}

/// Learnable `α_i`, one per enabled term, and the log-temperature.
#[derive(Clone, Debug)]
pub struct LossWeights {
    pub alpha: [Option<ParamId>; 3],
    pub log_temperature: Option<ParamId>,
}

impl LossWeights {
    pub fn new<T: Real>(store: &mut ParamStore<T>, enabled: [bool; 3]) -> Self {
        let mut alpha = [None; 3];
        for t in Term::ALL {
            if enabled[t as usize] {
                alpha[t as usize] = Some(store.add(format!("loss.alpha_{}", t.name()), Tensor::zeros(&[1]), false));
            }
        }
        let log_temperature = enabled[Term::Con as usize].then(|| {
            store.add(
                "loss.log_temperature",
                Tensor::from_f64(&[1], &[INIT_TEMPERATURE.ln()]).unwrap(),
                false,
            )
        });
        LossWeights { alpha, log_temperature }
    }

    pub fn lambdas<T: Real>(&self, store: &ParamStore<T>) -> [Option<f64>; 3] {
        self.alpha.map(|a| a.map(|id| store.get(id).value.data()[0].f64().exp()))
    }

    pub fn temperature<T: Real>(&self, store: &ParamStore<T>) -> Option<f64> {
        self.log_temperature.map(|id| {
            store.get(id).value.data()[0].f64().exp().clamp(TEMPERATURE_MIN, TEMPERATURE_MAX)
        })
    }
}

/// Diagnostic position for abort messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepPos {
    pub epoch: usize,
    pub step: usize,
}

/// `Σ exp(α_i)·L_i` over the supplied `(term, loss, α)` triples; disabled
/// terms are simply absent.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, terms: &[(Term, Var, Var)], at: StepPos) -> Result<Var> {
    if terms.is_empty() {
        return Err(Error::Contract("total loss needs at least one term".into()));
    }
    let mut total = None;
    for &(term, loss, alpha) in terms {
        let value = tape.value(loss).item().f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("{} loss", term.name()),
                epoch: at.epoch,
                step: at.step,
            });
        }
        let lambda = tape.exp(alpha);
        let lv = tape.value(lambda).data()[0].f64();
        if !(lv > 0.0) || lv > MAX_LOSS_WEIGHT {
            return Err(Error::NonFinite {
                what: format!("loss weight for {} = {lv}", term.name()),
                epoch: at.epoch,
                step: at.step,
            });
        }
        let lambda = tape.reshape(lambda, &[])?;
        let weighted = tape.mul(lambda, loss)?;
        total = Some(match total {
            None => weighted,
            Some(t) => tape.add(t, weighted)?,
        });
    }
    Ok(total.unwrap())
}
