//! Dual-view spectrogram encoder: a temporal and a frequency transformer
//! branch, mean pooling and gated fusion.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{AttentionMask, Linear, TransformerStack};
use crate::signal::Spectrogram;

/// `temporal [T_f, C·F]` and `frequency [F, C·T_f]` views of one spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair<T> {
    pub temporal: Tensor<T>,
    pub frequency: Tensor<T>,
}

/// `Z_t[t, c·F + f] = Z[c, f, t]` and `Z_f[f, c·T_f + t] = Z[c, f, t]`.
pub fn make_views<T: Real>(z: &Spectrogram) -> ViewPair<T> {
    let (c_n, f_n, t_n) = (z.channels, z.freqs, z.frames);
    let mut zt = vec![T::zero(); t_n * c_n * f_n];
    let mut zf = vec![T::zero(); f_n * c_n * t_n];
    for c in 0..c_n {
        for f in 0..f_n {
            for t in 0..t_n {
                let v = T::c(z.get(c, f, t));
                zt[t * c_n * f_n + c * f_n + f] = v;
                zf[f * c_n * t_n + c * t_n + t] = v;
            }
        }
    }
    ViewPair {
        temporal: Tensor::new(&[t_n, c_n * f_n], zt).unwrap(),
        frequency: Tensor::new(&[f_n, c_n * t_n], zf).unwrap(),
    }
}

/// Inverse of the temporal view.
pub fn spectrogram_from_temporal<T: Real>(zt: &Tensor<T>, channels: usize) -> Spectrogram {
    let (t_n, cf) = (zt.shape()[0], zt.shape()[1]);
    let f_n = cf / channels;
    let mut z = Spectrogram::zeros(channels, f_n, t_n);
    for t in 0..t_n {
        for c in 0..channels {
            for f in 0..f_n {
                let i = z.index(c, f, t);
                z.values[i] = zt.data()[t * cf + c * f_n + f].f64();
            }
        }
    }
    z
}

/// Inverse of the frequency view.
pub fn spectrogram_from_frequency<T: Real>(zf: &Tensor<T>, channels: usize) -> Spectrogram {
    let (f_n, ct) = (zf.shape()[0], zf.shape()[1]);
    let t_n = ct / channels;
    let mut z = Spectrogram::zeros(channels, f_n, t_n);
    for f in 0..f_n {
        for c in 0..channels {
            for t in 0..t_n {
                let i = z.index(c, f, t);
                z.values[i] = zf.data()[f * ct + c * t_n + t].f64();
            }
        }
    }
    z
}

/// Stacks per-sample views into `[B, T_f, C·F]` and `[B, F, C·T_f]`.
pub fn stack_views<T: Real>(views: &[ViewPair<T>]) -> Result<ViewPair<T>> {
    let first = views
        .first()
        .ok_or_else(|| Error::shape("stack_views", "empty batch".to_string()))?;
    let stack = |get: &dyn Fn(&ViewPair<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
        let s0 = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(views.len() * get(first).numel());
        for v in views {
            if get(v).shape() != s0.as_slice() {
                return Err(Error::shape("stack_views", format!("{:?} vs {s0:?}", get(v).shape())));
            }
            data.extend_from_slice(get(v).data());
        }
        Tensor::new(&[views.len(), s0[0], s0[1]], data)
    };
    Ok(ViewPair {
        temporal: stack(&|v| &v.temporal)?,
        frequency: stack(&|v| &v.frequency)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EegEncoderConfig {
    pub channels: usize,
    pub freqs: usize,
    pub frames: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub layers: usize,
    /// Multiplier applied to spectrogram magnitudes before projection.
    pub input_scale: f64,
    pub gated: bool,
}

/// Projection, learnable positions and a transformer stack over one view.
#[derive(Clone, Debug)]
pub struct Branch {
    pub proj: Linear,
    pub pos: ParamId,
    pub stack: TransformerStack,
    pub input_dim: usize,
    pub max_len: usize,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        max_len: usize,
        width: usize,
        heads: usize,
        ff_width: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Branch {
            proj: Linear::new(store, &format!("{name}.proj"), input_dim, width, true, rng),
            pos: store.add_weight(format!("{name}.pos"), &[max_len, width], rng),
            stack: TransformerStack::new(store, &format!("{name}.enc"), layers, width, heads, ff_width, rng),
            input_dim,
            max_len,
        }
    }

    /// Token matrix `H [B, S, width]` for `x [B, S, input_dim]`.
    pub fn encode<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.input_dim {
            return Err(Error::shape("encode_branch", format!("{s:?} vs input width {}", self.input_dim)));
        }
        if s[1] > self.max_len || s[1] == 0 {
            return Err(Error::shape(
                "encode_branch",
                format!("sequence of {} exceeds positional table of {}", s[1], self.max_len),
            ));
        }
        let h = self.proj.forward(store, tape, x)?;
        let pos = store.var(tape, self.pos);
        let pos = tape.slice(pos, 0, 0, s[1])?;
        let h = tape.add(h, pos)?;
        self.stack.forward(store, tape, h, &AttentionMask::none())
    }
}

/// Mean over the sequence axis: `[B, S, w] → [B, w]`.
pub fn pool<T: Real>(tape: &mut Tape<T>, h: Var) -> Result<Var> {
    tape.mean(h, 1)
}

/// `h_eeg = [μ_t·h_t ; μ_f·h_f]` with `(μ_t, μ_f) = softmax(h_cat · W_g)`.
/// Returns the embedding and the coefficients `[B, 2]`.
pub fn fuse_gated<T: Real>(tape: &mut Tape<T>, h_t: Var, h_f: Var, w_g: Var) -> Result<(Var, Var)> {
    let cat = tape.concat(&[h_t, h_f], 1)?;
    let scores = tape.matmul(cat, w_g)?;
    let mu = tape.softmax(scores, 1)?;
    let mu_t = tape.slice(mu, 1, 0, 1)?;
    let mu_f = tape.slice(mu, 1, 1, 1)?;
    let a = tape.mul(h_t, mu_t)?;
    let b = tape.mul(h_f, mu_f)?;
    Ok((tape.concat(&[a, b], 1)?, mu))
}

/// Fixed equal weights: `[h_t/2 ; h_f/2]`.
pub fn fuse_static<T: Real>(tape: &mut Tape<T>, h_t: Var, h_f: Var) -> Result<Var> {
    let a = tape.scale(h_t, 0.5);
    let b = tape.scale(h_f, 0.5);
    tape.concat(&[a, b], 1)
}

#[derive(Clone, Debug)]
pub struct EegEncoder {
    pub cfg: EegEncoderConfig,
    pub temporal: Branch,
    pub frequency: Branch,
    /// `[2·width, 2]`, the transpose of the 2 × 2d gate matrix.
    pub gate: Option<ParamId>,
}

pub struct EegOutput {
    pub h_eeg: Var,
    /// Gating coefficients `[B, 2]`, absent for static fusion.
    pub mu: Option<Var>,
}

impl EegEncoder {
    pub const PREFIX: &'static str = "eeg";

    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: EegEncoderConfig, rng: &mut impl Rng) -> Self {
        let p = Self::PREFIX;
        let (c, f, t, w) = (cfg.channels, cfg.freqs, cfg.frames, cfg.width);
        let temporal = Branch::new(store, &format!("{p}.temporal"), c * f, t, w, cfg.heads, cfg.ff_width, cfg.layers, rng);
        let frequency = Branch::new(store, &format!("{p}.frequency"), c * t, f, w, cfg.heads, cfg.ff_width, cfg.layers, rng);
        let gate = cfg.gated.then(|| store.add_weight(format!("{p}.gate"), &[2 * w, 2], rng));
        EegEncoder {
            cfg,
            temporal,
            frequency,
            gate,
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.cfg.width
    }

    /// Encodes stacked views into `h_eeg [B, 2·width]`.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, views: &ViewPair<T>) -> Result<EegOutput> {
        let xt = tape.constant(views.temporal.clone());
        let xt = tape.scale(xt, self.cfg.input_scale);
        let xf = tape.constant(views.frequency.clone());
        let xf = tape.scale(xf, self.cfg.input_scale);
        let ht = self.temporal.encode(store, tape, xt)?;
        let ht = pool(tape, ht)?;
        let hf = self.frequency.encode(store, tape, xf)?;
        let hf = pool(tape, hf)?;
        match self.gate {
            Some(g) => {
                let w = store.var(tape, g);
                let (h_eeg, mu) = fuse_gated(tape, ht, hf, w)?;
                Ok(EegOutput { h_eeg, mu: Some(mu) })
            }
            None => Ok(EegOutput {
                h_eeg: fuse_static(tape, ht, hf)?,
                mu: None,
            }),
        }
    }
}
