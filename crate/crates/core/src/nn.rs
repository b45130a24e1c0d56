//! Layers shared by the EEG branches, the text encoder and the decoder.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

/// Large negative logit used for masked attention entries.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_weight(format!("{name}.weight"), &[input, output], rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), &[output]));
        Linear { weight, bias }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = store.var(tape, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = store.var(tape, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add_ones(format!("{name}.gain"), &[width]),
            bias: store.add_zeros(format!("{name}.bias"), &[width]),
        }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = store.var(tape, self.gain);
        let b = store.var(tape, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Which keys a query may attend to.
#[derive(Clone, Debug, Default)]
pub struct AttentionMask {
    /// `[batch][position]`, true where the key is padding.
    pub key_padding: Option<Vec<Vec<bool>>>,
    pub causal: bool,
}

impl AttentionMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.key_padding.is_none() && !self.causal
    }

    /// Flattened `[batch, heads, seq, seq]` mask, true where blocked.
    fn expand(&self, batch: usize, heads: usize, seq: usize) -> Result<Rc<[bool]>> {
        if let Some(kp) = &self.key_padding {
            if kp.len() != batch || kp.iter().any(|r| r.len() != seq) {
                return Err(Error::shape(
                    "attention_mask",
                    format!("padding mask does not cover [{batch}, {seq}]"),
                ));
            }
        }
        let mut out = Vec::with_capacity(batch * heads * seq * seq);
        for b in 0..batch {
            for _ in 0..heads {
                for q in 0..seq {
                    for k in 0..seq {
                        let pad = self.key_padding.as_ref().is_some_and(|kp| kp[b][k]);
                        out.push(pad || (self.causal && k > q));
                    }
                }
            }
        }
        Ok(out.into())
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub width: usize,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads > 0 && width.is_multiple_of(heads), "width {width} not divisible by {heads} heads");
        MultiHeadAttention {
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, true, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, true, rng),
            width,
            heads,
        }
    }

    /// Self-attention over `x [B, S, width]`. Returns the output and the
    /// attention weights `[B·heads, S, S]`.
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
        mask: &AttentionMask,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.width {
            return Err(Error::shape(
                "attention",
                format!("{s:?} vs width {}", self.width),
            ));
        }
        let (batch, seq, h) = (s[0], s[1], self.heads);
        let dh = self.width / h;
        let qkv = self.qkv.forward(store, tape, x)?;
        let qkv = tape.reshape(qkv, &[batch, seq, 3, h, dh])?;
        let qkv = tape.permute(qkv, &[2, 0, 3, 1, 4])?;
        let qkv = tape.reshape(qkv, &[3, batch * h, seq, dh])?;
        let mut parts = [qkv; 3];
        for (i, p) in parts.iter_mut().enumerate() {
            let t = tape.slice(qkv, 0, i, 1)?;
            *p = tape.reshape(t, &[batch * h, seq, dh])?;
        }
        let [q, k, v] = parts;
        let scores = tape.bmm(q, k, true)?;
        let mut scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        if !mask.is_empty() {
            let m = mask.expand(batch, h, seq)?;
            scores = tape.masked_fill(scores, m, MASK_VALUE)?;
        }
        let attn = tape.softmax(scores, 2)?;
        let ctx = tape.bmm(attn, v, false)?;
        let ctx = tape.reshape(ctx, &[batch, h, seq, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[batch, seq, self.width])?;
        let out = self.out.forward(store, tape, ctx)?;
        Ok((out, attn))
    }
}

/// Pre-norm transformer layer: `x + MHA(LN(x))`, then `x + FF(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        TransformerLayer {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            ff1: Linear::new(store, &format!("{name}.ff1"), width, ff_width, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_width, width, true, rng),
        }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
        mask: &AttentionMask,
    ) -> Result<Var> {
        let h = self.norm1.forward(store, tape, x)?;
        let (a, _) = self.attn.forward(store, tape, h, mask)?;
        let x = tape.add(x, a)?;
        let h = self.norm2.forward(store, tape, x)?;
        let h = self.ff1.forward(store, tape, h)?;
        let h = tape.gelu(h);
        let h = self.ff2.forward(store, tape, h)?;
        tape.add(x, h)
    }
}

/// Stack of transformer layers followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub layers: Vec<TransformerLayer>,
    pub final_norm: LayerNorm,
}

impl TransformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        layers: usize,
        width: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, &format!("{name}.layer{i}"), width, heads, ff_width, rng))
            .collect();
        TransformerStack {
            layers,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), width),
        }
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        mut x: Var,
        mask: &AttentionMask,
    ) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(store, tape, x, mask)?;
        }
        self.final_norm.forward(store, tape, x)
    }
}
