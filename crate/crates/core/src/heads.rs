//! Six-class classifier and the prefix-conditioned autoregressive decoder.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nn::{AttentionMask, Linear, TransformerStack};
use crate::text::{pad_batch, BOS, EOS, PAD};

/// `2d → d (gelu) → 6` MLP.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub hidden: Linear,
    pub out: Linear,
}

impl Classifier {
    pub const PREFIX: &'static str = "cls";

    pub fn new<T: Real>(store: &mut ParamStore<T>, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let p = Self::PREFIX;
        Classifier {
            hidden: Linear::new(store, &format!("{p}.hidden"), input, hidden, true, rng),
            out: Linear::new(store, &format!("{p}.out"), hidden, NUM_CLASSES, true, rng),
        }
    }

    /// Logits `[B, 6]`.
    pub fn logits<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, h_eeg: Var) -> Result<Var> {
        let h = self.hidden.forward(store, tape, h_eeg)?;
        let h = tape.gelu(h);
        self.out.forward(store, tape, h)
    }

    /// Class probabilities `[B, 6]`.
    pub fn classify<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, h_eeg: Var) -> Result<Var> {
        let l = self.logits(store, tape, h_eeg)?;
        tape.softmax(l, 1)
    }
}

/// Batch-mean negative log-likelihood of the true classes.
pub fn classification_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    if labels.iter().any(|&y| y >= NUM_CLASSES) {
        return Err(Error::Contract(format!("class label out of range in {labels:?}")));
    }
    let targets: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
    let nll = tape.cross_entropy(logits, &targets)?;
    Ok(tape.mean_all(nll))
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub layers: usize,
    /// Longest token sequence (BOS … EOS).
    pub max_len: usize,
    /// Width of the conditioning vector.
    pub cond_dim: usize,
}

/// Causal transformer whose first input position is a projection of
/// `h_eeg`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub prefix: Linear,
    pub stack: TransformerStack,
    pub out: Linear,
}

impl Decoder {
    pub const PREFIX: &'static str = "dec";

    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: DecoderConfig, rng: &mut impl Rng) -> Self {
        let p = Self::PREFIX;
        let tok_emb = store.add_weight(format!("{p}.tok_emb"), &[cfg.vocab_size, cfg.width], rng);
        let pos_emb = store.add_weight(format!("{p}.pos_emb"), &[cfg.max_len, cfg.width], rng);
        let prefix = Linear::new(store, &format!("{p}.prefix"), cfg.cond_dim, cfg.width, true, rng);
        let stack = TransformerStack::new(store, &format!("{p}.dec"), cfg.layers, cfg.width, cfg.heads, cfg.ff_width, rng);
        let out = Linear::new(store, &format!("{p}.out"), cfg.width, cfg.vocab_size, true, rng);
        Decoder {
            cfg,
            tok_emb,
            pos_emb,
            prefix,
            stack,
            out,
        }
    }

    /// Logits `[B, 1 + S, V]` for the input `[prefix(h_eeg), ids…]`, where
    /// `ids` is a flat `[B, S]` block.
    pub fn logits<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        h_eeg: Var,
        ids: &[usize],
        seq: usize,
    ) -> Result<Var> {
        let batch = tape.shape(h_eeg)[0];
        if ids.len() != batch * seq {
            return Err(Error::shape("decoder", format!("{} ids for [{batch}, {seq}]", ids.len())));
        }
        if seq + 1 > self.cfg.max_len {
            return Err(Error::shape(
                "decoder",
                format!("input of {} positions exceeds positional table of {}", seq + 1, self.cfg.max_len),
            ));
        }
        let pre = self.prefix.forward(store, tape, h_eeg)?;
        let pre = tape.reshape(pre, &[batch, 1, self.cfg.width])?;
        let table = store.var(tape, self.tok_emb);
        let x = if seq > 0 {
            let emb = tape.embedding(table, ids, &[batch, seq])?;
            tape.concat(&[pre, emb], 1)?
        } else {
            pre
        };
        let pos = store.var(tape, self.pos_emb);
        let pos = tape.slice(pos, 0, 0, seq + 1)?;
        let x = tape.add(x, pos)?;
        let mask = AttentionMask {
            key_padding: None,
            causal: true,
        };
        let h = self.stack.forward(store, tape, x, &mask)?;
        self.out.forward(store, tape, h)
    }

    /// Per-sample sum of token NLLs under teacher forcing, averaged over the
    /// batch. Each sequence runs BOS … EOS; padding positions carry no
    /// target and the prefix position predicts nothing.
    pub fn reconstruction_loss<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        h_eeg: Var,
        seqs: &[Vec<usize>],
    ) -> Result<Var> {
        let batch = seqs.len();
        if batch == 0 || tape.shape(h_eeg)[0] != batch {
            return Err(Error::shape("reconstruction_loss", format!("{batch} sequences")));
        }
        if seqs.iter().any(|s| s.len() < 2 || s[0] != BOS) {
            return Err(Error::Contract("target sequences must start with BOS and hold a token".into()));
        }
        // Inputs drop each sequence's last token; targets drop BOS.
        let inputs: Vec<Vec<usize>> = seqs.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
        let (ids, seq, _) = pad_batch(&inputs);
        let logits = self.logits(store, tape, h_eeg, &ids, seq)?;
        let v = self.cfg.vocab_size;
        let logits = tape.reshape(logits, &[batch * (seq + 1), v])?;
        let mut targets = vec![None; batch * (seq + 1)];
        for (b, s) in seqs.iter().enumerate() {
            for (j, &tok) in s[1..].iter().enumerate() {
                if tok != PAD {
                    targets[b * (seq + 1) + j + 1] = Some(tok);
                }
            }
        }
        let nll = tape.cross_entropy(logits, &targets)?;
        let total = tape.sum_all(nll);
        Ok(tape.scale(total, 1.0 / batch as f64))
    }

    /// Greedy decoding from `[prefix, BOS]`; each output starts with BOS and
    /// ends at EOS or after `max_len` tokens.
    pub fn generate_greedy<T: Real>(&self, store: &ParamStore<T>, h_eeg: &Tensor<T>, max_len: usize) -> Result<Vec<Vec<usize>>> {
        if max_len > self.cfg.max_len || max_len < 2 {
            return Err(Error::Contract(format!(
                "max_len {max_len} outside 2..={}",
                self.cfg.max_len
            )));
        }
        let batch = h_eeg.shape()[0];
        let mut seqs = vec![vec![BOS]; batch];
        let mut done = vec![false; batch];
        while seqs[0].len() < max_len && done.iter().any(|d| !d) {
            let seq = seqs[0].len();
            let mut tape = Tape::new();
            let h = tape.constant(h_eeg.clone());
            let ids: Vec<usize> = seqs.concat();
            let logits = self.logits(store, &mut tape, h, &ids, seq)?;
            let data = tape.value(logits).data();
            let v = self.cfg.vocab_size;
            for b in 0..batch {
                if done[b] {
                    seqs[b].push(PAD);
                    continue;
                }
                let last = (b * (seq + 1) + seq) * v;
                // PAD and BOS are never targets, so they are never emitted.
                let row = &data[last..last + v];
                let tok = (0..v)
                    .filter(|&i| i != PAD && i != BOS)
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(j) if row[j] >= row[i] => Some(j),
                        _ => Some(i),
                    })
                    .expect("vocabulary has non-special tokens");
                seqs[b].push(tok);
                done[b] = tok == EOS;
            }
        }
        for s in &mut seqs {
            if let Some(end) = s.iter().position(|&t| t == EOS) {
                s.truncate(end + 1);
            }
            while s.last() == Some(&PAD) {
                s.pop();
            }
        }
        Ok(seqs)
    }
}
