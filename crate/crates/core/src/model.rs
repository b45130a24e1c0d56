//! Assembles the encoders, heads and loss weights for one configuration,
//! and runs a batch through them.

use crate::autodiff::{ParamStore, Real, Tape, Var};
use crate::config::TrainConfig;
use crate::eeg_encoder::{EegEncoder, EegEncoderConfig, ViewPair};
use crate::error::Result;
use crate::heads::{classification_loss, Classifier, Decoder, DecoderConfig};
use crate::objectives::{contrastive_loss, total_loss, LossWeights, StepPos, Term};
use crate::rng::seed_all;
use crate::text::{TextEncoder, TextEncoderConfig};

/// Input sizes fixed by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub channels: usize,
    pub freqs: usize,
    pub frames: usize,
    pub vocab_size: usize,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub store: ParamStore<T>,
    pub eeg: EegEncoder,
    pub classifier: Classifier,
    /// Present whenever text is used; frozen if no loss reaches it.
    pub text: Option<TextEncoder>,
    pub decoder: Option<Decoder>,
    pub weights: LossWeights,
    pub enabled: [bool; 3],
}

/// One training or evaluation batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub views: ViewPair<T>,
    pub labels: Vec<usize>,
    /// BOS … EOS note tokens per sample.
    pub tokens: Vec<Vec<usize>>,
}

pub struct BatchForward {
    pub logits: Var,
    pub h_eeg: Var,
    pub h_text: Option<Var>,
    pub mu: Option<Var>,
    /// Raw loss per enabled term.
    pub terms: Vec<(Term, Var)>,
    pub total: Var,
}

impl<T: Real> Model<T> {
    /// Builds every component from the `init` stream of `cfg.seed`.
    pub fn new(cfg: &TrainConfig, dims: ModelDims) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed_all(cfg.seed).stream("init");
        let mut store = ParamStore::new();
        let eeg = EegEncoder::new(
            &mut store,
            EegEncoderConfig {
                channels: dims.channels,
                freqs: dims.freqs,
                frames: dims.frames,
                width: cfg.eeg_width,
                heads: cfg.eeg_heads,
                ff_width: cfg.eeg_ff,
                layers: cfg.eeg_layers,
                input_scale: cfg.input_scale,
                gated: cfg.gating,
            },
            &mut rng,
        );
        let out_dim = eeg.out_dim();
        let classifier = Classifier::new(&mut store, out_dim, cfg.eeg_width, &mut rng);
        let enabled = cfg.enabled_terms();
        let text = if cfg.use_text {
            let enc = TextEncoder::new(
                &mut store,
                TextEncoderConfig {
                    vocab_size: dims.vocab_size,
                    width: cfg.text_width,
                    heads: cfg.text_heads,
                    ff_width: cfg.text_ff,
                    layers: cfg.text_layers,
                    max_len: cfg.max_tokens,
                    out_dim,
                    trainable_layers: cfg.text_trainable_layers,
                },
                &mut rng,
            )?;
            if !enabled[Term::Con as usize] {
                store.set_trainable_prefix(&format!("{}.", TextEncoder::PREFIX), false);
            }
            Some(enc)
        } else {
            None
        };
        let decoder = enabled[Term::Rec as usize].then(|| {
            Decoder::new(
                &mut store,
                DecoderConfig {
                    vocab_size: dims.vocab_size,
                    width: cfg.text_width,
                    heads: cfg.text_heads,
                    ff_width: cfg.text_ff,
                    layers: cfg.decoder_layers,
                    max_len: cfg.max_tokens,
                    cond_dim: out_dim,
                },
                &mut rng,
            )
        });
        let weights = LossWeights::new(&mut store, enabled);
        Ok(Model {
            store,
            eeg,
            classifier,
            text,
            decoder,
            weights,
            enabled,
        })
    }

    /// Elements of every parameter that receives gradients.
    pub fn count_trainable_params(&self) -> usize {
        self.store.count_trainable()
    }

    /// Forward pass with every enabled loss and the weighted total. The
    /// contrastive term is skipped for single-sample batches.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>, at: StepPos) -> Result<BatchForward> {
        let out = self.eeg.forward(&self.store, tape, &batch.views)?;
        let logits = self.classifier.logits(&self.store, tape, out.h_eeg)?;
        let mut terms = vec![(Term::Cls, classification_loss(tape, logits, &batch.labels)?)];
        let h_text = match &self.text {
            Some(t) => Some(t.forward(&self.store, tape, &batch.tokens)?),
            None => None,
        };
        if self.enabled[Term::Con as usize] && batch.labels.len() >= 2 {
            let lt = self.store.var(tape, self.weights.log_temperature.expect("temperature exists"));
            let l = contrastive_loss(tape, out.h_eeg, h_text.expect("text encoder exists"), lt)?;
            terms.push((Term::Con, l));
        }
        if let Some(dec) = &self.decoder {
            terms.push((Term::Rec, dec.reconstruction_loss(&self.store, tape, out.h_eeg, &batch.tokens)?));
        }
        let weighted: Vec<(Term, Var, Var)> = terms
            .iter()
            .map(|&(t, l)| {
                let a = self.weights.alpha[t as usize].expect("alpha exists for enabled term");
                (t, l, self.store.var(tape, a))
            })
            .collect();
        let total = total_loss(tape, &weighted, at)?;
        Ok(BatchForward {
            logits,
            h_eeg: out.h_eeg,
            h_text,
            mu: out.mu,
            terms,
            total,
        })
    }
}
