//! Templated expert-opinion notes, word-level tokenization and the compact
//! transformer text encoder.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Var};
use crate::dataset::{ClassLabel, VoteDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::nn::{AttentionMask, Linear, TransformerStack};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Most classes a note mentions.
pub const MAX_CLAUSES: usize = 3;

/// Integer percentages, round-half-up, with any residual moved onto the
/// class holding the most votes (ties to the lowest id).
pub fn rounded_percentages(votes: &VoteDistribution) -> [u32; NUM_CLASSES] {
    let total = votes.total() as u64;
    let mut pct = [0u32; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        // floor((200·c + total) / (2·total)) is round-half-up of 100·c/total.
        pct[i] = ((200 * votes.counts[i] as u64 + total) / (2 * total)) as u32;
    }
    let top = votes.consensus().id();
    let sum: i64 = pct.iter().map(|&p| p as i64).sum();
    pct[top] = (pct[top] as i64 + 100 - sum).max(0) as u32;
    pct
}

/// Classes named in the note: the top three by count, ties to the lowest
/// id, listed in class-id order.
fn mentioned(votes: &VoteDistribution) -> Vec<usize> {
    let mut order: Vec<usize> = (0..NUM_CLASSES).filter(|&i| votes.counts[i] > 0).collect();
    order.sort_by(|&a, &b| votes.counts[b].cmp(&votes.counts[a]).then(a.cmp(&b)));
    order.truncate(MAX_CLAUSES);
    order.sort_unstable();
    order
}

/// Percentages a rendered note states; unmentioned classes are zero.
pub fn note_percentages(votes: &VoteDistribution) -> [u32; NUM_CLASSES] {
    let pct = rounded_percentages(votes);
    let mut out = [0u32; NUM_CLASSES];
    if let Some(i) = (0..NUM_CLASSES).find(|&i| votes.counts[i] == votes.total()) {
        out[i] = 100;
        return out;
    }
    for i in mentioned(votes) {
        out[i] = pct[i];
    }
    out
}

pub fn render_note(votes: &VoteDistribution) -> String {
    let total = votes.total();
    if let Some(i) = (0..NUM_CLASSES).find(|&i| votes.counts[i] == total) {
        return format!(
            "Expert opinions show complete agreement, with all identifying {} (100%).",
            ClassLabel::ALL[i].pattern_phrase()
        );
    }
    let pct = rounded_percentages(votes);
    let clauses: Vec<String> = mentioned(votes)
        .into_iter()
        .map(|i| format!("{}% identifying {}", pct[i], ClassLabel::ALL[i].pattern_phrase()))
        .collect();
    format!("Expert opinions show mixed agreement, with {}.", clauses.join(", "))
}

fn is_standalone(c: char) -> bool {
    c == '%' || c.is_ascii_punctuation()
}

/// Lowercased words with punctuation and `%` split off.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if is_standalone(c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.extend(c.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Lowercased, single-spaced token form of `text`.
pub fn normalize(text: &str) -> String {
    split_words(text).join(" ")
}

fn pattern_tokens() -> Vec<(usize, Vec<String>)> {
    ClassLabel::ALL
        .iter()
        .map(|c| (c.id(), split_words(c.pattern_phrase())))
        .collect()
}

/// Recovers stated percentages from a note, tolerant of case, spacing and
/// detached punctuation. `None` if the text does not follow a template.
pub fn parse_note(text: &str) -> Option<[u32; NUM_CLASSES]> {
    let toks = split_words(text);
    let t: Vec<&str> = toks.iter().map(String::as_str).collect();
    let patterns = pattern_tokens();
    let mut pos = 0;
    let expect = |pos: &mut usize, words: &[&str]| -> bool {
        if t.len() >= *pos + words.len() && t[*pos..*pos + words.len()] == *words {
            *pos += words.len();
            true
        } else {
            false
        }
    };
    let pattern = |pos: &mut usize| -> Option<usize> {
        for (id, p) in &patterns {
            if t.len() >= *pos + p.len() && t[*pos..*pos + p.len()].iter().zip(p).all(|(a, b)| *a == b) {
                *pos += p.len();
                return Some(*id);
            }
        }
        None
    };
    let number = |pos: &mut usize| -> Option<u32> {
        let v: u32 = t.get(*pos)?.parse().ok()?;
        *pos += 1;
        (v <= 100).then_some(v)
    };
    let end = |pos: usize| pos == t.len() || (pos + 1 == t.len() && t[pos] == ".");

    if !expect(&mut pos, &["expert", "opinions", "show"]) {
        return None;
    }
    let mut out = [0u32; NUM_CLASSES];
    if expect(&mut pos, &["complete", "agreement", ",", "with", "all", "identifying"]) {
        let id = pattern(&mut pos)?;
        if !expect(&mut pos, &["("]) {
            return None;
        }
        let v = number(&mut pos)?;
        if !expect(&mut pos, &["%", ")"]) || !end(pos) {
            return None;
        }
        out[id] = v;
        return Some(out);
    }
    if !expect(&mut pos, &["mixed", "agreement", ",", "with"]) {
        return None;
    }
    loop {
        let v = number(&mut pos)?;
        if !expect(&mut pos, &["%", "identifying"]) {
            return None;
        }
        let id = pattern(&mut pos)?;
        out[id] = v;
        if end(pos) {
            return Some(out);
        }
        if !expect(&mut pos, &[","]) {
            return None;
        }
    }
}

/// A sentence set covering every token the templates can produce.
pub fn template_corpus() -> Vec<String> {
    let mut out = Vec::new();
    for c in ClassLabel::ALL {
        let mut counts = [0u32; NUM_CLASSES];
        counts[c.id()] = 1;
        out.push(render_note(&VoteDistribution { counts }));
    }
    let numbers: Vec<String> = (0..=100).map(|n| n.to_string()).collect();
    out.push(format!(
        "Expert opinions show mixed agreement, with {}% identifying other patterns.",
        numbers.join(" ")
    ));
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved ids first, then every distinct corpus token in sorted order.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = corpus.into_iter().flat_map(split_words).collect();
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is bijective")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[BOS, w…, EOS]` with the words cut so the result has at most
    /// `max_len` ids.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<Vec<usize>> {
        if max_len < 3 {
            return Err(Error::Config(format!("max token length must be >= 3, got {max_len}")));
        }
        let mut ids = vec![BOS];
        ids.extend(split_words(text).iter().map(|w| self.id(w)));
        ids.truncate(max_len - 1);
        ids.push(EOS);
        Ok(ids)
    }

    /// Words joined by single spaces; stops at EOS, skips PAD and BOS.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                _ => words.push(self.token(id).unwrap_or(RESERVED[UNK])),
            }
        }
        words.join(" ")
    }

    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(format!("line {}: expected token<TAB>id", n + 1)))?;
            let id: usize = id.parse().map_err(|_| bad(format!("line {}: bad id `{id}`", n + 1)))?;
            if id != n {
                return Err(bad(format!("line {}: id {id} out of order", n + 1)));
            }
            if n < RESERVED.len() && tok != RESERVED[n] {
                return Err(bad(format!("line {}: reserved id {n} must be `{}`", n + 1, RESERVED[n])));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() {
            return Err(bad("missing reserved tokens".into()));
        }
        Self::from_tokens(tokens).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }
}

/// Pads id sequences to the longest one. Returns the flat ids, the padded
/// length and a `[batch][position]` padding mask.
pub fn pad_batch(seqs: &[Vec<usize>]) -> (Vec<usize>, usize, Vec<Vec<bool>>) {
    let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(seqs.len() * len);
    let mut mask = Vec::with_capacity(seqs.len());
    for s in seqs {
        ids.extend_from_slice(s);
        ids.extend(std::iter::repeat_n(PAD, len - s.len()));
        mask.push((0..len).map(|i| i >= s.len() || s[i] == PAD).collect());
    }
    (ids, len, mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub layers: usize,
    /// Longest token sequence, excluding CLS.
    pub max_len: usize,
    /// Output dimension, matching the EEG embedding.
    pub out_dim: usize,
    /// Fine-tune only the last `trainable_layers` layers; 0 freezes the
    /// encoder except for the output projection.
    pub trainable_layers: usize,
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub cls: ParamId,
    pub stack: TransformerStack,
    pub proj: Linear,
}

impl TextEncoder {
    pub const PREFIX: &'static str = "text";

    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: TextEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.trainable_layers > cfg.layers {
            return Err(Error::Config(format!(
                "trainable_layers {} exceeds {} encoder layers",
                cfg.trainable_layers, cfg.layers
            )));
        }
        let p = Self::PREFIX;
        let tok_emb = store.add_weight(format!("{p}.tok_emb"), &[cfg.vocab_size, cfg.width], rng);
        let pos_emb = store.add_weight(format!("{p}.pos_emb"), &[cfg.max_len + 1, cfg.width], rng);
        let cls = store.add_weight(format!("{p}.cls"), &[1, cfg.width], rng);
        let stack = TransformerStack::new(store, &format!("{p}.enc"), cfg.layers, cfg.width, cfg.heads, cfg.ff_width, rng);
        let proj = Linear::new(store, &format!("{p}.proj"), cfg.width, cfg.out_dim, true, rng);
        let enc = TextEncoder {
            cfg,
            tok_emb,
            pos_emb,
            cls,
            stack,
            proj,
        };
        enc.apply_freeze(store);
        Ok(enc)
    }

    /// Marks parameters outside the fine-tuned tail as non-trainable.
    pub fn apply_freeze<T: Real>(&self, store: &mut ParamStore<T>) {
        let p = Self::PREFIX;
        let k = self.cfg.trainable_layers;
        let all = k == self.cfg.layers;
        for name in ["tok_emb", "pos_emb", "cls"] {
            store.set_trainable_prefix(&format!("{p}.{name}"), all);
        }
        for i in 0..self.cfg.layers {
            store.set_trainable_prefix(&format!("{p}.enc.layer{i}."), i + k >= self.cfg.layers);
        }
        store.set_trainable_prefix(&format!("{p}.enc.final_norm"), k > 0);
    }

    /// Encodes token sequences (BOS … EOS, optionally PAD-extended) into
    /// `[batch, out_dim]` embeddings read at the CLS position.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, seqs: &[Vec<usize>]) -> Result<Var> {
        let (ids, len, pad) = pad_batch(seqs);
        let batch = seqs.len();
        if batch == 0 || len == 0 {
            return Err(Error::shape("encode_text", "empty batch".to_string()));
        }
        if len > self.cfg.max_len {
            return Err(Error::shape(
                "encode_text",
                format!("sequence of {len} tokens exceeds positional table of {}", self.cfg.max_len),
            ));
        }
        let table = store.var(tape, self.tok_emb);
        let x = tape.embedding(table, &ids, &[batch, len])?;
        let cls_table = store.var(tape, self.cls);
        let cls = tape.embedding(cls_table, &vec![0; batch], &[batch, 1])?;
        let x = tape.concat(&[cls, x], 1)?;
        let pos = store.var(tape, self.pos_emb);
        let pos = tape.slice(pos, 0, 0, len + 1)?;
        let x = tape.add(x, pos)?;
        let mask = AttentionMask {
            key_padding: Some(pad.into_iter().map(|row| std::iter::once(false).chain(row).collect()).collect()),
            causal: false,
        };
        let h = self.stack.forward(store, tape, x, &mask)?;
        let h = tape.slice(h, 1, 0, 1)?;
        let h = tape.reshape(h, &[batch, self.cfg.width])?;
        self.proj.forward(store, tape, h)
    }
}
