//! Deterministic joint training: AdamW at a constant rate for a fixed
//! number of epochs, validation after each epoch, final-epoch checkpoint.

use std::path::Path;
use std::time::Instant;

use crate::autodiff::{Real, Tape, Tensor};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{make_batches, subject_exclusive_split, DatasetFiles, SplitSpec};
use crate::eeg_encoder::{make_views, stack_views};
use crate::error::{Error, Result};
use crate::heads::argmax;
use crate::io::{read_to_string, write_atomic};
use crate::model::{Batch, Model, ModelDims};
use crate::objectives::{StepPos, Term};
use crate::optim::{adamw_step, AdamWState};
use crate::rng::seed_all;
use crate::signal::{augment, segment_spectrogram, MontageSpec, Spectrogram};
use crate::text::{render_note, template_corpus, Vocabulary};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_HEADER: &str = "epoch,train_loss,train_cls,train_con,train_rec,train_acc,val_loss,val_acc,seconds";
/// Steps whose loss weights and α gradients are kept in the trace.
pub const TRACE_STEPS: usize = 10;

/// One preprocessed segment.
#[derive(Clone, Debug)]
pub struct Sample {
    pub row: usize,
    pub patient: String,
    pub label: usize,
    pub note: String,
    pub tokens: Vec<usize>,
    pub spec: Spectrogram,
}

/// Spectrograms, tokenized notes and the subject-exclusive split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub split: SplitSpec,
    pub vocab: Vocabulary,
    pub dims: ModelDims,
}

/// The vocabulary is the closure of the note templates, so it does not
/// depend on which notes a dataset happens to contain.
pub fn build_vocab() -> Vocabulary {
    let corpus = template_corpus();
    Vocabulary::build(corpus.iter().map(String::as_str))
}

pub fn prepare_data(cfg: &TrainConfig, data_dir: &Path) -> Result<PreparedData> {
    let files = DatasetFiles::open(data_dir)?;
    let vocab = build_vocab();
    let montage = MontageSpec::default();
    let stft = cfg.stft();
    let mut samples = Vec::with_capacity(files.rows.len());
    for (i, row) in files.rows.iter().enumerate() {
        let rec = files.recording(i)?;
        let spec = segment_spectrogram(&rec, &montage, row.eeg_label_offset_seconds, cfg.window_seconds, &stft)?;
        let note = render_note(&row.votes);
        let tokens = vocab.tokenize(&note, cfg.max_tokens)?;
        samples.push(Sample {
            row: i,
            patient: row.patient_id.clone(),
            label: row.expert_consensus.id(),
            note,
            tokens,
            spec,
        });
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract(format!("dataset at {} is empty", data_dir.display())))?;
    let dims = ModelDims {
        channels: first.spec.channels,
        freqs: first.spec.freqs,
        frames: first.spec.frames,
        vocab_size: vocab.len(),
    };
    let split = subject_exclusive_split(&files.rows, (cfg.split_train, cfg.split_val, cfg.split_test), cfg.seed)?;
    let (train, val, test) = split.assign(&files.rows);
    Ok(PreparedData {
        samples,
        train,
        val,
        test,
        split,
        vocab,
        dims,
    })
}

/// Assembles a batch; `augment_epoch` selects per-sample augmentation
/// seeds, `None` disables augmentation.
pub fn make_batch<T: Real>(cfg: &TrainConfig, data: &PreparedData, idx: &[usize], augment_epoch: Option<usize>) -> Result<Batch<T>> {
    let tree = seed_all(cfg.seed);
    let mut views = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &data.samples[i];
        let v = match augment_epoch {
            Some(e) if cfg.augment => {
                let a = cfg.augment_config(tree.derive(&format!("augment/e{e}/i{}", s.row)));
                make_views(&augment(&s.spec, &a)?)
            }
            _ => make_views(&s.spec),
        };
        views.push(v);
    }
    Ok(Batch {
        views: stack_views(&views)?,
        labels: idx.iter().map(|&i| data.samples[i].label).collect(),
        tokens: idx.iter().map(|&i| data.samples[i].tokens.clone()).collect(),
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cls: f64,
    pub train_con: f64,
    pub train_rec: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

pub fn metrics_to_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            m.epoch, m.train_loss, m.train_cls, m.train_con, m.train_rec, m.train_acc, m.val_loss, m.val_acc, m.seconds
        ));
    }
    out
}

pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<EpochMetrics>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad("metrics header mismatch".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(format!("line {}: expected 9 fields", n + 2)));
        }
        let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|_| bad(format!("line {}: bad number `{}`", n + 2, f[i]))) };
        out.push(EpochMetrics {
            epoch: f[0].parse().map_err(|_| bad(format!("line {}: bad epoch", n + 2)))?,
            train_loss: num(1)?,
            train_cls: num(2)?,
            train_con: num(3)?,
            train_rec: num(4)?,
            train_acc: num(5)?,
            val_loss: num(6)?,
            val_acc: num(7)?,
            seconds: num(8)?,
        });
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    parse_metrics_csv(&read_to_string(path)?, path)
}

/// Loss weights and α gradients at one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub lambdas: [Option<f64>; 3],
    pub alpha_grads: [Option<f64>; 3],
    pub temperature: Option<f64>,
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub opt: AdamWState<T>,
    pub metrics: Vec<EpochMetrics>,
    /// First [`TRACE_STEPS`] steps.
    pub trace: Vec<StepTrace>,
    /// Smallest `λ_i` seen at any step.
    pub min_lambda: f64,
    pub steps: usize,
}

/// Validation loss and accuracy; parameters are only read.
pub fn validate<T: Real>(cfg: &TrainConfig, model: &Model<T>, data: &PreparedData, idx: &[usize], epoch: usize) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut loss, mut correct, mut batches) = (0.0, 0usize, 0usize);
    for chunk in idx.chunks(cfg.batch_size) {
        let batch = make_batch::<T>(cfg, data, chunk, None)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, StepPos { epoch, step: 0 })?;
        loss += tape.value(fwd.total).item().f64();
        correct += count_correct(tape.value(fwd.logits), &batch.labels);
        batches += 1;
    }
    Ok((loss / batches as f64, correct as f64 / idx.len() as f64))
}

fn count_correct<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(b, &y)| argmax(&logits.data()[b * k..(b + 1) * k]) == y)
        .count()
}

/// Trains `cfg` on `data`. When `out_dir` is given, the checkpoint,
/// metrics, vocabulary and config are written there after the final epoch.
pub fn train<T: Real>(cfg: &TrainConfig, data: &PreparedData, out_dir: Option<&Path>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let mut model = Model::<T>::new(cfg, data.dims)?;
    let mut opt = AdamWState::new(&model.store);
    let optim = cfg.optimizer();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut trace = Vec::new();
    let mut min_lambda = f64::INFINITY;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = make_batches(data.train.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut sums = [0.0f64; 4];
        let mut counts = [0usize; 4];
        let mut correct = 0usize;
        for b in &batches {
            step += 1;
            let at = StepPos { epoch, step };
            let idx: Vec<usize> = b.iter().map(|&i| data.train[i]).collect();
            let batch = make_batch::<T>(cfg, data, &idx, Some(epoch))?;
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &batch, at)?;
            let total = tape.value(fwd.total).item().f64();
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    what: "total loss".into(),
                    epoch,
                    step,
                });
            }
            let lambdas = model.weights.lambdas(&model.store);
            for l in lambdas.iter().flatten() {
                min_lambda = min_lambda.min(*l);
                assert!(*l > 0.0, "loss weight must stay positive");
            }
            sums[0] += total;
            counts[0] += 1;
            for &(term, v) in &fwd.terms {
                sums[1 + term as usize] += tape.value(v).item().f64();
                counts[1 + term as usize] += 1;
            }
            correct += count_correct(tape.value(fwd.logits), &batch.labels);
            tape.backward(fwd.total)?;
            model.store.zero_grad();
            model.store.accumulate_grads(&tape)?;
            if step <= TRACE_STEPS {
                trace.push(StepTrace {
                    step,
                    lambdas,
                    alpha_grads: model.weights.alpha.map(|a| a.map(|id| model.store.get(id).grad[0].f64())),
                    temperature: model.weights.temperature(&model.store),
                });
            }
            adamw_step(&mut model.store, &mut opt, &optim).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, epoch, step },
                other => other,
            })?;
        }
        let (val_loss, val_acc) = validate(cfg, &model, data, &data.val, epoch)?;
        let mean = |k: usize| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 };
        metrics.push(EpochMetrics {
            epoch,
            train_loss: mean(0),
            train_cls: mean(1 + Term::Cls as usize),
            train_con: mean(1 + Term::Con as usize),
            train_rec: mean(1 + Term::Rec as usize),
            train_acc: correct as f64 / data.train.len() as f64,
            val_loss,
            val_acc,
            seconds: if cfg.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    if let Some(dir) = out_dir {
        Checkpoint::capture(&model, &opt, cfg, cfg.epochs as u32).save(&dir.join(CHECKPOINT_FILE))?;
        write_atomic(&dir.join(METRICS_FILE), metrics_to_csv(&metrics).as_bytes())?;
        data.vocab.save(&dir.join(VOCAB_FILE))?;
        write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    }
    Ok(TrainOutcome {
        model,
        opt,
        metrics,
        trace,
        min_lambda,
        steps: step,
    })
}

/// Rebuilds the model stored in a checkpoint.
pub fn load_model<T: Real>(ckpt: &Checkpoint, dims: ModelDims) -> Result<(TrainConfig, Model<T>, AdamWState<T>)> {
    let cfg = ckpt.config()?;
    let mut model = Model::<T>::new(&cfg, dims)?;
    let mut opt = AdamWState::new(&model.store);
    ckpt.restore(&mut model, &mut opt)?;
    Ok((cfg, model, opt))
}
