//! Accuracy, EEG→text Recall@K, the ablation matrix and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::autodiff::{Real, Tape, Tensor};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::heads::argmax;
use crate::io::{read_to_string, write_atomic};
use crate::model::Model;
use crate::objectives::StepPos;
use crate::trainer::{make_batch, metrics_to_csv, read_metrics, train, EpochMetrics, StepTrace, PreparedData, METRICS_FILE};
use crate::text::parse_note;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: &str = "variant,acc,r1,r5,r10,params,val_loss,seconds";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const EVAL_FILE: &str = "eval.csv";
/// Test items listed in `samples.txt`.
pub const REPORT_SAMPLES: usize = 10;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        ));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub n: usize,
    /// `(K, recall)` in increasing K.
    pub recall: Vec<(usize, f64)>,
}

impl RetrievalResult {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }

    pub fn zeros(n: usize, ks: &[usize]) -> Self {
        RetrievalResult {
            n,
            recall: ks.iter().map(|&k| (k, 0.0)).collect(),
        }
    }
}

fn unit_rows(rows: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::domain("recall_at_k", format!("{what} row {i} has zero or non-finite norm")));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// For each EEG query, ranks every text row by cosine similarity (ties to
/// the lower index) and counts how often the paired row lands in the top K.
pub fn recall_at_k(eeg: &[Vec<f64>], text: &[Vec<f64>], ks: &[usize]) -> Result<RetrievalResult> {
    let n = eeg.len();
    if text.len() != n || n == 0 {
        return Err(Error::shape("recall_at_k", format!("{n} queries vs {} texts", text.len())));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::Contract(format!("K = {k} outside 1..={n}")));
    }
    let (a, b) = (unit_rows(eeg, "eeg")?, unit_rows(text, "text")?);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let mut ranks = Vec::with_capacity(n);
    for i in 0..n {
        let own = dot(&a[i], &b[i]);
        let ahead = (0..n)
            .filter(|&j| {
                let s = dot(&a[i], &b[j]);
                s > own || (s == own && j < i)
            })
            .count();
        ranks.push(ahead + 1);
    }
    let mut ks_sorted = ks.to_vec();
    ks_sorted.sort_unstable();
    let recall: Vec<(usize, f64)> = ks_sorted
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64))
        .collect();
    debug_assert!(recall.windows(2).all(|w| w[0].1 <= w[1].1));
    Ok(RetrievalResult { n, recall })
}

/// Everything measured on one split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Zero for models without a text encoder.
    pub retrieval: RetrievalResult,
    /// Mean reconstruction loss with paired and with rolled `h_eeg`.
    pub rec_loss_paired: Option<f64>,
    pub rec_loss_shuffled: Option<f64>,
    /// `(ground truth, greedy generation)` per item.
    pub generations: Vec<(String, String)>,
    /// Fraction of generations that parse under the note grammar.
    pub parse_rate: Option<f64>,
    pub mean_gate_temporal: Option<f64>,
}

fn rows_of<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let w = t.shape()[1];
    t.data().chunks(w).map(|r| r.iter().map(|v| v.f64()).collect()).collect()
}

/// Evaluates `model` on the samples `idx` without augmentation.
pub fn evaluate<T: Real>(cfg: &TrainConfig, model: &Model<T>, data: &PreparedData, idx: &[usize]) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let mut predictions = Vec::new();
    let mut eeg_rows = Vec::new();
    let mut text_rows = Vec::new();
    let (mut paired, mut shuffled, mut rec_batches) = (0.0, 0.0, 0usize);
    let mut generations = Vec::new();
    let (mut gate_sum, mut gate_n) = (0.0, 0usize);
    for chunk in idx.chunks(cfg.batch_size) {
        let batch = make_batch::<T>(cfg, data, chunk, None)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, StepPos::default())?;
        let logits = tape.value(fwd.logits);
        let k = logits.shape()[1];
        predictions.extend(logits.data().chunks(k).map(argmax));
        let h_eeg = tape.value(fwd.h_eeg).clone();
        eeg_rows.extend(rows_of(&h_eeg));
        if let Some(h) = fwd.h_text {
            text_rows.extend(rows_of(tape.value(h)));
        }
        if let Some(mu) = fwd.mu {
            let m = tape.value(mu);
            for r in m.data().chunks(2) {
                gate_sum += r[0].f64();
                gate_n += 1;
            }
        }
        if let Some(dec) = &model.decoder {
            let mut t2 = Tape::new();
            let h = t2.constant(h_eeg.clone());
            let l = dec.reconstruction_loss(&model.store, &mut t2, h, &batch.tokens)?;
            paired += t2.value(l).item().f64();
            // Roll h_eeg by one row so every sample gets another's embedding.
            let w = h_eeg.shape()[1];
            let b = h_eeg.shape()[0];
            let mut rolled = h_eeg.data()[w..].to_vec();
            rolled.extend_from_slice(&h_eeg.data()[..w]);
            let mut t3 = Tape::new();
            let h = t3.constant(Tensor::new(&[b, w], rolled)?);
            let l = dec.reconstruction_loss(&model.store, &mut t3, h, &batch.tokens)?;
            shuffled += t3.value(l).item().f64();
            rec_batches += 1;
            let gen = dec.generate_greedy(&model.store, &h_eeg, cfg.max_tokens)?;
            for (g, &i) in gen.iter().zip(chunk) {
                generations.push((data.samples[i].note.clone(), data.vocab.detokenize(g)));
            }
        }
    }
    let labels: Vec<usize> = idx.iter().map(|&i| data.samples[i].label).collect();
    let retrieval = if text_rows.len() == eeg_rows.len() && !text_rows.is_empty() {
        let ks: Vec<usize> = RECALL_KS.iter().map(|&k| k.min(eeg_rows.len())).collect();
        let mut r = recall_at_k(&eeg_rows, &text_rows, &ks)?;
        for ((k, _), want) in r.recall.iter_mut().zip(RECALL_KS) {
            *k = want;
        }
        r
    } else {
        RetrievalResult::zeros(eeg_rows.len(), &RECALL_KS)
    };
    let parse_rate = (!generations.is_empty()).then(|| {
        generations.iter().filter(|(_, g)| parse_note(g).is_some()).count() as f64 / generations.len() as f64
    });
    Ok(Evaluation {
        accuracy: accuracy(&predictions, &labels)?,
        predictions,
        labels,
        retrieval,
        rec_loss_paired: (rec_batches > 0).then(|| paired / rec_batches as f64),
        rec_loss_shuffled: (rec_batches > 0).then(|| shuffled / rec_batches as f64),
        generations,
        parse_rate,
        mean_gate_temporal: (gate_n > 0).then(|| gate_sum / gate_n as f64),
    })
}

pub fn evaluation_to_csv(e: &Evaluation) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    format!(
        "metric,value\naccuracy,{:.6}\nr1,{:.6}\nr5,{:.6}\nr10,{:.6}\ngallery,{}\nrec_loss_paired,{}\nrec_loss_shuffled,{}\nparse_rate,{}\n",
        e.accuracy,
        e.retrieval.at(1).unwrap_or(0.0),
        e.retrieval.at(5).unwrap_or(0.0),
        e.retrieval.at(10).unwrap_or(0.0),
        e.retrieval.n,
        opt(e.rec_loss_paired),
        opt(e.rec_loss_shuffled),
        opt(e.parse_rate),
    )
}

/// Ground truth and generated notes in the style of a prompt box.
pub fn samples_text(generations: &[(String, String)], limit: usize) -> String {
    let mut out = String::new();
    for (i, (truth, gen)) in generations.iter().take(limit).enumerate() {
        let _ = writeln!(out, "SAMPLE{:02}", i + 1);
        let _ = writeln!(out, "Ground truth: {truth}");
        let _ = writeln!(out, "Generated: {gen}");
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoContrastive,
    NoReconstruction,
    EegOnly,
    FrozenText,
    NoGating,
    ReducedTransformer,
    NoAugmentation,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoContrastive,
        Variant::NoReconstruction,
        Variant::EegOnly,
        Variant::FrozenText,
        Variant::NoGating,
        Variant::ReducedTransformer,
        Variant::NoAugmentation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContrastive => "no_contrastive",
            Variant::NoReconstruction => "no_reconstruction",
            Variant::EegOnly => "eeg_only",
            Variant::FrozenText => "frozen_text",
            Variant::NoGating => "no_gating",
            Variant::ReducedTransformer => "reduced_transformer",
            Variant::NoAugmentation => "no_augmentation",
        }
    }

    /// `base` with only this variant's toggle changed (plus its name).
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.name = self.name().into();
        match self {
            Variant::Full => {}
            Variant::NoContrastive => c.contrastive = false,
            Variant::NoReconstruction => c.reconstruction = false,
            Variant::EegOnly => c.use_text = false,
            Variant::FrozenText => c.text_trainable_layers = 0,
            Variant::NoGating => c.gating = false,
            Variant::ReducedTransformer => c.eeg_layers = 1,
            Variant::NoAugmentation => c.augment = false,
        }
        c
    }

    pub fn parse_list(list: &str) -> Result<Vec<Variant>> {
        if list.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        list.split(',').map(|s| s.trim().parse()).collect()
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub acc: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub params: usize,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub row: AblationRow,
    pub metrics: Vec<EpochMetrics>,
    pub evaluation: Evaluation,
    pub trace: Vec<StepTrace>,
    pub min_lambda: f64,
}

/// Trains and evaluates each variant of `base` on `data`. With `out_root`,
/// variant outputs go to `<out_root>/<variant>/` and the table to
/// `<out_root>/ablation.csv`.
pub fn run_ablation<T: Real>(
    base: &TrainConfig,
    variants: &[Variant],
    data: &PreparedData,
    out_root: Option<&Path>,
) -> Result<Vec<VariantRun>> {
    let mut runs = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = v.apply(base);
        let started = Instant::now();
        let dir = out_root.map(|r| r.join(v.name()));
        let tag = |e: Error| Error::Contract(format!("variant {}: {e}", v.name()));
        let outcome = train::<T>(&cfg, data, dir.as_deref()).map_err(tag)?;
        let evaluation = evaluate(&cfg, &outcome.model, data, &data.test).map_err(tag)?;
        let seconds = if cfg.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        if let Some(d) = &dir {
            write_atomic(&d.join(EVAL_FILE), evaluation_to_csv(&evaluation).as_bytes())?;
            if !evaluation.generations.is_empty() {
                write_atomic(&d.join(SAMPLES_FILE), samples_text(&evaluation.generations, REPORT_SAMPLES).as_bytes())?;
            }
        }
        let r = &evaluation.retrieval;
        runs.push(VariantRun {
            row: AblationRow {
                variant: v.name().into(),
                acc: evaluation.accuracy,
                r1: r.at(1).unwrap_or(0.0),
                r5: r.at(5).unwrap_or(0.0),
                r10: r.at(10).unwrap_or(0.0),
                params: outcome.model.count_trainable_params(),
                val_loss: outcome.metrics.last().map_or(0.0, |m| m.val_loss),
                seconds,
            },
            metrics: outcome.metrics,
            evaluation,
            trace: outcome.trace,
            min_lambda: outcome.min_lambda,
        });
    }
    if let Some(root) = out_root {
        let rows: Vec<AblationRow> = runs.iter().map(|r| r.row.clone()).collect();
        write_atomic(&root.join(ABLATION_FILE), ablation_to_csv(&rows).as_bytes())?;
    }
    Ok(runs)
}

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            r.variant, r.acc, r.r1, r.r5, r.r10, r.params, r.val_loss, r.seconds
        );
    }
    out
}

pub fn parse_ablation_csv(text: &str, path: &Path) -> Result<Vec<AblationRow>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(ABLATION_HEADER) {
        return Err(bad("ablation header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("line {}: expected 8 fields", n + 2)));
            }
            let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|_| bad(format!("line {}: bad number `{}`", n + 2, f[i]))) };
            Ok(AblationRow {
                variant: f[0].to_string(),
                acc: num(1)?,
                r1: num(2)?,
                r5: num(3)?,
                r10: num(4)?,
                params: f[5].parse().map_err(|_| bad(format!("line {}: bad params", n + 2)))?,
                val_loss: num(6)?,
                seconds: num(7)?,
            })
        })
        .collect()
}

/// Line chart with one polyline per series over epochs.
pub fn svg_line_chart(title: &str, series: &[(&str, Vec<f64>)]) -> Result<String> {
    let points: usize = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if series.is_empty() || points == 0 {
        return Err(Error::Contract(format!("chart `{title}` has no data")));
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let all = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let x = |i: usize| pad + (w - 2.0 * pad) * if points > 1 { i as f64 / (points - 1) as f64 } else { 0.5 };
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="25" font-size="16" text-anchor="middle">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{hi:.4}</text>"#, 4.0, pad);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{lo:.4}</text>"#, 4.0, h - pad);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#, w / 2.0, h - 12.0);
    for (i, (name, values)) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(j, &v)| format!("{:.2},{:.2}", x(j), y(v)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{colour}">{}</text>"#,
            w - pad - 120.0,
            pad + 16.0 * i as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `curves_<name>.csv` plus loss and accuracy charts for one run.
pub fn emit_curves(out: &Path, name: &str, metrics: &[EpochMetrics]) -> Result<Vec<PathBuf>> {
    if metrics.is_empty() {
        return Err(Error::Contract(format!("no metrics for `{name}`")));
    }
    let col = |f: fn(&EpochMetrics) -> f64| metrics.iter().map(f).collect::<Vec<f64>>();
    let files = vec![
        (out.join(format!("curves_{name}.csv")), metrics_to_csv(metrics)),
        (
            out.join(format!("loss_{name}.svg")),
            svg_line_chart(
                &format!("{name}: loss"),
                &[("train_loss", col(|m| m.train_loss)), ("val_loss", col(|m| m.val_loss))],
            )?,
        ),
        (
            out.join(format!("acc_{name}.svg")),
            svg_line_chart(
                &format!("{name}: accuracy"),
                &[("train_acc", col(|m| m.train_acc)), ("val_acc", col(|m| m.val_acc))],
            )?,
        ),
    ];
    for (p, body) in &files {
        write_atomic(p, body.as_bytes())?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Collects run outputs under `input` and writes report files to `out`.
///
/// Runs are `input/metrics.csv` (named after the directory) and every
/// `input/<name>/metrics.csv`. `ablation.csv` and `samples.txt` are copied
/// when present, the latter from the `full` run if available.
pub fn emit_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut runs: Vec<(String, Vec<EpochMetrics>, PathBuf)> = Vec::new();
    if input.join(METRICS_FILE).exists() {
        let name = input
            .file_name()
            .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
        runs.push((name, read_metrics(&input.join(METRICS_FILE))?, input.to_path_buf()));
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).exists())
        .collect();
    subdirs.sort();
    for d in subdirs {
        let name = d.file_name().unwrap().to_string_lossy().into_owned();
        runs.push((name, read_metrics(&d.join(METRICS_FILE))?, d));
    }
    if runs.is_empty() {
        return Err(Error::Contract(format!("no metrics.csv found under {}", input.display())));
    }
    let mut written = Vec::new();
    for (name, metrics, _) in &runs {
        written.extend(emit_curves(out, name, metrics)?);
    }
    let abl = input.join(ABLATION_FILE);
    if abl.exists() {
        let rows = parse_ablation_csv(&read_to_string(&abl)?, &abl)?;
        let p = out.join(ABLATION_FILE);
        write_atomic(&p, ablation_to_csv(&rows).as_bytes())?;
        written.push(p);
    }
    let sample_src = runs
        .iter()
        .find(|(n, _, d)| n == "full" && d.join(SAMPLES_FILE).exists())
        .or_else(|| runs.iter().find(|(_, _, d)| d.join(SAMPLES_FILE).exists()))
        .map(|(_, _, d)| d.join(SAMPLES_FILE));
    if let Some(src) = sample_src {
        let p = out.join(SAMPLES_FILE);
        write_atomic(&p, read_to_string(&src)?.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
