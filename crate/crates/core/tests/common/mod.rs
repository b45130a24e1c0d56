//! Shared fixtures: the finite-difference gradient suite over every tape
//! operation and the model's composite blocks.

#![allow(dead_code)]

use std::rc::Rc;

use neurotext::autodiff::{grad_check, grad_check_params, GradCheckReport, ParamStore, Tape, Tensor, Var};
use neurotext::eeg_encoder::{fuse_gated, pool, Branch};
use neurotext::error::Result;
use neurotext::heads::{classification_loss, Classifier, Decoder, DecoderConfig};
use neurotext::nn::{AttentionMask, MultiHeadAttention, TransformerLayer};
use neurotext::objectives::{contrastive_loss, total_loss, StepPos, Term};
use neurotext::text::{TextEncoder, TextEncoderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Values at least `gap` away from every point in `kinks`.
pub fn away_from(shape: &[usize], seed: u64, kinks: &[f64], gap: f64) -> Tensor<f64> {
    let mut t = rand_tensor(shape, seed);
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < gap {
                *v = k + gap.copysign(*v - k) * 2.0;
            }
        }
    }
    t
}

/// `Σ y ⊙ R` with a fixed random `R`, turning any output into a scalar whose
/// gradient exercises every element.
pub fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let seed = shape.iter().fold(17u64, |h, &d| h.wrapping_mul(31).wrapping_add(d as u64));
    let r = tape.constant(rand_tensor(&shape, seed));
    let p = tape.mul(y, r)?;
    Ok(tape.sum_all(p))
}

type Check = (String, GradCheckReport);

fn op<F>(name: &str, inputs: Vec<Tensor<f64>>, f: F) -> Check
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let r = grad_check(|t, v| { let y = f(t, v)?; project(t, y) }, &inputs, STEP, TOL, None)
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    (name.to_string(), r)
}

/// Every differentiable tape operation.
pub fn op_suite() -> Vec<Check> {
    let r = rand_tensor;
    vec![
        op("matmul", vec![r(&[2, 3, 4], 1), r(&[4, 5], 2)], |t, v| t.matmul(v[0], v[1])),
        op("bmm", vec![r(&[2, 3, 4], 3), r(&[2, 4, 5], 4)], |t, v| t.bmm(v[0], v[1], false)),
        op("bmm_trans_b", vec![r(&[2, 3, 4], 5), r(&[2, 5, 4], 6)], |t, v| t.bmm(v[0], v[1], true)),
        op("add_broadcast_last", vec![r(&[2, 3, 4], 7), r(&[4], 8)], |t, v| t.add(v[0], v[1])),
        op("add_broadcast_mid", vec![r(&[2, 3, 4], 9), r(&[3, 1], 10)], |t, v| t.add(v[0], v[1])),
        op("sub", vec![r(&[3, 4], 11), r(&[3, 4], 12)], |t, v| t.sub(v[0], v[1])),
        op("mul", vec![r(&[3, 4], 13), r(&[3, 4], 14)], |t, v| t.mul(v[0], v[1])),
        op("mul_broadcast", vec![r(&[3, 4], 15), r(&[3, 1], 16)], |t, v| t.mul(v[0], v[1])),
        op("scale", vec![r(&[3, 4], 17)], |t, v| Ok(t.scale(v[0], -1.7))),
        op("add_scalar", vec![r(&[3, 4], 18)], |t, v| Ok(t.add_scalar(v[0], 0.3))),
        op("exp", vec![r(&[3, 4], 19)], |t, v| Ok(t.exp(v[0]))),
        op("log", vec![r(&[3, 4], 20)], |t, v| {
            let e = t.exp(v[0]);
            t.log(e)
        }),
        op("relu", vec![away_from(&[3, 4], 21, &[0.0], 0.05)], |t, v| Ok(t.relu(v[0]))),
        op("gelu", vec![r(&[3, 4], 22)], |t, v| Ok(t.gelu(v[0]))),
        op("permute", vec![r(&[2, 3, 4], 23)], |t, v| t.permute(v[0], &[2, 0, 1])),
        op("transpose", vec![r(&[2, 3, 4], 24)], |t, v| t.transpose(v[0], 0, 2)),
        op("reshape", vec![r(&[2, 3, 4], 25)], |t, v| t.reshape(v[0], &[6, 4])),
        op("concat", vec![r(&[2, 3, 4], 26), r(&[2, 2, 4], 27)], |t, v| t.concat(&[v[0], v[1]], 1)),
        op("slice", vec![r(&[2, 3, 5], 28)], |t, v| t.slice(v[0], 2, 1, 3)),
        op("mean", vec![r(&[2, 3, 4], 29)], |t, v| t.mean(v[0], 1)),
        op("sum_all", vec![r(&[2, 3], 30)], |t, v| Ok(t.sum_all(v[0]))),
        op("mean_all", vec![r(&[2, 3], 31)], |t, v| Ok(t.mean_all(v[0]))),
        op("softmax_last", vec![r(&[2, 3, 4], 32)], |t, v| t.softmax(v[0], 2)),
        op("softmax_mid", vec![r(&[2, 3, 4], 33)], |t, v| t.softmax(v[0], 1)),
        op("layer_norm", vec![r(&[2, 3, 5], 34), r(&[5], 35), r(&[5], 36)], |t, v| t.layer_norm(v[0], v[1], v[2])),
        op("embedding", vec![r(&[6, 4], 37)], |t, v| t.embedding(v[0], &[1, 4, 1, 0, 5, 4], &[2, 3])),
        op("cross_entropy", vec![r(&[4, 5], 38)], |t, v| t.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)])),
        op("l2_normalize", vec![r(&[3, 4], 39)], |t, v| t.l2_normalize(v[0])),
        op("masked_fill", vec![r(&[3, 4], 40)], |t, v| {
            let mask: Rc<[bool]> = (0..12).map(|i| i % 3 == 1).collect();
            t.masked_fill(v[0], mask, -2.0)
        }),
        op("clamp", vec![away_from(&[3, 4], 41, &[-0.5, 0.5], 0.05)], |t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
    ]
}

fn params_check<F>(name: &str, store: &mut ParamStore<f64>, f: F) -> Check
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let r = grad_check_params(store, f, STEP, TOL, Some(6)).unwrap_or_else(|e| panic!("{name}: {e}"));
    (name.to_string(), r)
}

/// Composite blocks, checked against their parameters and inputs.
pub fn composite_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "mha", 8, 2, &mut rng);
    let x = rand_tensor(&[2, 3, 8], 50);
    let causal = AttentionMask { key_padding: None, causal: true };
    out.push(params_check("attention_causal", &mut s, |st, t| {
        let x = t.constant(x.clone());
        let (y, _) = mha.forward(st, t, x, &causal)?;
        project(t, y)
    }));

    let mut s = ParamStore::new();
    let layer = TransformerLayer::new(&mut s, "layer", 8, 2, 16, &mut rng);
    let pad = AttentionMask { key_padding: Some(vec![vec![false, false, true], vec![false; 3]]), causal: false };
    out.push(params_check("transformer_layer", &mut s, |st, t| {
        let x = t.constant(x.clone());
        let y = layer.forward(st, t, x, &pad)?;
        project(t, y)
    }));

    let mut s = ParamStore::new();
    let branch = Branch::new(&mut s, "branch", 5, 4, 8, 2, 16, 1, &mut rng);
    let xb = rand_tensor(&[2, 3, 5], 51);
    out.push(params_check("branch_encoder", &mut s, |st, t| {
        let x = t.constant(xb.clone());
        let h = branch.encode(st, t, x)?;
        let h = pool(t, h)?;
        project(t, h)
    }));
    out.push(op("branch_encoder_input", vec![xb.clone()], |t, v| {
        let h = branch.encode(&s, t, v[0])?;
        pool(t, h)
    }));

    out.push(op(
        "gated_fusion",
        vec![rand_tensor(&[3, 4], 52), rand_tensor(&[3, 4], 53), rand_tensor(&[8, 2], 54)],
        |t, v| Ok(fuse_gated(t, v[0], v[1], v[2])?.0),
    ));

    let (e, x2) = (rand_tensor(&[4, 3], 55), rand_tensor(&[4, 3], 56));
    let lt = Tensor::from_f64(&[1], &[0.5f64.ln()]).unwrap();
    out.push(
        grad_check(|t, v| contrastive_loss(t, v[0], v[1], v[2]), &[e, x2, lt], STEP, TOL, None)
            .map(|r| ("contrastive".to_string(), r))
            .unwrap(),
    );

    let mut s = ParamStore::new();
    let cls = Classifier::new(&mut s, 6, 5, &mut rng);
    let h = rand_tensor(&[4, 6], 57);
    out.push(params_check("classifier_ce", &mut s, |st, t| {
        let h = t.constant(h.clone());
        let l = cls.logits(st, t, h)?;
        classification_loss(t, l, &[0, 5, 2, 2])
    }));

    let mut s = ParamStore::new();
    let dec = Decoder::new(
        &mut s,
        DecoderConfig { vocab_size: 7, width: 8, heads: 2, ff_width: 16, layers: 1, max_len: 6, cond_dim: 4 },
        &mut rng,
    );
    let seqs = vec![vec![1, 4, 5, 2], vec![1, 6, 2]];
    let hc = rand_tensor(&[2, 4], 58);
    out.push(params_check("reconstruction", &mut s, |st, t| {
        let h = t.constant(hc.clone());
        dec.reconstruction_loss(st, t, h, &seqs)
    }));
    out.push(
        grad_check(|t, v| dec.reconstruction_loss(&s, t, v[0], &seqs), std::slice::from_ref(&hc), STEP, TOL, None)
            .map(|r| ("reconstruction_condition".to_string(), r))
            .unwrap(),
    );

    let mut s = ParamStore::new();
    let enc = TextEncoder::new(
        &mut s,
        TextEncoderConfig { vocab_size: 7, width: 8, heads: 2, ff_width: 16, layers: 1, max_len: 6, out_dim: 4, trainable_layers: 1 },
        &mut rng,
    )
    .unwrap();
    out.push(params_check("text_encoder", &mut s, |st, t| {
        let y = enc.forward(st, t, &seqs)?;
        project(t, y)
    }));

    let terms = vec![rand_tensor(&[3], 59), rand_tensor(&[2, 2], 60), rand_tensor(&[1], 61), rand_tensor(&[1], 62), rand_tensor(&[1], 63)];
    out.push(
        grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                let l1 = t.sum_all(sq);
                let e = t.exp(v[1]);
                let l2 = t.mean_all(e);
                total_loss(t, &[(Term::Cls, l1, v[2]), (Term::Con, l2, v[3]), (Term::Rec, l1, v[4])], StepPos::default())
            },
            &terms,
            STEP,
            TOL,
            None,
        )
        .map(|r| ("total_loss_alpha".to_string(), r))
        .unwrap(),
    );
    out
}

use neurotext::signal::{
    augment, build_bipolar_montage, extract_window, hann, stft_magnitude, AugmentConfig, BipolarSegment, MontageSpec,
    RawRecording, Spectrogram, StftConfig, ELECTRODES,
};

/// `(name, passed, detail)` for one oracle check.
pub type Oracle = (String, bool, String);

fn naive_dft(frame: &[f64]) -> Vec<(f64, f64)> {
    let n = frame.len();
    (0..n)
        .map(|k| {
            frame.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &x)| {
                let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                (re + x * ang.cos(), im + x * ang.sin())
            })
        })
        .collect()
}

pub fn segment(channels: Vec<Vec<f64>>) -> BipolarSegment {
    extract_window(&channels, 0.0, channels[0].len() as f64, 1.0).unwrap()
}

pub fn random_recording(samples: usize, seed: u64) -> RawRecording {
    let rows = (0..ELECTRODES.len())
        .map(|i| rand_tensor(&[samples], seed * 100 + i as u64).into_data())
        .collect();
    RawRecording::new(ELECTRODES.iter().map(|s| s.to_string()).collect(), rows, 200.0).unwrap()
}

/// Relative error of the STFT against a direct DFT on Hann-windowed frames.
pub fn stft_vs_dft() -> Oracle {
    let seg = segment((0..3).map(|c| rand_tensor(&[400], 70 + c).into_data()).collect());
    let cfg = StftConfig::default();
    let s = stft_magnitude(&seg, &cfg).unwrap();
    let w = hann(cfg.window_len);
    let mut worst = 0.0f64;
    for (c, row) in seg.channels.iter().enumerate() {
        for t in 0..s.frames {
            let frame: Vec<f64> = (0..cfg.window_len).map(|i| row[t * cfg.hop + i] * w[i]).collect();
            let oracle: Vec<f64> = naive_dft(&frame).iter().map(|(re, im)| re.hypot(*im)).collect();
            let peak = oracle.iter().cloned().fold(0.0, f64::max);
            for f in 0..s.freqs {
                worst = worst.max((s.get(c, f, t) - oracle[f]).abs() / oracle[f].max(1e-3 * peak));
            }
        }
    }
    ("stft_matches_dft".into(), worst <= 1e-6, format!("max rel error {worst:.2e}"))
}

/// A bin-centred sinusoid peaks at its bin in every frame and channel.
pub fn sinusoid_peak() -> Oracle {
    let (fs, n, bin) = (200.0, 64usize, 8usize);
    let f0 = bin as f64 * fs / n as f64;
    let x: Vec<f64> = (0..2000).map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / fs + 0.3).sin()).collect();
    let s = stft_magnitude(&segment(vec![x]), &StftConfig::default()).unwrap();
    let ok = (0..s.frames).all(|t| {
        let col: Vec<f64> = (0..s.freqs).map(|f| s.get(0, f, t)).collect();
        neurotext::heads::argmax(&col) == bin
    });
    ("sinusoid_peak".into(), ok, format!("{f0} Hz peaks at bin {bin} in all {} frames", s.frames))
}

/// Σ (w·x)² equals the one-sided spectral energy / N.
pub fn parseval() -> Oracle {
    let x = rand_tensor(&[64], 80).into_data();
    let s = stft_magnitude(&segment(vec![x.clone()]), &StftConfig { window_len: 64, hop: 64, log1p: false }).unwrap();
    let w = hann(64);
    let time: f64 = x.iter().zip(&w).map(|(a, b)| (a * b).powi(2)).sum();
    let mags: Vec<f64> = (0..s.freqs).map(|f| s.get(0, f, 0)).collect();
    let inner: f64 = mags[1..32].iter().map(|m| m * m).sum();
    let freq = (mags[0].powi(2) + mags[32].powi(2) + 2.0 * inner) / 64.0;
    let rel = (time - freq).abs() / time;
    ("parseval".into(), rel < 1e-10, format!("rel error {rel:.2e}"))
}

/// montage(a·r1 + b·r2) = a·montage(r1) + b·montage(r2), and each row is
/// anode minus cathode.
pub fn montage_linearity() -> Oracle {
    let (r1, r2) = (random_recording(50, 1), random_recording(50, 2));
    let (a, b) = (1.7, -0.4);
    let mixed: Vec<Vec<f64>> = r1
        .samples
        .iter()
        .zip(&r2.samples)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
        .collect();
    let r3 = RawRecording::new(r1.electrode_labels.clone(), mixed, 200.0).unwrap();
    let m = MontageSpec::default();
    let (m1, m2, m3) = (
        build_bipolar_montage(&r1, &m).unwrap(),
        build_bipolar_montage(&r2, &m).unwrap(),
        build_bipolar_montage(&r3, &m).unwrap(),
    );
    let mut worst = 0.0f64;
    for k in 0..m.len() {
        for i in 0..50 {
            worst = worst.max((m3[k][i] - (a * m1[k][i] + b * m2[k][i])).abs());
        }
    }
    let (an, ca) = &m.pairs[0];
    let direct = r1.channel(an).unwrap()[7] - r1.channel(ca).unwrap()[7];
    let ok = worst < 1e-12 && m1[0][7] == direct && m1.len() == 18;
    ("montage_linearity".into(), ok, format!("max deviation {worst:.2e}"))
}

/// Augmentation with every probability at zero returns its input.
pub fn augmentation_identity() -> Oracle {
    let mut s = Spectrogram::zeros(3, 5, 7);
    for (i, v) in s.values.iter_mut().enumerate() {
        *v = (i as f64 * 0.37).sin().abs();
    }
    let ok = (0..20).all(|seed| augment(&s, &AugmentConfig { seed, ..AugmentConfig::identity() }).unwrap() == s);
    ("augmentation_identity".into(), ok, "20 seeds".into())
}

pub fn signal_suite() -> Vec<Oracle> {
    vec![stft_vs_dft(), sinusoid_peak(), parseval(), montage_linearity(), augmentation_identity()]
}

use neurotext::config::TrainConfig;
use neurotext::dataset::{generate_segments, subject_exclusive_split, DatasetConfig, VoteDistribution};
use neurotext::eval::recall_at_k;
use neurotext::model::{Model, ModelDims};
use neurotext::text::{normalize, note_percentages, parse_note, render_note};
use rand_distr::StandardNormal;

/// Vote vectors with entries from `{0, 1, 3, 7}` (4095 distributions).
pub fn vote_grid() -> Vec<VoteDistribution> {
    let levels = [0u32, 1, 3, 7];
    (1..4usize.pow(6))
        .map(|mut code| {
            let mut counts = [0u32; 6];
            for c in counts.iter_mut() {
                *c = levels[code % 4];
                code /= 4;
            }
            VoteDistribution::new(counts).unwrap()
        })
        .collect()
}

pub fn template_round_trip() -> Oracle {
    let grid = vote_grid();
    let failures = grid.iter().filter(|v| parse_note(&render_note(v)) != Some(note_percentages(v))).count();
    let s1 = render_note(&VoteDistribution::new([0, 18, 0, 0, 0, 0]).unwrap());
    let s2 = render_note(&VoteDistribution::new([0, 0, 0, 2, 14, 10]).unwrap());
    let reference = [
        (
            "Expert opinions show complete agreement, with all identifying lateralized periodic discharges (100%).",
            "expert opinions show complete agreement, with all identifying lateralized periodic discharges ( 100 % ).",
        ),
        (
            "Expert opinions show mixed agreement, with 8% identifying lateralized rhythmic delta activity, 54% identifying generalized rhythmic delta activity, 38% identifying other patterns.",
            "expert opinions show mixed agreement, with 8 % identifying lateralized rhythmic delta activity, 54 % identifying generalized rhythmic delta activity, 38 % identifying other patterns.",
        ),
    ];
    let verbatim = s1 == reference[0].0 && s2 == reference[1].0;
    let normalized = reference.iter().all(|(truth, gen)| normalize(truth) == normalize(gen))
        && parse_note(reference[1].1) == Some([0, 0, 0, 8, 54, 38]);
    (
        "template_round_trip".into(),
        failures == 0 && verbatim && normalized && grid.len() >= 500,
        format!("{} distributions, {failures} failures; reference samples verbatim: {verbatim}", grid.len()),
    )
}

/// Mean Recall@K of random Gaussian embeddings against `K/N`, plus
/// monotonicity on every trial.
pub fn recall_calibration() -> (Oracle, [f64; 3]) {
    let (n, dim, trials) = (200usize, 16usize, 100u64);
    let mut sums = [0.0; 3];
    let mut monotone = true;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut draw = || -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
        };
        let (a, b) = (draw(), draw());
        let r = recall_at_k(&a, &b, &[1, 5, 10]).unwrap();
        monotone &= r.recall.windows(2).all(|w| w[0].1 <= w[1].1);
        for (s, (_, v)) in sums.iter_mut().zip(&r.recall) {
            *s += v;
        }
    }
    let means = sums.map(|s| s / trials as f64);
    let ok = monotone && [1.0, 5.0, 10.0].iter().zip(&means).all(|(k, m)| (m - k / n as f64).abs() <= 0.02);
    (
        (
            "recall_calibration".into(),
            ok,
            format!("mean R@1/5/10 = {:.4}/{:.4}/{:.4} vs {:.3}/{:.3}/{:.3}", means[0], means[1], means[2], 0.005, 0.025, 0.05),
        ),
        means,
    )
}

/// Input sizes of the default desk dataset.
pub const DESK_DIMS: ModelDims = ModelDims { channels: 18, freqs: 33, frames: 61, vocab_size: 129 };

pub fn param_counts(base: &TrainConfig) -> Vec<(neurotext::eval::Variant, usize)> {
    neurotext::eval::Variant::ALL
        .iter()
        .map(|&v| (v, Model::<f32>::new(&v.apply(base), DESK_DIMS).unwrap().count_trainable_params()))
        .collect()
}

pub fn param_ordering() -> Oracle {
    use neurotext::eval::Variant;
    let base = TrainConfig::default();
    let counts = param_counts(&base);
    let get = |v: Variant| counts.iter().find(|(x, _)| *x == v).unwrap().1;
    let (full, eeg, norec, nogate) = (get(Variant::Full), get(Variant::EegOnly), get(Variant::NoReconstruction), get(Variant::NoGating));
    let w_g = 2 * base.eeg_width * 2;
    let ok = (eeg as f64) < 0.25 * full as f64 && norec < full && nogate == full - w_g;
    (
        "param_ordering".into(),
        ok,
        format!("full {full}, eeg_only {eeg} ({:.3}), no_reconstruction {norec}, no_gating {nogate} (|W_g| = {w_g})", eeg as f64 / full as f64),
    )
}

/// Zero patient overlap across 100 split seeds of the default cohort.
pub fn split_exclusivity() -> Oracle {
    let rows: Vec<_> = generate_segments(&DatasetConfig { segments_per_patient: 2, ..DatasetConfig::default() })
        .unwrap()
        .into_iter()
        .map(|s| s.row)
        .collect();
    let mut overlaps = 0;
    for seed in 0..100 {
        let s = subject_exclusive_split(&rows, (0.8, 0.1, 0.1), seed).unwrap();
        let all: std::collections::HashSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        overlaps += s.train.len() + s.val.len() + s.test.len() - all.len();
        if all.len() != 60 {
            overlaps += 1;
        }
    }
    ("split_exclusivity".into(), overlaps == 0, format!("100 seeds, {overlaps} overlapping patients"))
}

/// Ten patients with six segments each: an 8/1/1 patient split.
pub fn tiny_dataset(dir: &std::path::Path) {
    neurotext::dataset::generate_dataset(dir, &DatasetConfig { patients: 10, segments_per_patient: 6, ..DatasetConfig::default() })
        .unwrap();
}

/// Small widths and two epochs; trains in a few seconds.
pub fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    for (k, v) in [
        ("eeg_width", "16"),
        ("eeg_heads", "2"),
        ("eeg_ff", "32"),
        ("eeg_layers", "1"),
        ("text_width", "16"),
        ("text_heads", "2"),
        ("text_ff", "32"),
        ("text_layers", "1"),
        ("text_trainable_layers", "1"),
        ("decoder_layers", "1"),
        ("epochs", "2"),
        ("batch_size", "8"),
        ("learning_rate", "1e-3"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}
