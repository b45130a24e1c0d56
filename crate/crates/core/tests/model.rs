mod common;

use neurotext::autodiff::{ParamStore, Tape, Tensor};
use neurotext::config::TrainConfig;
use neurotext::eeg_encoder::{fuse_gated, fuse_static, make_views, spectrogram_from_frequency, spectrogram_from_temporal, stack_views};
use neurotext::heads::{Decoder, DecoderConfig};
use neurotext::model::{Batch, Model};
use neurotext::objectives::{contrastive_loss, total_loss, StepPos, Term};
use neurotext::signal::Spectrogram;
use neurotext::text::{TextEncoder, TextEncoderConfig, BOS, EOS, PAD};
use neurotext::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

/// Plain-loop symmetric InfoNCE.
fn contrastive_oracle(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64) -> f64 {
    let unit = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let (a, b): (Vec<_>, Vec<_>) = (a.iter().map(unit).collect(), b.iter().map(unit).collect());
    let n = a.len();
    let s = |i: usize, j: usize| a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let lse = |f: &dyn Fn(usize) -> f64| (0..n).map(f).map(f64::exp).sum::<f64>().ln();
    let rows: f64 = (0..n).map(|i| lse(&|j| s(i, j)) - s(i, i)).sum::<f64>() / n as f64;
    let cols: f64 = (0..n).map(|j| lse(&|i| s(i, j)) - s(j, j)).sum::<f64>() / n as f64;
    0.5 * (rows + cols)
}

fn contrastive_value(a: &Tensor<f64>, b: &Tensor<f64>, log_tau: f64) -> Result<f64, Error> {
    let mut t = Tape::new();
    let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
    let lt = t.constant(Tensor::from_f64(&[1], &[log_tau]).unwrap());
    let l = contrastive_loss(&mut t, x, y, lt)?;
    Ok(t.value(l).item())
}

#[test]
fn contrastive_matches_oracle() {
    let (a, b) = (common::rand_tensor(&[5, 4], 1), common::rand_tensor(&[5, 4], 2));
    for tau in [0.07, 0.5, 2.0] {
        let got = contrastive_value(&a, &b, f64::ln(tau)).unwrap();
        approx::assert_relative_eq!(got, contrastive_oracle(&rows(&a), &rows(&b), tau), max_relative = 1e-12);
    }
    // Temperatures outside [0.01, 100] are clamped.
    let low = contrastive_value(&a, &b, f64::ln(1e-4)).unwrap();
    approx::assert_relative_eq!(low, contrastive_oracle(&rows(&a), &rows(&b), 0.01), max_relative = 1e-12);
}

#[test]
fn contrastive_rewards_alignment() {
    let a = Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let aligned = contrastive_value(&a, &a, f64::ln(0.01)).unwrap();
    assert!(aligned < 1e-20, "{aligned}");
    let shuffled = Tensor::from_f64(&[3, 3], &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    assert!(contrastive_value(&a, &shuffled, f64::ln(0.01)).unwrap() > 50.0);
    assert!(contrastive_value(&common::rand_tensor(&[1, 3], 3), &common::rand_tensor(&[1, 3], 4), 0.0).is_err());
}

#[test]
fn gate_weights_sum_to_one() {
    let (ht, hf, wg) = (common::rand_tensor(&[3, 4], 5), common::rand_tensor(&[3, 4], 6), common::rand_tensor(&[8, 2], 7));
    let mut t = Tape::new();
    let (a, b, w) = (t.constant(ht.clone()), t.constant(hf.clone()), t.constant(wg.clone()));
    let (h, mu) = fuse_gated(&mut t, a, b, w).unwrap();
    let (h, mu) = (t.value(h).clone(), t.value(mu).clone());
    for r in 0..3 {
        let cat: Vec<f64> = ht.data()[r * 4..r * 4 + 4].iter().chain(&hf.data()[r * 4..r * 4 + 4]).copied().collect();
        let score = |k: usize| (0..8).map(|i| cat[i] * wg.data()[i * 2 + k]).sum::<f64>();
        let (s0, s1) = (score(0), score(1));
        let mu_t = 1.0 / (1.0 + (s1 - s0).exp());
        approx::assert_relative_eq!(mu.data()[r * 2], mu_t, max_relative = 1e-12);
        approx::assert_relative_eq!(mu.data()[r * 2] + mu.data()[r * 2 + 1], 1.0, max_relative = 1e-12);
        for i in 0..4 {
            approx::assert_relative_eq!(h.data()[r * 8 + i], mu_t * cat[i], max_relative = 1e-12);
            approx::assert_relative_eq!(h.data()[r * 8 + 4 + i], (1.0 - mu_t) * cat[4 + i], max_relative = 1e-10);
        }
    }
    let mut t = Tape::new();
    let (a, b) = (t.constant(ht.clone()), t.constant(hf));
    let s = fuse_static(&mut t, a, b).unwrap();
    assert_eq!(t.value(s).data()[0], 0.5 * ht.data()[0]);
}

#[test]
fn views_are_lossless() {
    let mut z = Spectrogram::zeros(3, 4, 5);
    for (i, v) in z.values.iter_mut().enumerate() {
        *v = i as f64;
    }
    let v = make_views::<f64>(&z);
    assert_eq!(v.temporal.shape(), &[5, 12]);
    assert_eq!(v.frequency.shape(), &[4, 15]);
    assert_eq!(spectrogram_from_temporal(&v.temporal, 3), z);
    assert_eq!(spectrogram_from_frequency(&v.frequency, 3), z);
    let s = stack_views(&[v.clone(), v]).unwrap();
    assert_eq!(s.temporal.shape(), &[2, 5, 12]);
}

#[test]
fn total_loss_is_exp_alpha_weighted() {
    let mut t = Tape::<f64>::new();
    let l = [2.0, 0.5, 7.0].map(|v| t.constant(Tensor::scalar(v)));
    let a = [0.3, -1.2, 0.0].map(|v| t.leaf(Tensor::from_f64(&[1], &[v]).unwrap()));
    let terms = [(Term::Cls, l[0], a[0]), (Term::Con, l[1], a[1]), (Term::Rec, l[2], a[2])];
    let total = total_loss(&mut t, &terms, StepPos::default()).unwrap();
    let want = 2.0 * 0.3f64.exp() + 0.5 * (-1.2f64).exp() + 7.0;
    approx::assert_relative_eq!(t.value(total).item(), want, max_relative = 1e-14);
    t.backward(total).unwrap();
    // dL/dα_i = exp(α_i)·L_i
    approx::assert_relative_eq!(t.grad(a[0]).unwrap()[0], 2.0 * 0.3f64.exp(), max_relative = 1e-14);

    let mut t = Tape::<f64>::new();
    let bad = t.constant(Tensor::scalar(f64::NAN));
    let a0 = t.leaf(Tensor::from_f64(&[1], &[0.0]).unwrap());
    let at = StepPos { epoch: 3, step: 9 };
    match total_loss(&mut t, &[(Term::Rec, bad, a0)], at) {
        Err(Error::NonFinite { epoch: 3, step: 9, what }) => assert!(what.contains("rec")),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    let ok = t.constant(Tensor::scalar(1.0));
    let huge = t.leaf(Tensor::from_f64(&[1], &[50.0]).unwrap());
    assert!(matches!(total_loss(&mut t, &[(Term::Cls, ok, huge)], at), Err(Error::NonFinite { .. })));
}

fn small_decoder(store: &mut ParamStore<f64>) -> Decoder {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    Decoder::new(
        store,
        DecoderConfig { vocab_size: 9, width: 8, heads: 2, ff_width: 16, layers: 2, max_len: 8, cond_dim: 4 },
        &mut rng,
    )
}

#[test]
fn decoder_is_causal() {
    let mut s = ParamStore::new();
    let dec = small_decoder(&mut s);
    let h = common::rand_tensor(&[1, 4], 9);
    let run = |ids: &[usize]| {
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let l = dec.logits(&s, &mut t, hv, ids, ids.len()).unwrap();
        t.value(l).data().to_vec()
    };
    let (a, b) = (run(&[1, 4, 5, 6]), run(&[1, 4, 7, 3]));
    // Positions 0..=2 (prefix, 1, 4) see identical inputs.
    assert_eq!(a[..3 * 9], b[..3 * 9]);
    assert_ne!(a[3 * 9..4 * 9], b[3 * 9..4 * 9]);
}

#[test]
fn decoder_conditioning_changes_the_loss_and_generation_is_bounded() {
    let mut s = ParamStore::new();
    let dec = small_decoder(&mut s);
    let seqs = vec![vec![BOS, 4, 5, EOS], vec![BOS, 6, EOS]];
    let loss = |h: Tensor<f64>| {
        let mut t = Tape::new();
        let hv = t.constant(h);
        let l = dec.reconstruction_loss(&s, &mut t, hv, &seqs).unwrap();
        t.value(l).item()
    };
    assert_ne!(loss(common::rand_tensor(&[2, 4], 1)), loss(common::rand_tensor(&[2, 4], 2)));
    let gen = dec.generate_greedy(&s, &common::rand_tensor(&[3, 4], 3), 6).unwrap();
    for g in gen {
        assert_eq!(g[0], BOS);
        assert!(g.len() <= 6);
        assert!(!g.contains(&PAD));
        assert!(g.iter().position(|&x| x == EOS).is_none_or(|p| p == g.len() - 1));
    }
    assert!(dec.generate_greedy(&s, &common::rand_tensor(&[1, 4], 3), 9).is_err());
}

#[test]
fn text_encoder_ignores_padding_and_freezes_layers() {
    let mut s = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = TextEncoderConfig { vocab_size: 9, width: 8, heads: 2, ff_width: 16, layers: 3, max_len: 8, out_dim: 4, trainable_layers: 1 };
    let enc = TextEncoder::new(&mut s, cfg, &mut rng).unwrap();
    let embed = |seqs: &[Vec<usize>]| {
        let mut t = Tape::new();
        let v = enc.forward(&s, &mut t, seqs).unwrap();
        t.value(v).data()[..4].to_vec()
    };
    let short = embed(&[vec![BOS, 5, EOS]]);
    let padded = embed(&[vec![BOS, 5, EOS], vec![BOS, 5, 6, 7, 8, EOS]]);
    for (a, b) in short.iter().zip(&padded) {
        approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    let trainable = |name: &str| s.by_name(name).unwrap().trainable;
    assert!(!trainable("text.tok_emb"));
    assert!(!trainable("text.enc.layer0.ff1.weight"));
    assert!(!trainable("text.enc.layer1.ff1.weight"));
    assert!(trainable("text.enc.layer2.ff1.weight"));
    assert!(trainable("text.proj.weight"));
}

fn tiny_batch(cfg: &TrainConfig, b: usize) -> Batch<f64> {
    let dims = common::DESK_DIMS;
    let mut z = Spectrogram::zeros(dims.channels, dims.freqs, dims.frames);
    let views: Vec<_> = (0..b)
        .map(|i| {
            for (j, v) in z.values.iter_mut().enumerate() {
                *v = ((i * 31 + j) as f64 * 0.013).sin().abs() * 50.0;
            }
            make_views(&z)
        })
        .collect();
    let _ = cfg;
    Batch {
        views: stack_views(&views).unwrap(),
        labels: (0..b).map(|i| i % 6).collect(),
        tokens: (0..b).map(|i| vec![BOS, 10 + i, 20, EOS]).collect(),
    }
}

#[test]
fn model_forward_wires_enabled_terms() {
    let mut cfg = common::tiny_config();
    cfg.max_tokens = 8;
    for (toggle, want) in [("", 3), ("contrastive", 2), ("reconstruction", 2), ("use_text", 1)] {
        let mut c = cfg.clone();
        if !toggle.is_empty() {
            c.set(toggle, "false").unwrap();
        }
        let m = Model::<f64>::new(&c, common::DESK_DIMS).unwrap();
        let mut t = Tape::new();
        let f = m.forward(&mut t, &tiny_batch(&c, 3), StepPos::default()).unwrap();
        assert_eq!(f.terms.len(), want, "{toggle}");
        assert_eq!(t.shape(f.logits), &[3, 6]);
        assert_eq!(t.shape(f.h_eeg), &[3, 2 * c.eeg_width]);
        assert_eq!(f.h_text.is_some(), c.use_text);
        let single = m.forward(&mut Tape::new(), &tiny_batch(&c, 1), StepPos::default()).unwrap();
        assert!(!single.terms.iter().any(|(t, _)| *t == Term::Con));
        if toggle == "contrastive" {
            assert!(m.store.iter().filter(|p| p.name.starts_with("text.")).all(|p| !p.trainable));
        }
    }
}
