mod common;

use neurotext::config::TrainConfig;
use neurotext::eval::{
    ablation_to_csv, accuracy, emit_report, parse_ablation_csv, recall_at_k, run_ablation, svg_line_chart, Variant,
    ABLATION_FILE,
};
use neurotext::trainer::prepare_data;

#[test]
fn accuracy_counts_matches() {
    assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap(), 0.75);
    assert!(accuracy(&[0], &[0, 1]).is_err());
    assert!(accuracy(&[], &[]).is_err());
}

#[test]
fn recall_on_a_hand_built_gallery() {
    // Query 1 is closest to text 0, so its own text ranks second.
    let eeg = vec![vec![1.0, 0.0], vec![1.0, 0.1], vec![0.0, 1.0]];
    let text = vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]];
    let r = recall_at_k(&eeg, &text, &[1, 2, 3]).unwrap();
    assert_eq!(r.recall, vec![(1, 2.0 / 3.0), (2, 1.0), (3, 1.0)]);
    let tied = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
    let r = recall_at_k(&tied, &tied, &[1]).unwrap();
    // Both texts are identical: each query ranks text 0 first.
    assert_eq!(r.at(1), Some(0.5));
}

#[test]
fn recall_rejects_bad_inputs() {
    let a = vec![vec![1.0, 0.0]; 3];
    assert!(recall_at_k(&a, &a[..2], &[1]).is_err());
    assert!(recall_at_k(&a, &a, &[4]).is_err());
    assert!(recall_at_k(&a, &a, &[0]).is_err());
    assert!(recall_at_k(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], &[1]).is_err());
}

#[test]
fn recall_is_calibrated_on_random_embeddings() {
    let ((name, ok, detail), _) = common::recall_calibration();
    assert!(ok, "{name}: {detail}");
}

#[test]
fn parameter_counts_follow_the_variants() {
    let (name, ok, detail) = common::param_ordering();
    assert!(ok, "{name}: {detail}");
    let counts = common::param_counts(&TrainConfig::default());
    let get = |v: Variant| counts.iter().find(|(x, _)| *x == v).unwrap().1;
    assert!(get(Variant::FrozenText) < get(Variant::Full));
    assert!(get(Variant::NoContrastive) < get(Variant::Full));
    assert!(get(Variant::ReducedTransformer) < get(Variant::Full));
    assert_eq!(get(Variant::NoAugmentation), get(Variant::Full));
}

#[test]
fn each_variant_changes_one_toggle() {
    let base = TrainConfig::default();
    for v in Variant::ALL {
        let c = v.apply(&base);
        assert_eq!(c.name, v.name());
        let diff: Vec<&str> = TrainConfig::KEYS
            .iter()
            .copied()
            .filter(|k| *k != "name")
            .filter(|k| {
                let line = |cfg: &TrainConfig| cfg.to_text().lines().find(|l| l.starts_with(&format!("{k} ="))).unwrap().to_string();
                line(&c) != line(&base)
            })
            .collect();
        assert_eq!(diff.len(), usize::from(v != Variant::Full), "{}: {diff:?}", v.name());
    }
    assert_eq!(Variant::parse_list("all").unwrap().len(), 8);
    assert_eq!(Variant::parse_list("full, eeg_only").unwrap(), vec![Variant::Full, Variant::EegOnly]);
    assert!(Variant::parse_list("full,nope").is_err());
}

#[test]
fn svg_charts_are_well_formed() {
    let svg = svg_line_chart("a <b> & c", &[("x", vec![1.0, 0.5, 0.2]), ("y", vec![0.9, f64::NAN, 0.1])]).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    assert!(svg_line_chart("t", &[]).is_err());
}

#[test]
fn ablation_is_deterministic_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    common::tiny_dataset(&data_dir);
    let cfg = common::tiny_config();
    let data = prepare_data(&cfg, &data_dir).unwrap();
    let variants = [Variant::Full, Variant::EegOnly, Variant::NoGating];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_ablation::<f32>(&cfg, &variants, &data, Some(&a)).unwrap();
    run_ablation::<f32>(&cfg, &variants, &data, Some(&b)).unwrap();
    let table = std::fs::read(a.join(ABLATION_FILE)).unwrap();
    assert_eq!(table, std::fs::read(b.join(ABLATION_FILE)).unwrap());
    for v in variants {
        for f in ["checkpoint.bin", "metrics.csv"] {
            assert_eq!(std::fs::read(a.join(v.name()).join(f)).unwrap(), std::fs::read(b.join(v.name()).join(f)).unwrap());
        }
    }
    let rows = parse_ablation_csv(std::str::from_utf8(&table).unwrap(), &a).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(ablation_to_csv(&rows).as_bytes(), table.as_slice());
    assert_eq!(rows[1].r10, 0.0);
    assert!(ra.iter().all(|r| r.row.r1 <= r.row.r5 && r.row.r5 <= r.row.r10));
    assert!(ra.iter().all(|r| r.row.seconds == 0.0));

    let out = dir.path().join("report");
    let files = emit_report(&a, &out).unwrap();
    for name in ["curves_full.csv", "loss_full.svg", "acc_eeg_only.svg", "ablation.csv", "samples.txt"] {
        assert!(files.iter().any(|p| p.ends_with(name)), "missing {name}");
    }
    let samples = std::fs::read_to_string(out.join("samples.txt")).unwrap();
    assert_eq!(samples.matches("Ground truth:").count(), 6);
}
