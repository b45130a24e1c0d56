mod common;

use neurotext::dataset::VoteDistribution;
use neurotext::text::{normalize, note_percentages, parse_note, render_note, rounded_percentages, split_words, Vocabulary, EOS};
use neurotext::trainer::build_vocab;
use proptest::prelude::*;

#[test]
fn template_oracle_passes() {
    let (name, ok, detail) = common::template_round_trip();
    assert!(ok, "{name}: {detail}");
}

#[test]
fn garbage_does_not_parse() {
    for s in [
        "",
        "expert opinions",
        "expert opinions show mixed agreement , with",
        "expert opinions show mixed agreement , with 10 % identifying unicorns .",
        "expert opinions show complete agreement , with all identifying other patterns ( 100 % ) extra",
        "expert opinions show mixed agreement , with 140 % identifying other patterns .",
    ] {
        assert_eq!(parse_note(s), None, "{s}");
    }
}

#[test]
fn vocabulary_covers_every_rendered_note() {
    let vocab = build_vocab();
    assert_eq!(vocab.len(), 129);
    for v in common::vote_grid().iter().step_by(7) {
        let ids = vocab.tokenize(&render_note(v), 48).unwrap();
        assert!(!ids.contains(&neurotext::text::UNK));
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(normalize(&vocab.detokenize(&ids)), normalize(&render_note(v)));
    }
}

#[test]
fn vocabulary_text_round_trip() {
    let vocab = build_vocab();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("vocab.txt");
    vocab.save(&p).unwrap();
    assert_eq!(Vocabulary::load(&p).unwrap(), vocab);
}

#[test]
fn split_words_detaches_punctuation() {
    assert_eq!(split_words("Agreement, with (100%)."), ["agreement", ",", "with", "(", "100", "%", ")", "."]);
}

proptest! {
    #[test]
    fn percentages_sum_to_100(counts in prop::array::uniform6(0u32..40)) {
        prop_assume!(counts.iter().sum::<u32>() > 0);
        let v = VoteDistribution::new(counts).unwrap();
        prop_assert_eq!(rounded_percentages(&v).iter().sum::<u32>(), 100);
        prop_assert_eq!(parse_note(&render_note(&v)), Some(note_percentages(&v)));
        let lowered = render_note(&v).to_lowercase().replace('%', " % ");
        prop_assert_eq!(parse_note(&lowered), Some(note_percentages(&v)));
    }
}
