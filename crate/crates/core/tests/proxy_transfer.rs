use xling_core::corpus::{sample_partition, LanguagePartition};
use xling_core::matrix::{Regime, ScoreMatrix};
use xling_core::mlm::{score_all_pairs, ScoringOptions};
use xling_core::subword::{train_vocabulary, SubwordVocabulary};
use xling_core::synthetic::fixture_corpora;

fn fixture(seed: u64) -> (Vec<LanguagePartition>, SubwordVocabulary) {
    let raws = fixture_corpora(3000, 5).unwrap();
    let parts: Vec<_> = raws
        .iter()
        .map(|r| sample_partition(r, 100_000, seed).unwrap())
        .collect();
    let vocab = train_vocabulary(&parts, 600).unwrap();
    (parts, vocab)
}

fn ft(m: &ScoreMatrix, s: &str, t: &str) -> f64 {
    (m.bilingual(s, t).unwrap() - m.mono(t).unwrap()) / m.mono(t).unwrap()
}

#[test]
fn shared_generator_pair_gains_and_disjoint_pair_stays_flat() {
    let (parts, vocab) = fixture(0);
    let m = score_all_pairs(&parts, &vocab, &ScoringOptions::default(), &[1]).unwrap();
    assert!(m.bilingual("xa", "xb").unwrap() > m.mono("xb").unwrap());
    assert!(m.bilingual("xb", "xa").unwrap() > m.mono("xa").unwrap());
    for (s, t) in [("xc", "xg"), ("xg", "xc")] {
        assert!(ft(&m, s, t).abs() < 0.03, "{s}->{t}: {}", ft(&m, s, t));
    }
    assert!(ft(&m, "xa", "xb") + ft(&m, "xb", "xa") > ft(&m, "xc", "xg") + ft(&m, "xg", "xc"));
}

#[test]
fn seed_average_is_the_mean_of_per_seed_matrices() {
    let (parts, vocab) = fixture(1);
    let opts = ScoringOptions::default();
    let per_seed: Vec<_> = [3, 4, 5]
        .iter()
        .map(|&s| score_all_pairs(&parts, &vocab, &opts, &[s]).unwrap())
        .collect();
    let averaged = score_all_pairs(&parts, &vocab, &opts, &[3, 4, 5]).unwrap();
    assert_eq!(averaged, ScoreMatrix::mean(&per_seed).unwrap());
    assert_eq!(averaged, score_all_pairs(&parts, &vocab, &opts, &[3, 4, 5]).unwrap());
}

#[test]
fn more_data_for_one_language_leaves_other_baselines_alone() {
    let (mut parts, vocab) = fixture(2);
    let opts = ScoringOptions::default();
    let before = score_all_pairs(&parts, &vocab, &opts, &[9]).unwrap();
    let raws = fixture_corpora(3000, 5).unwrap();
    parts[0] = sample_partition(&raws[0], 150_000, 2).unwrap();
    let after = score_all_pairs(&parts, &vocab, &opts, &[9]).unwrap();
    for code in ["xb", "xc", "xg"] {
        assert_eq!(before.mono(code), after.mono(code));
    }
}

#[test]
fn sequential_regime_fills_every_ordered_pair() {
    let (parts, vocab) = fixture(3);
    let opts = ScoringOptions {
        regime: Regime::Sequential,
        ..Default::default()
    };
    let m = score_all_pairs(&parts, &vocab, &opts, &[1]).unwrap();
    assert!(m.is_complete());
    assert_eq!(m.bilingual.len(), 12);
    assert_eq!(m.regime, Some(Regime::Sequential));
    // sequential models differ by direction
    assert_ne!(m.bilingual("xa", "xb"), m.bilingual("xb", "xa"));
}

#[test]
fn empty_heldout_slice_is_rejected() {
    let (parts, vocab) = fixture(0);
    let mut small = parts.clone();
    let lines: Vec<&str> = parts[0].sentences().take(5).collect();
    small[0] = LanguagePartition::from_sentences(parts[0].meta.clone(), &lines);
    assert!(score_all_pairs(&small, &vocab, &ScoringOptions::default(), &[1]).is_err());
}
