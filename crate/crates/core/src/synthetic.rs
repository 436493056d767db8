//! Seeded word-level Markov languages used for fixtures and end-to-end
//! checks. Two languages drawn from one generator share their lexicon and
//! transitions; languages over different alphabets share nothing.

use rand::distributions::WeightedIndex;
use rand::prelude::*;

use std::collections::BTreeMap;

use crate::corpus::{LanguageMeta, RawCorpus};
use crate::error::Result;
use crate::matrix::{Provenance, ScoreMatrix};
use crate::rng::{derive_seed, rng_from};

pub const LATIN: &str = "abcdefghiklmnoprstu";
pub const GREEK: &str = "αβγδεζηθικλμνξοπρστ";
pub const CYRILLIC: &str = "абвгдежзиклмнопрсту";

#[derive(Debug, Clone)]
pub struct MarkovGenerator {
    lexicon: Vec<String>,
    start: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    min_words: usize,
    max_words: usize,
}

impl MarkovGenerator {
    /// `lexicon_size` words over `alphabet`, each with a handful of
    /// Zipf-weighted successors.
    pub fn new(alphabet: &str, lexicon_size: usize, seed: u64) -> Self {
        let chars: Vec<char> = alphabet.chars().collect();
        let mut rng = rng_from(seed);
        let mut lexicon: Vec<String> = Vec::with_capacity(lexicon_size);
        while lexicon.len() < lexicon_size {
            let len = 2 + rng.gen_range(0..4) + rng.gen_range(0..4);
            let w: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
            if !lexicon.contains(&w) {
                lexicon.push(w);
            }
        }
        let zipf = |n: usize, s: f64| -> Vec<f64> { (1..=n).map(|r| (r as f64).powf(-s)).collect() };
        let start = WeightedIndex::new(zipf(lexicon_size, 0.5)).expect("non-empty weights");
        let successors = (0..lexicon_size)
            .map(|_| {
                let fanout = 8 + rng.gen_range(0..9);
                let next: Vec<usize> = (0..fanout).map(|_| rng.gen_range(0..lexicon_size)).collect();
                (next, WeightedIndex::new(zipf(fanout, 0.7)).expect("non-empty weights"))
            })
            .collect();
        MarkovGenerator {
            lexicon,
            start,
            successors,
            min_words: 3,
            max_words: 14,
        }
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> String {
        let n = rng.gen_range(self.min_words..=self.max_words);
        let mut w = self.start.sample(rng);
        let mut out = self.lexicon[w].clone();
        for _ in 1..n {
            let (next, weights) = &self.successors[w];
            w = next[weights.sample(rng)];
            out.push(' ');
            out.push_str(&self.lexicon[w]);
        }
        out.push('.');
        out
    }

    pub fn sentences(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = rng_from(seed);
        (0..n).map(|_| self.sentence(&mut rng)).collect()
    }

    /// Documents of `per_doc` sentences each.
    pub fn documents(&self, n_sentences: usize, per_doc: usize, seed: u64) -> Vec<String> {
        self.sentences(n_sentences, seed)
            .chunks(per_doc.max(1))
            .map(|c| c.join(" "))
            .collect()
    }
}

/// One fixture language: metadata plus the generator it is drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    pub meta: LanguageMeta,
    pub alphabet: &'static str,
    pub generator_seed: u64,
}

/// `xa` and `xb` share a Latin generator; `xg` (Greek) and `xc` (Cyrillic)
/// have their own.
pub fn fixture_languages() -> Vec<SyntheticLanguage> {
    let lang = |code: &str, family: &str, script: &str, alphabet, generator_seed| SyntheticLanguage {
        meta: LanguageMeta::new(code, family, script).expect("valid fixture meta"),
        alphabet,
        generator_seed,
    };
    vec![
        lang("xa", "Synthetic-A", "Latin", LATIN, 11),
        lang("xb", "Synthetic-A", "Latin", LATIN, 11),
        lang("xc", "Synthetic-C", "Cyrillic", CYRILLIC, 13),
        lang("xg", "Synthetic-G", "Greek", GREEK, 17),
    ]
}

pub const FIXTURE_LEXICON: usize = 1000;

/// Raw corpora for the fixture languages. Languages sharing a generator
/// still get independent sentence streams.
pub fn fixture_corpora(n_sentences: usize, seed: u64) -> Result<Vec<RawCorpus>> {
    Ok(fixture_languages()
        .into_iter()
        .map(|l| {
            let g = MarkovGenerator::new(l.alphabet, FIXTURE_LEXICON, l.generator_seed);
            let docs = g.documents(n_sentences, 20, derive_seed(seed, &l.meta.code));
            RawCorpus::from_documents(l.meta, docs)
        })
        .collect())
}

/// `code\tfamily\tscript` rows for the fixture languages.
pub fn fixture_language_table() -> String {
    let mut out = String::from("code\tfamily\tscript\n");
    for l in fixture_languages() {
        out.push_str(&format!("{}\t{}\t{}\n", l.meta.code, l.meta.family, l.meta.script));
    }
    out
}

/// A few WALS-style rows for the fixture languages.
pub fn fixture_wals_csv() -> String {
    "language_code,feature_id,value\n\
     xa,81A,SOV\nxb,81A,SVO\nxc,81A,SOV\nxg,81A,VSO\n\
     xa,26A,Suffixing\nxb,26A,Suffixing\nxc,26A,Prefixing\nxg,26A,Suffixing\n"
        .to_owned()
}

/// Codes `l0..l{n-1}` cycling through `families` families and two scripts.
pub fn generic_metas(n: usize, families: usize) -> BTreeMap<String, LanguageMeta> {
    (0..n)
        .map(|i| {
            let code = format!("l{i}");
            let family = format!("F{}", i % families.max(1));
            let script = if i % 2 == 0 { "Latin" } else { "Cyrillic" };
            let meta = LanguageMeta::new(&code, &family, script).expect("valid generated meta");
            (code, meta)
        })
        .collect()
}

/// Complete matrix over [`generic_metas`] with every MRR drawn uniformly
/// from `[lo, hi)`.
pub fn random_score_matrix(n: usize, lo: f64, hi: f64, seed: u64) -> (ScoreMatrix, BTreeMap<String, LanguageMeta>) {
    let metas = generic_metas(n, 3);
    let codes: Vec<String> = metas.keys().cloned().collect();
    let mut rng = rng_from(seed);
    let mut m = ScoreMatrix::new(codes.clone(), Provenance::Ingested);
    for s in &codes {
        m.set_mono(s, rng.gen_range(lo..hi));
        for t in &codes {
            if s != t {
                m.set_bilingual(s, t, rng.gen_range(lo..hi));
            }
        }
    }
    (m, metas)
}
