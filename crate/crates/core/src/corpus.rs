//! Raw corpus ingestion, fixed-budget sampling and balance diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::stats::{emd_1d, pearson_r, Histogram};
use crate::subword::SubwordVocabulary;

/// Default per-language character budget.
pub const DEFAULT_BUDGET: usize = 10_000_000;
/// Default EMD threshold for a sample to count as representative.
pub const DEFAULT_BALANCE_THRESHOLD: f64 = 0.001;

pub const SENTENCE_TERMINATORS: [char; 6] = ['.', '!', '?', '。', '।', '؟'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub code: String,
    pub family: String,
    pub script: String,
    /// WALS feature id -> categorical value.
    #[serde(default)]
    pub wals: BTreeMap<String, String>,
}

impl LanguageMeta {
    pub fn new(code: &str, family: &str, script: &str) -> Result<Self> {
        let meta = LanguageMeta {
            code: code.to_owned(),
            family: family.to_owned(),
            script: script.to_owned(),
            wals: BTreeMap::new(),
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code.trim().is_empty() {
            return Err(Error::invalid("language code is empty"));
        }
        if self.family.trim().is_empty() || self.script.trim().is_empty() {
            return Err(Error::invalid(format!(
                "language '{}' needs a family and a script",
                self.code
            )));
        }
        Ok(())
    }
}

/// Reads `code\tfamily\tscript` lines. A header line starting with `code`
/// and `#` comments are skipped.
pub fn load_language_table(path: impl AsRef<Path>) -> Result<BTreeMap<String, LanguageMeta>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if lineno == 0 && fields.first() == Some(&"code") {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), lineno + 1);
        if fields.len() != 3 {
            return Err(Error::parse(loc(), "expected code, family and script"));
        }
        let meta =
            LanguageMeta::new(fields[0], fields[1], fields[2]).map_err(|e| Error::parse(loc(), e.to_string()))?;
        if out.insert(meta.code.clone(), meta).is_some() {
            return Err(Error::parse(loc(), format!("duplicate language '{}'", fields[0])));
        }
    }
    Ok(out)
}

/// Attaches WALS features from a `language_code,feature_id,value` CSV.
/// Rows for languages not in `metas` are ignored.
pub fn load_wals(path: impl AsRef<Path>, metas: &mut BTreeMap<String, LanguageMeta>) -> Result<()> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::parse(
                format!("{}:{}", path.display(), i + 1),
                "expected language_code,feature_id,value",
            ));
        }
        if i == 0 && &record[0] == "language_code" {
            continue;
        }
        if let Some(meta) = metas.get_mut(&record[0]) {
            meta.wals.insert(record[1].to_owned(), record[2].to_owned());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawCorpus {
    pub meta: LanguageMeta,
    pub documents: Vec<String>,
    pub total_chars: usize,
}

impl RawCorpus {
    pub fn from_documents(meta: LanguageMeta, documents: Vec<String>) -> Self {
        let total_chars = documents.iter().map(|d| d.chars().count()).sum();
        RawCorpus {
            meta,
            documents,
            total_chars,
        }
    }

    /// All sentences in corpus order, with line breaks inside a sentence
    /// turned into spaces.
    pub fn sentences(&self) -> Vec<String> {
        self.documents
            .iter()
            .flat_map(|d| split_sentences(d))
            .map(flatten_lines)
            .collect()
    }
}

fn flatten_lines(s: &str) -> String {
    s.chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

/// Splits on a terminator followed by whitespace or end of text. The
/// terminator stays with its sentence; surrounding whitespace is dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !SENTENCE_TERMINATORS.contains(&c) {
            continue;
        }
        let boundary = match iter.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn split_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line.trim_end_matches('\r'));
        }
    }
    if !current.is_empty() {
        docs.push(current.join("\n"));
    }
    docs
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        path: path.to_owned(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Loads every regular file under `path` (or `path` itself if it is a
/// file) in file-name order. Blank lines separate documents.
pub fn load_raw_corpus(path: impl AsRef<Path>, meta: LanguageMeta) -> Result<RawCorpus> {
    let path = path.as_ref();
    let md = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let files: Vec<PathBuf> = if md.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            let hidden = p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'));
            if p.is_file() && !hidden {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_owned()]
    };
    let mut documents = Vec::new();
    for f in &files {
        documents.extend(split_documents(&read_utf8(f)?));
    }
    Ok(RawCorpus::from_documents(meta, documents))
}

/// A fixed-budget run of consecutive sentences from one language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguagePartition {
    pub meta: LanguageMeta,
    /// One sentence per line.
    pub text: String,
    /// Characters across sentences, excluding the line separators.
    pub char_count: usize,
    pub target_budget: usize,
    pub sample_seed: u64,
    /// Set when the whole corpus fit under the budget.
    pub underfull: bool,
}

impl LanguagePartition {
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.text.lines().filter(|l| !l.is_empty())
    }

    /// Builds a partition directly from sentences (used for fixtures and
    /// reloads). Line breaks inside a sentence become spaces.
    pub fn from_sentences<S: AsRef<str>>(meta: LanguageMeta, sentences: &[S]) -> Self {
        let sentences: Vec<String> = sentences.iter().map(|s| flatten_lines(s.as_ref())).collect();
        let char_count = sentences.iter().map(|s| s.chars().count()).sum();
        LanguagePartition {
            meta,
            text: sentences.join("\n"),
            char_count,
            target_budget: char_count,
            sample_seed: 0,
            underfull: false,
        }
    }
}

/// Offset of the first sampled sentence for a language.
pub fn sample_start(code: &str, seed: u64, n_sentences: usize) -> usize {
    if n_sentences == 0 {
        return 0;
    }
    (derive_seed(seed, code) % n_sentences as u64) as usize
}

/// Samples consecutive sentences starting at a seed-determined offset,
/// wrapping around the corpus, and stops before the first sentence that
/// would push the character count over `budget`.
pub fn sample_partition(raw: &RawCorpus, budget: usize, seed: u64) -> Result<LanguagePartition> {
    if budget == 0 {
        return Err(Error::invalid("budget must be positive"));
    }
    let sentences = raw.sentences();
    let n = sentences.len();
    let start = sample_start(&raw.meta.code, seed, n);
    let mut taken: Vec<&str> = Vec::new();
    let mut chars = 0;
    for i in 0..n {
        let s = &sentences[(start + i) % n];
        let c = s.chars().count();
        if chars + c > budget {
            break;
        }
        chars += c;
        taken.push(s);
    }
    let underfull = taken.len() == n && chars < budget;
    Ok(LanguagePartition {
        meta: raw.meta.clone(),
        text: taken.join("\n"),
        char_count: chars,
        target_budget: budget,
        sample_seed: seed,
        underfull,
    })
}

/// Writes `<code>.partition.txt` and `<code>.partition.meta` into `dir`.
pub fn write_partition(dir: impl AsRef<Path>, p: &LanguagePartition) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let code = &p.meta.code;
    let text_path = dir.join(format!("{code}.partition.txt"));
    let mut text = p.text.clone();
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&text_path, text).map_err(|e| Error::io(&text_path, e))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "code={code}");
    let _ = writeln!(meta, "family={}", p.meta.family);
    let _ = writeln!(meta, "script={}", p.meta.script);
    let _ = writeln!(meta, "char_count={}", p.char_count);
    let _ = writeln!(meta, "seed={}", p.sample_seed);
    let _ = writeln!(meta, "budget={}", p.target_budget);
    let _ = writeln!(meta, "underfull={}", p.underfull);
    let meta_path = dir.join(format!("{code}.partition.meta"));
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

fn parse_meta_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_utf8(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("{}:{}", path.display(), i + 1), "expected key=value"))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

/// Loads a partition previously written by [`write_partition`].
pub fn read_partition(dir: impl AsRef<Path>, code: &str) -> Result<LanguagePartition> {
    let dir = dir.as_ref();
    let meta_path = dir.join(format!("{code}.partition.meta"));
    let kv = parse_meta_file(&meta_path)?;
    let loc = meta_path.display().to_string();
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::parse(loc.clone(), format!("missing key '{k}'")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(loc.clone(), format!("'{k}' is not an integer")))
    };
    let meta = LanguageMeta::new(&get("code")?, &get("family")?, &get("script")?)
        .map_err(|e| Error::parse(loc.clone(), e.to_string()))?;
    let text_path = dir.join(format!("{code}.partition.txt"));
    let text = read_utf8(&text_path)?;
    let text = text.strip_suffix('\n').unwrap_or(&text).to_owned();
    let char_count = text.chars().filter(|&c| c != '\n').count();
    let recorded = num("char_count")? as usize;
    if recorded != char_count {
        return Err(Error::parse(
            loc,
            format!("char_count {recorded} does not match text ({char_count})"),
        ));
    }
    Ok(LanguagePartition {
        meta,
        text,
        char_count,
        target_budget: num("budget")? as usize,
        sample_seed: num("seed")?,
        underfull: kv.get("underfull").is_some_and(|v| v == "true"),
    })
}

/// Loads every partition in `dir`, sorted by language code.
pub fn read_partitions(dir: impl AsRef<Path>) -> Result<Vec<LanguagePartition>> {
    let dir = dir.as_ref();
    let mut codes = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(code) = name.to_str().and_then(|n| n.strip_suffix(".partition.meta")) {
            codes.push(code.to_owned());
        }
    }
    codes.sort();
    codes.iter().map(|c| read_partition(dir, c)).collect()
}

/// Anything that can be viewed as a sequence of sentences.
pub trait TextSource {
    fn sentence_list(&self) -> Vec<String>;
}

impl TextSource for RawCorpus {
    fn sentence_list(&self) -> Vec<String> {
        self.sentences()
    }
}

impl TextSource for LanguagePartition {
    fn sentence_list(&self) -> Vec<String> {
        self.sentences().map(str::to_owned).collect()
    }
}

impl TextSource for str {
    fn sentence_list(&self) -> Vec<String> {
        split_sentences(self).into_iter().map(flatten_lines).collect()
    }
}

pub const DIST_NAMES: [&str; 3] = ["sentence_len_words", "sentence_len_tokens", "word_len_chars"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSet {
    pub sentence_len_words: Histogram,
    pub sentence_len_tokens: Histogram,
    pub word_len_chars: Histogram,
}

impl DistributionSet {
    pub fn histograms(&self) -> [&Histogram; 3] {
        [
            &self.sentence_len_words,
            &self.sentence_len_tokens,
            &self.word_len_chars,
        ]
    }
}

/// Sentence length in words and tokens, and word length in characters.
/// Words are maximal non-whitespace runs, punctuation included.
pub fn length_distributions<T: TextSource + ?Sized>(source: &T, vocab: &SubwordVocabulary) -> Result<DistributionSet> {
    let sentences = source.sentence_list();
    length_distributions_of(sentences.iter().map(String::as_str), vocab)
}

pub fn length_distributions_of<'a, I>(sentences: I, vocab: &SubwordVocabulary) -> Result<DistributionSet>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut words: BTreeMap<u64, u64> = BTreeMap::new();
    let mut tokens: BTreeMap<u64, u64> = BTreeMap::new();
    let mut word_chars: BTreeMap<u64, u64> = BTreeMap::new();
    for s in sentences {
        let mut n_words = 0u64;
        for w in s.split_whitespace() {
            n_words += 1;
            *word_chars.entry(w.chars().count() as u64).or_insert(0) += 1;
        }
        if n_words == 0 {
            continue;
        }
        *words.entry(n_words).or_insert(0) += 1;
        *tokens.entry(vocab.tokenize(s).len() as u64).or_insert(0) += 1;
    }
    if words.is_empty() {
        return Err(Error::Degenerate("no text to build length distributions".into()));
    }
    Ok(DistributionSet {
        sentence_len_words: Histogram::from_counts(words)?,
        sentence_len_tokens: Histogram::from_counts(tokens)?,
        word_len_chars: Histogram::from_counts(word_chars)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// EMD per distribution, in [`DIST_NAMES`] order.
    pub per_distribution_emd: [f64; 3],
    pub threshold: f64,
    pub passed: bool,
}

/// Compares sample and full-corpus length distributions by 1-D EMD.
pub fn validate_balance(sample: &DistributionSet, full: &DistributionSet, threshold: f64) -> Result<BalanceReport> {
    let mut emd = [0.0; 3];
    for (slot, (a, b)) in emd
        .iter_mut()
        .zip(sample.histograms().into_iter().zip(full.histograms()))
    {
        *slot = emd_1d(a, b)?;
    }
    Ok(BalanceReport {
        per_distribution_emd: emd,
        threshold,
        passed: emd.iter().all(|e| *e < threshold),
    })
}

/// TSV with columns `language`, `dist_name`, `emd`, `passed`.
pub fn balance_tsv<'a, I>(reports: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a BalanceReport)>,
{
    let mut out = String::from("language\tdist_name\temd\tpassed\n");
    for (code, r) in reports {
        for (name, emd) in DIST_NAMES.iter().zip(r.per_distribution_emd) {
            let _ = writeln!(out, "{code}\t{name}\t{emd:.6}\t{}", emd < r.threshold);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoBalanceReport {
    pub per_language_total_tokens: BTreeMap<String, usize>,
    pub per_language_unique_tokens: BTreeMap<String, usize>,
    pub pearson_r: f64,
}

impl InfoBalanceReport {
    /// Correlates total against unique counts over the languages present in
    /// both maps.
    pub fn from_counts(totals: BTreeMap<String, usize>, uniques: BTreeMap<String, usize>) -> Result<Self> {
        let common: Vec<&String> = totals.keys().filter(|k| uniques.contains_key(*k)).collect();
        if common.len() < 3 {
            return Err(Error::invalid(format!(
                "information balance needs at least 3 languages, got {}",
                common.len()
            )));
        }
        let x: Vec<f64> = common.iter().map(|k| totals[*k] as f64).collect();
        let y: Vec<f64> = common.iter().map(|k| uniques[*k] as f64).collect();
        let r = pearson_r(&x, &y)?;
        Ok(InfoBalanceReport {
            per_language_total_tokens: totals,
            per_language_unique_tokens: uniques,
            pearson_r: r,
        })
    }
}

pub fn information_balance(partitions: &[LanguagePartition], vocab: &SubwordVocabulary) -> Result<InfoBalanceReport> {
    if partitions.len() < 3 {
        return Err(Error::invalid(format!(
            "information balance needs at least 3 partitions, got {}",
            partitions.len()
        )));
    }
    let mut totals = BTreeMap::new();
    let mut uniques = BTreeMap::new();
    for p in partitions {
        let (total, unique) = crate::subword::token_stats(vocab, p);
        if total == 0 {
            return Err(Error::Degenerate(format!("partition '{}' has no tokens", p.meta.code)));
        }
        totals.insert(p.meta.code.clone(), total);
        uniques.insert(p.meta.code.clone(), unique);
    }
    InfoBalanceReport::from_counts(totals, uniques)
}
