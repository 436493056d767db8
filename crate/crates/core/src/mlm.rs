//! Masking protocol and a count-based proxy masked language model.
//!
//! The proxy predicts a masked position from its (clean) left context with
//! a back-off n-gram table and additive smoothing. It stands in for a
//! neural MLM so that score matrices can be produced on a laptop; real
//! matrices can always be ingested instead.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LanguagePartition;
use crate::error::{Error, Result};
use crate::matrix::{Provenance, Regime, ScoreMatrix};
use crate::rng::{derive_seed, derive_seed_index, rng_from};
use crate::subword::{is_special, SubwordVocabulary, TokenId, CLS_ID, MASK_ID, NUM_SPECIALS, SEP_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub select_rate: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
    pub max_seq_len: usize,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            select_rate: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
            max_seq_len: 128,
        }
    }
}

impl MaskingPolicy {
    pub fn new(select_rate: f64, mask_frac: f64, random_frac: f64, keep_frac: f64, max_seq_len: usize) -> Result<Self> {
        let policy = MaskingPolicy {
            select_rate,
            mask_frac,
            random_frac,
            keep_frac,
            max_seq_len,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.select_rate > 0.0 && self.select_rate < 1.0) {
            return Err(Error::OutOfRange(format!(
                "select_rate {} must lie in (0, 1)",
                self.select_rate
            )));
        }
        let fracs = [self.mask_frac, self.random_frac, self.keep_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::OutOfRange("corruption fractions must lie in [0, 1]".into()));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mask/random/keep fractions sum to {sum}, not 1"
            )));
        }
        if self.max_seq_len < 3 {
            return Err(Error::invalid("max_seq_len must leave room for [CLS] and [SEP]"));
        }
        Ok(())
    }
}

/// Corrupted input plus the original ids at the selected positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input_ids: Vec<TokenId>,
    pub gold: Vec<(usize, TokenId)>,
}

impl MaskedSequence {
    /// The uncorrupted sequence.
    pub fn original(&self) -> Vec<TokenId> {
        let mut ids = self.input_ids.clone();
        for &(pos, id) in &self.gold {
            ids[pos] = id;
        }
        ids
    }
}

/// Selects each non-special position with probability `select_rate`, then
/// replaces it by `[MASK]`, a random non-special token, or leaves it as is.
/// `ids` is truncated to `max_seq_len` first.
pub fn apply_masking(ids: &[TokenId], policy: &MaskingPolicy, vocab_size: usize, seed: u64) -> MaskedSequence {
    let ids = &ids[..ids.len().min(policy.max_seq_len)];
    let mut rng = rng_from(seed);
    let mut input_ids = ids.to_vec();
    let mut gold = Vec::new();
    let random_ceiling = policy.mask_frac + policy.random_frac;
    for (pos, &id) in ids.iter().enumerate() {
        if is_special(id) {
            continue;
        }
        if rng.gen::<f64>() >= policy.select_rate {
            continue;
        }
        gold.push((pos, id));
        let u: f64 = rng.gen();
        if u < policy.mask_frac {
            input_ids[pos] = MASK_ID;
        } else if u < random_ceiling && vocab_size > NUM_SPECIALS {
            input_ids[pos] = rng.gen_range(NUM_SPECIALS as TokenId..vocab_size as TokenId);
        }
    }
    MaskedSequence { input_ids, gold }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    /// n-gram order; the context holds `order - 1` tokens.
    pub order: usize,
    pub smoothing_alpha: f64,
    /// Weight kept by the source model's counts in sequential training.
    pub decay: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            order: 3,
            smoothing_alpha: 0.1,
            decay: 0.5,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::invalid("order must be at least 1"));
        }
        if self.smoothing_alpha.is_nan() || self.smoothing_alpha <= 0.0 {
            return Err(Error::invalid("smoothing_alpha must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::invalid("decay must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: f64,
    next: BTreeMap<TokenId, f64>,
}

/// Back-off n-gram predictor over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    vocab_fingerprint: u64,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

impl ProxyModel {
    pub fn new(vocab: &SubwordVocabulary, config: &ProxyConfig) -> Self {
        ProxyModel {
            order: config.order,
            alpha: config.smoothing_alpha,
            vocab_size: vocab.len(),
            vocab_fingerprint: vocab.fingerprint(),
            counts: HashMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        self.vocab_fingerprint
    }

    /// Counts every (context, next) event of a sequence, for all context
    /// lengths from 0 to `order - 1`. The first position is never predicted.
    pub fn add_sequence(&mut self, ids: &[TokenId]) {
        for pos in 1..ids.len() {
            let next = ids[pos];
            for k in 0..self.order.min(pos + 1) {
                let ctx = ids[pos - k..pos].to_vec();
                let entry = self.counts.entry(ctx).or_default();
                entry.total += 1.0;
                *entry.next.entry(next).or_insert(0.0) += 1.0;
            }
        }
    }

    /// Adds another model's counts.
    pub fn absorb(&mut self, other: &ProxyModel) -> Result<()> {
        self.check_compatible(other)?;
        for (ctx, c) in &other.counts {
            let entry = self.counts.entry(ctx.clone()).or_default();
            entry.total += c.total;
            for (id, n) in &c.next {
                *entry.next.entry(*id).or_insert(0.0) += n;
            }
        }
        Ok(())
    }

    /// Scales every count by `factor`, dropping counts that reach zero.
    pub fn decay(&mut self, factor: f64) {
        if factor == 0.0 {
            self.counts.clear();
            return;
        }
        for c in self.counts.values_mut() {
            c.total *= factor;
            c.next.values_mut().for_each(|n| *n *= factor);
        }
    }

    fn check_compatible(&self, other: &ProxyModel) -> Result<()> {
        if self.vocab_fingerprint != other.vocab_fingerprint || self.order != other.order {
            return Err(Error::invalid("models use different vocabularies or orders"));
        }
        Ok(())
    }

    /// Count of `next` after exactly `context`.
    pub fn count(&self, context: &[TokenId], next: TokenId) -> f64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.get(&next))
            .copied()
            .unwrap_or(0.0)
    }

    /// Seen contexts along `left`, from the empty context up to
    /// `order - 1` tokens. Unseen contexts are skipped.
    fn backoff<'a>(&'a self, left: &[TokenId]) -> Backoff<'a> {
        let max = (self.order - 1).min(left.len());
        let mut levels = vec![self.counts.get(&[][..]).unwrap_or(&EMPTY_CONTEXT)];
        for k in 1..=max {
            if let Some(c) = self.counts.get(&left[left.len() - k..]).filter(|c| c.total > 0.0) {
                levels.push(c);
            }
        }
        Backoff::new(levels, self.alpha, self.vocab_size as f64)
    }

    /// Probability of `next` given the left context.
    pub fn probability(&self, left: &[TokenId], next: TokenId) -> f64 {
        let b = self.backoff(left);
        b.at(b.top(), next)
    }

    /// Competition rank of `gold`: one plus the number of tokens with a
    /// strictly greater probability.
    pub fn rank(&self, left: &[TokenId], gold: TokenId) -> usize {
        self.ranker().rank(left, gold)
    }

    /// Precomputes what repeated ranking needs.
    pub fn ranker(&self) -> Ranker<'_> {
        let mut unigram = vec![0.0; self.vocab_size];
        if let Some(c) = self.counts.get(&[][..]) {
            for (&id, &n) in &c.next {
                if let Some(slot) = unigram.get_mut(id as usize) {
                    *slot = n;
                }
            }
        }
        let mut sorted = unigram.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        Ranker {
            model: self,
            sorted_unigram: sorted,
        }
    }
}

static EMPTY_CONTEXT: ContextCounts = ContextCounts {
    total: 0.0,
    next: BTreeMap::new(),
};

/// Katz-style back-off with additive discounting. A token seen after the
/// level-`j` context gets `(c + alpha) / (N + alpha V)`; the remaining mass
/// goes to unseen tokens in proportion to level `j - 1`.
struct Backoff<'a> {
    levels: Vec<&'a ContextCounts>,
    scales: Vec<f64>,
    alpha: f64,
    v: f64,
}

impl<'a> Backoff<'a> {
    fn new(levels: Vec<&'a ContextCounts>, alpha: f64, v: f64) -> Self {
        let mut b = Backoff {
            scales: vec![1.0],
            levels,
            alpha,
            v,
        };
        for j in 1..b.levels.len() {
            let mut seen = 0.0;
            let mut lower = 0.0;
            for &u in b.levels[j].next.keys() {
                seen += b.own(j, u);
                lower += b.at(j - 1, u);
            }
            let scale = if lower < 1.0 {
                ((1.0 - seen) / (1.0 - lower)).max(0.0)
            } else {
                0.0
            };
            b.scales.push(scale);
        }
        b
    }

    fn top(&self) -> usize {
        self.levels.len() - 1
    }

    fn own(&self, j: usize, w: TokenId) -> f64 {
        let c = &self.levels[j];
        let n = c.next.get(&w).copied().unwrap_or(0.0);
        (n + self.alpha) / (c.total + self.alpha * self.v)
    }

    /// Product of the scales of levels `from..=to`.
    fn scale(&self, from: usize, to: usize) -> f64 {
        let mut s = 1.0;
        for k in from..=to {
            s *= self.scales[k];
        }
        s
    }

    fn at(&self, j: usize, w: TokenId) -> f64 {
        let m = (1..=j)
            .rev()
            .find(|&m| self.levels[m].next.contains_key(&w))
            .unwrap_or(0);
        self.scale(m + 1, j) * self.own(m, w)
    }
}

/// Ranks gold tokens without materializing full distributions.
pub struct Ranker<'a> {
    model: &'a ProxyModel,
    /// Unigram counts over the whole vocabulary, descending.
    sorted_unigram: Vec<f64>,
}

impl Ranker<'_> {
    pub fn rank(&self, left: &[TokenId], gold: TokenId) -> usize {
        let b = self.model.backoff(left);
        let top = b.top();
        let p_gold = b.at(top, gold);
        let mut higher: Vec<TokenId> = b.levels[1..].iter().flat_map(|c| c.next.keys().copied()).collect();
        higher.sort_unstable();
        higher.dedup();
        let mut rank = 1;
        for &u in &higher {
            if u != gold && b.at(top, u) > p_gold {
                rank += 1;
            }
        }
        // everything else carries the scaled unigram probability
        let s = b.scale(1, top);
        let unigram = b.levels[0];
        let denom = unigram.total + b.alpha * b.v;
        let beats = |c: f64| s * ((c + b.alpha) / denom) > p_gold;
        rank += self.sorted_unigram.partition_point(|&c| beats(c));
        let gold_listed = higher.binary_search(&gold).is_ok();
        for u in higher.iter().copied().chain((!gold_listed).then_some(gold)) {
            if beats(unigram.next.get(&u).copied().unwrap_or(0.0)) {
                rank -= 1;
            }
        }
        rank
    }
}

/// Trains on the given partitions. With `init_from`, the initial model's
/// counts are first scaled by `config.decay` (continued training).
pub fn train_proxy(
    partitions: &[&LanguagePartition],
    vocab: &SubwordVocabulary,
    config: &ProxyConfig,
    init_from: Option<&ProxyModel>,
) -> Result<ProxyModel> {
    config.validate()?;
    if partitions.is_empty() {
        return Err(Error::invalid("no partitions to train on"));
    }
    let mut model = match init_from {
        Some(base) => {
            let mut m = base.clone();
            if m.vocab_fingerprint != vocab.fingerprint() || m.order != config.order {
                return Err(Error::invalid("initial model does not match vocabulary or order"));
            }
            m.decay(config.decay);
            m.alpha = config.smoothing_alpha;
            m
        }
        None => ProxyModel::new(vocab, config),
    };
    let policy = MaskingPolicy::default();
    for p in partitions {
        for s in p.sentences() {
            model.add_sequence(&encode_sentence(vocab, s, policy.max_seq_len));
        }
    }
    Ok(model)
}

/// `[CLS] tokens [SEP]`, truncated to `max_seq_len`.
pub fn encode_sentence(vocab: &SubwordVocabulary, sentence: &str, max_seq_len: usize) -> Vec<TokenId> {
    let body = vocab.tokenize(sentence).ids;
    let keep = body.len().min(max_seq_len.saturating_sub(2));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(CLS_ID);
    ids.extend_from_slice(&body[..keep]);
    ids.push(SEP_ID);
    ids
}

/// Mean reciprocal rank of the gold tokens, each predicted from its clean
/// left context.
pub fn evaluate_mrr(model: &ProxyModel, eval_set: &[MaskedSequence]) -> Result<f64> {
    let ranker = model.ranker();
    let mut sum = 0.0;
    let mut n = 0usize;
    for seq in eval_set {
        let original = seq.original();
        for &(pos, gold) in &seq.gold {
            sum += 1.0 / ranker.rank(&original[..pos], gold) as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("evaluation set has no masked positions"));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub policy: MaskingPolicy,
    pub config: ProxyConfig,
    pub regime: Regime,
    /// Fraction of each partition's sentences held out (taken from the end).
    pub heldout_frac: f64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            policy: MaskingPolicy::default(),
            config: ProxyConfig::default(),
            regime: Regime::Joint,
            heldout_frac: 0.1,
        }
    }
}

/// One model-training job in a scoring run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScoreJob {
    Mono(String),
    /// Pooled pair; evaluated on both members.
    Joint(String, String),
    /// Source model continued on the target; evaluated on the target.
    Sequential {
        source: String,
        target: String,
    },
}

/// Models trained for a language list under a regime.
pub fn plan_jobs(languages: &[String], regime: Regime) -> Vec<ScoreJob> {
    let mut jobs: Vec<ScoreJob> = languages.iter().cloned().map(ScoreJob::Mono).collect();
    for (i, a) in languages.iter().enumerate() {
        for (j, b) in languages.iter().enumerate() {
            match regime {
                Regime::Joint if i < j => jobs.push(ScoreJob::Joint(a.clone(), b.clone())),
                Regime::Sequential if i != j => jobs.push(ScoreJob::Sequential {
                    source: a.clone(),
                    target: b.clone(),
                }),
                _ => {}
            }
        }
    }
    jobs
}

struct LanguageData {
    code: String,
    train: Vec<Vec<TokenId>>,
    heldout: Vec<Vec<TokenId>>,
}

fn split_language(p: &LanguagePartition, vocab: &SubwordVocabulary, opts: &ScoringOptions) -> Result<LanguageData> {
    let sentences: Vec<&str> = p.sentences().collect();
    let n_heldout = (sentences.len() as f64 * opts.heldout_frac).floor() as usize;
    if n_heldout == 0 {
        return Err(Error::invalid(format!(
            "language '{}' has an empty held-out slice ({} sentences)",
            p.meta.code,
            sentences.len()
        )));
    }
    let cut = sentences.len() - n_heldout;
    let enc = |s: &&str| encode_sentence(vocab, s, opts.policy.max_seq_len);
    Ok(LanguageData {
        code: p.meta.code.clone(),
        train: sentences[..cut].iter().map(enc).collect(),
        heldout: sentences[cut..].iter().map(enc).collect(),
    })
}

/// Masks a language's held-out sentences for one seed.
pub fn mask_heldout(
    heldout: &[Vec<TokenId>],
    code: &str,
    policy: &MaskingPolicy,
    vocab_size: usize,
    seed: u64,
) -> Vec<MaskedSequence> {
    let lang_seed = derive_seed(seed, code);
    heldout
        .iter()
        .enumerate()
        .map(|(i, ids)| apply_masking(ids, policy, vocab_size, derive_seed_index(lang_seed, i as u64)))
        .collect()
}

/// Scores every language monolingually and every ordered pair
/// bilingually, averaging over `seeds`.
pub fn score_all_pairs(
    partitions: &[LanguagePartition],
    vocab: &SubwordVocabulary,
    opts: &ScoringOptions,
    seeds: &[u64],
) -> Result<ScoreMatrix> {
    opts.policy.validate()?;
    opts.config.validate()?;
    if partitions.len() < 2 {
        return Err(Error::invalid("scoring needs at least 2 partitions"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let mut data: Vec<LanguageData> = partitions
        .iter()
        .map(|p| split_language(p, vocab, opts))
        .collect::<Result<_>>()?;
    data.sort_by(|a, b| a.code.cmp(&b.code));
    if data.windows(2).any(|w| w[0].code == w[1].code) {
        return Err(Error::invalid("duplicate language among partitions"));
    }
    let languages: Vec<String> = data.iter().map(|d| d.code.clone()).collect();

    let mono_models: BTreeMap<&str, ProxyModel> = data
        .iter()
        .map(|d| {
            let mut m = ProxyModel::new(vocab, &opts.config);
            for s in &d.train {
                m.add_sequence(s);
            }
            (d.code.as_str(), m)
        })
        .collect();

    let bilingual_model = |source: &str, target: &str| -> Result<ProxyModel> {
        match opts.regime {
            Regime::Joint => {
                // pooled counts are order independent; build in code order
                let (a, b) = if source < target {
                    (source, target)
                } else {
                    (target, source)
                };
                let mut m = mono_models[a].clone();
                m.absorb(&mono_models[b])?;
                Ok(m)
            }
            Regime::Sequential => {
                let mut m = mono_models[source].clone();
                m.decay(opts.config.decay);
                m.absorb(&mono_models[target])?;
                Ok(m)
            }
        }
    };

    // models are seed independent; only the evaluation masks vary
    let mut per_seed: Vec<ScoreMatrix> = seeds
        .iter()
        .map(|&s| {
            let mut m = ScoreMatrix::new(languages.clone(), Provenance::Proxy);
            m.regime = Some(opts.regime);
            m.seeds = vec![s];
            m
        })
        .collect();
    let eval_sets: Vec<BTreeMap<&str, Vec<MaskedSequence>>> = seeds
        .iter()
        .map(|&seed| {
            data.iter()
                .map(|d| {
                    let set = mask_heldout(&d.heldout, &d.code, &opts.policy, vocab.len(), seed);
                    (d.code.as_str(), set)
                })
                .collect()
        })
        .collect();

    for d in &data {
        for (k, sets) in eval_sets.iter().enumerate() {
            let mrr = evaluate_mrr(&mono_models[d.code.as_str()], &sets[d.code.as_str()])?;
            per_seed[k].set_mono(&d.code, mrr);
        }
    }
    for job in plan_jobs(&languages, opts.regime) {
        let pairs: Vec<(String, String)> = match job {
            ScoreJob::Mono(_) => continue,
            ScoreJob::Joint(a, b) => vec![(a.clone(), b.clone()), (b, a)],
            ScoreJob::Sequential { source, target } => vec![(source, target)],
        };
        let model = bilingual_model(&pairs[0].0, &pairs[0].1)?;
        for (source, target) in pairs {
            for (k, sets) in eval_sets.iter().enumerate() {
                let mrr = evaluate_mrr(&model, &sets[target.as_str()])?;
                per_seed[k].set_bilingual(&source, &target, mrr);
            }
        }
    }
    let mut out = ScoreMatrix::mean(&per_seed)?;
    out.seeds = seeds.to_vec();
    out.validate()?;
    Ok(out)
}

/// Scores one model pretrained jointly on `pretrain` and evaluated on each
/// language of `eval_langs`. The result carries only monolingual entries:
/// `mono[l]` is the pooled model's MRR on `l`.
pub fn score_pretrain_set(
    partitions: &[LanguagePartition],
    vocab: &SubwordVocabulary,
    opts: &ScoringOptions,
    pretrain: &[String],
    eval_langs: &[String],
    seeds: &[u64],
) -> Result<ScoreMatrix> {
    let by_code: BTreeMap<&str, &LanguagePartition> = partitions.iter().map(|p| (p.meta.code.as_str(), p)).collect();
    let mut model = ProxyModel::new(vocab, &opts.config);
    let mut heldout: BTreeMap<&str, Vec<Vec<TokenId>>> = BTreeMap::new();
    for code in pretrain.iter().chain(eval_langs) {
        let p = by_code
            .get(code.as_str())
            .ok_or_else(|| Error::Missing(vec![format!("partition '{code}'")]))?;
        let d = split_language(p, vocab, opts)?;
        if pretrain.contains(code) && !heldout.contains_key(code.as_str()) {
            for s in &d.train {
                model.add_sequence(s);
            }
        }
        heldout.insert(p.meta.code.as_str(), d.heldout);
    }
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let mut m = ScoreMatrix::new(eval_langs.to_vec(), Provenance::Proxy);
        m.seeds = vec![seed];
        for code in eval_langs {
            let set = mask_heldout(&heldout[code.as_str()], code, &opts.policy, vocab.len(), seed);
            m.set_mono(code, evaluate_mrr(&model, &set)?);
        }
        per_seed.push(m);
    }
    ScoreMatrix::mean(&per_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageMeta;
    use crate::subword::train_on_texts;
    use approx::assert_abs_diff_eq;

    fn vocab_for(text: &str) -> SubwordVocabulary {
        // keep single characters as tokens: vocab = alphabet only
        let alphabet = 2 * text
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        train_on_texts([text], alphabet + NUM_SPECIALS).unwrap()
    }

    #[test]
    fn policy_contract() {
        assert!(MaskingPolicy::new(0.0, 0.8, 0.1, 0.1, 128).is_err());
        assert!(MaskingPolicy::new(1.0, 0.8, 0.1, 0.1, 128).is_err());
        assert!(MaskingPolicy::new(0.15, 0.8, 0.1, 0.2, 128).is_err());
        assert!(MaskingPolicy::default().validate().is_ok());
    }

    #[test]
    fn masking_is_deterministic_and_skips_specials() {
        let ids: Vec<TokenId> = (0..120).map(|i| (i % 30) as TokenId).collect();
        let p = MaskingPolicy::default();
        let a = apply_masking(&ids, &p, 30, 42);
        let b = apply_masking(&ids, &p, 30, 42);
        assert_eq!(a, b);
        for (pos, id) in &a.gold {
            assert!(*pos < a.input_ids.len());
            assert!(!is_special(*id));
        }
        assert_eq!(a.original(), ids);
    }

    #[test]
    fn masking_truncates() {
        let ids: Vec<TokenId> = vec![10; 500];
        let m = apply_masking(&ids, &MaskingPolicy::default(), 20, 1);
        assert_eq!(m.input_ids.len(), 128);
    }

    #[test]
    fn bigram_smoothing_closed_form() {
        let v = vocab_for("a b");
        let cfg = ProxyConfig {
            order: 2,
            ..Default::default()
        };
        let mut m = ProxyModel::new(&v, &cfg);
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        m.add_sequence(&[a, b, a, b, a]);
        let alpha = cfg.smoothing_alpha;
        let size = v.len() as f64;
        assert_abs_diff_eq!(
            m.probability(&[a], b),
            (2.0 + alpha) / (2.0 + alpha * size),
            epsilon = 1e-15
        );
    }

    fn partition(code: &str, text: &str) -> LanguagePartition {
        let sentences: Vec<&str> = text.split('\n').collect();
        LanguagePartition::from_sentences(LanguageMeta::new(code, "f", "Latin").unwrap(), &sentences)
    }

    #[test]
    fn joint_training_commutes() {
        let l1 = partition("l1", "a b c\nb c a");
        let l2 = partition("l2", "c c a\nb b");
        let v = vocab_for("a b c");
        let cfg = ProxyConfig::default();
        let ab = train_proxy(&[&l1, &l2], &v, &cfg, None).unwrap();
        let ba = train_proxy(&[&l2, &l1], &v, &cfg, None).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn sequential_with_full_decay_is_monolingual() {
        let l1 = partition("l1", "a b c\nb c a");
        let l2 = partition("l2", "c c a\nb b");
        let v = vocab_for("a b c");
        let cfg = ProxyConfig {
            decay: 0.0,
            ..Default::default()
        };
        let src = train_proxy(&[&l1], &v, &cfg, None).unwrap();
        let seq = train_proxy(&[&l2], &v, &cfg, Some(&src)).unwrap();
        let mono = train_proxy(&[&l2], &v, &cfg, None).unwrap();
        assert_eq!(seq, mono);
        assert!(train_proxy(&[], &v, &cfg, None).is_err());
    }

    #[test]
    fn mrr_arithmetic() {
        let v = vocab_for("a b c d");
        let cfg = ProxyConfig {
            order: 1,
            ..Default::default()
        };
        let mut m = ProxyModel::new(&v, &cfg);
        let [a, b, c, d] = ["a", "b", "c", "d"].map(|t| v.id(t).unwrap());
        // unigram counts a:4 b:3 c:2 d:1 -> ranks a=1, b=2, d=4
        m.add_sequence(&[CLS_ID, a, a, a, a, b, b, b, c, c, d]);
        let seq = MaskedSequence {
            input_ids: vec![MASK_ID, MASK_ID, MASK_ID],
            gold: vec![(0, a), (1, b), (2, d)],
        };
        let mrr = evaluate_mrr(&m, &[seq]).unwrap();
        assert_abs_diff_eq!(mrr, (1.0 + 0.5 + 0.25) / 3.0, epsilon = 1e-15);
        assert!(evaluate_mrr(&m, &[]).is_err());
    }

    #[test]
    fn cyclic_corpus_is_perfectly_predicted() {
        let v = vocab_for("a b c");
        let cfg = ProxyConfig {
            order: 2,
            ..Default::default()
        };
        let [a, b, c] = ["a", "b", "c"].map(|t| v.id(t).unwrap());
        let cycle: Vec<TokenId> = (0..300).map(|i| [a, b, c][i % 3]).collect();
        let mut m = ProxyModel::new(&v, &cfg);
        m.add_sequence(&cycle);
        let policy = MaskingPolicy {
            max_seq_len: 1000,
            ..Default::default()
        };
        let mut set = Vec::new();
        let mut positions = 0;
        let mut seed = 0;
        while positions < 100 {
            let eval: Vec<TokenId> = (0..60).map(|i| [a, b, c][i % 3]).collect();
            let s = apply_masking(&eval, &policy, v.len(), seed);
            // the first position has no left context
            let s = MaskedSequence {
                gold: s.gold.into_iter().filter(|(p, _)| *p > 0).collect(),
                ..s
            };
            positions += s.gold.len();
            set.push(s);
            seed += 1;
        }
        assert_eq!(evaluate_mrr(&m, &set).unwrap(), 1.0);
    }

    #[test]
    fn distribution_normalizes_and_ranks_match_brute_force() {
        let text = "ab ba abc cab bca ca";
        let v = vocab_for(text);
        let cfg = ProxyConfig::default();
        let mut m = ProxyModel::new(&v, &cfg);
        let ids: Vec<TokenId> = (0..200).map(|i| (5 + (i * i + 3 * i) % 7) as TokenId).collect();
        m.add_sequence(&ids);
        m.add_sequence(&[CLS_ID, 6, 6, 7, SEP_ID]);
        let size = v.len() as TokenId;
        let contexts: [&[TokenId]; 5] = [&[], &[6], &[6, 6], &[9, 5], &[0, 1]];
        for left in contexts {
            let probs: Vec<f64> = (0..size).map(|w| m.probability(left, w)).collect();
            assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for gold in 0..size {
                let brute = 1 + probs.iter().filter(|&&p| p > probs[gold as usize]).count();
                assert_eq!(m.rank(left, gold), brute, "left {left:?} gold {gold}");
            }
        }
    }

    #[test]
    fn job_counts() {
        let langs = |n: usize| (0..n).map(|i| format!("l{i}")).collect::<Vec<_>>();
        let count = |jobs: &[ScoreJob]| {
            let mono = jobs.iter().filter(|j| matches!(j, ScoreJob::Mono(_))).count();
            (mono, jobs.len() - mono)
        };
        assert_eq!(count(&plan_jobs(&langs(2), Regime::Joint)), (2, 1));
        assert_eq!(count(&plan_jobs(&langs(5), Regime::Joint)), (5, 10));
        assert_eq!(count(&plan_jobs(&langs(5), Regime::Sequential)), (5, 20));
    }
}
