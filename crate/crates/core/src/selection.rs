//! Choosing pretraining languages from the transfer graph, and scoring
//! downstream zero-shot results for those choices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TransferGraph;
use crate::rng::{derive_seed, rng_from};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_MIN_FAMILIES: usize = 3;
pub const DEFAULT_PRETRAIN_BUDGET: u64 = 100_000_000;
/// Per-language caps on downstream training sentences.
pub const POS_SENTENCE_CAP: usize = 1_000;
pub const NER_SENTENCE_CAP: usize = 5_000;

const RANDOM_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    MostDonating,
    LeastDonating,
    Random,
    Control,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::MostDonating => "most_donating",
            SelectionMode::LeastDonating => "least_donating",
            SelectionMode::Random => "random",
            SelectionMode::Control => "control",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().replace('-', "_");
        [
            SelectionMode::MostDonating,
            SelectionMode::LeastDonating,
            SelectionMode::Random,
            SelectionMode::Control,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown selection mode '{s}'")))
    }
}

/// Languages by donation, highest first; ties by code.
pub fn rank_donors(graph: &TransferGraph) -> Vec<String> {
    let mut codes: Vec<(&String, f64)> = graph.nodes.iter().map(|(c, n)| (c, n.donation)).collect();
    codes.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    codes.into_iter().map(|(c, _)| c.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub k: usize,
    pub mode: SelectionMode,
    /// Minimum number of distinct families among the donors.
    pub min_families: usize,
    #[serde(default)]
    pub excluded: BTreeSet<String>,
    /// Donors that must be part of the answer.
    #[serde(default)]
    pub force_include: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SelectionRequest {
    fn default() -> Self {
        SelectionRequest {
            k: DEFAULT_K,
            mode: SelectionMode::MostDonating,
            min_families: DEFAULT_MIN_FAMILIES,
            excluded: BTreeSet::new(),
            force_include: Vec::new(),
            seed: 0,
        }
    }
}

/// A donor set is extendable to a feasible answer iff it has at most `k`
/// members and at most `k - f` of them repeat a family already present.
/// These sets form a matroid, so greedy selection by weight is optimal.
struct DiversityMatroid<'a> {
    k: usize,
    slack: usize,
    family: &'a BTreeMap<String, String>,
}

impl DiversityMatroid<'_> {
    fn independent(&self, set: &[String]) -> bool {
        let families: BTreeSet<&String> = set.iter().map(|c| &self.family[c]).collect();
        set.len() <= self.k && set.len() - families.len() <= self.slack
    }

    /// Extends `chosen` greedily in the order of `candidates`.
    fn greedy(&self, chosen: &mut Vec<String>, candidates: &[String]) {
        for c in candidates {
            if chosen.len() == self.k {
                break;
            }
            if chosen.contains(c) {
                continue;
            }
            chosen.push(c.clone());
            if !self.independent(chosen) {
                chosen.pop();
            }
        }
    }
}

/// Picks `k` donors among the languages not in `excluded`, with at least
/// `min_families` distinct families. Greedy by donation for the donating
/// modes; seeded uniform sampling for `random`. `control` picks nothing.
pub fn select_pretrain_set(graph: &TransferGraph, req: &SelectionRequest) -> Result<Vec<String>> {
    if req.mode == SelectionMode::Control {
        return Ok(Vec::new());
    }
    for c in req.excluded.iter().chain(&req.force_include) {
        if graph.node(c).is_none() {
            return Err(Error::invalid(format!("unknown language '{c}'")));
        }
    }
    if let Some(c) = req.force_include.iter().find(|c| req.excluded.contains(*c)) {
        return Err(Error::invalid(format!("'{c}' is both forced and excluded")));
    }
    let eligible: Vec<String> = rank_donors(graph)
        .into_iter()
        .filter(|c| !req.excluded.contains(c))
        .collect();
    let family: BTreeMap<String, String> = eligible
        .iter()
        .map(|c| (c.clone(), graph.nodes[c].meta.family.clone()))
        .collect();
    let n_families = family.values().collect::<BTreeSet<_>>().len();
    if req.k == 0 {
        return Err(Error::Infeasible("k must be at least 1".into()));
    }
    if req.k > eligible.len() {
        return Err(Error::Infeasible(format!(
            "k = {} exceeds the {} eligible languages",
            req.k,
            eligible.len()
        )));
    }
    if req.min_families > req.k || req.min_families > n_families {
        return Err(Error::Infeasible(format!(
            "{} distinct families requested from k = {} picks over {} available families",
            req.min_families, req.k, n_families
        )));
    }
    let matroid = DiversityMatroid {
        k: req.k,
        slack: req.k - req.min_families,
        family: &family,
    };
    let mut chosen: Vec<String> = Vec::new();
    for c in &req.force_include {
        if !chosen.contains(c) {
            chosen.push(c.clone());
        }
    }
    if !matroid.independent(&chosen) {
        return Err(Error::Infeasible(
            "forced languages cannot be completed to a diverse enough set".into(),
        ));
    }
    match req.mode {
        SelectionMode::MostDonating => matroid.greedy(&mut chosen, &eligible),
        SelectionMode::LeastDonating => {
            let mut ascending = eligible.clone();
            ascending.sort_by(|a, b| {
                graph.nodes[a]
                    .donation
                    .total_cmp(&graph.nodes[b].donation)
                    .then_with(|| a.cmp(b))
            });
            matroid.greedy(&mut chosen, &ascending);
        }
        SelectionMode::Random => {
            let mut rng = rng_from(derive_seed(req.seed, "random-donors"));
            let open: Vec<String> = eligible.iter().filter(|c| !chosen.contains(c)).cloned().collect();
            let need = req.k - chosen.len();
            let mut found = false;
            for _ in 0..RANDOM_ATTEMPTS {
                let mut trial = chosen.clone();
                trial.extend(open.choose_multiple(&mut rng, need).cloned());
                if matroid.independent(&trial) {
                    chosen = trial;
                    found = true;
                    break;
                }
            }
            if !found {
                let mut order = open;
                order.shuffle(&mut rng);
                matroid.greedy(&mut chosen, &order);
            }
        }
        SelectionMode::Control => unreachable!(),
    }
    if chosen.len() < req.k {
        return Err(Error::Infeasible(format!(
            "only {} of {} donors satisfy the family constraint",
            chosen.len(),
            req.k
        )));
    }
    chosen.sort();
    Ok(chosen)
}

/// Splits recipients into high and low halves by recipience (the extra one
/// goes to the high half).
pub fn split_recipients(graph: &TransferGraph, recipients: &BTreeSet<String>) -> Result<(Vec<String>, Vec<String>)> {
    let mut ranked: Vec<(&String, f64)> = Vec::new();
    for c in recipients {
        let node = graph
            .node(c)
            .ok_or_else(|| Error::invalid(format!("unknown language '{c}'")))?;
        ranked.push((c, node.recipience));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let cut = ranked.len().div_ceil(2);
    let mut high: Vec<String> = ranked[..cut].iter().map(|(c, _)| (*c).clone()).collect();
    let mut low: Vec<String> = ranked[cut..].iter().map(|(c, _)| (*c).clone()).collect();
    high.sort();
    low.sort();
    Ok((high, low))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownstreamCaps {
    pub pos_sentences: usize,
    pub ner_sentences: usize,
}

impl Default for DownstreamCaps {
    fn default() -> Self {
        DownstreamCaps {
            pos_sentences: POS_SENTENCE_CAP,
            ner_sentences: NER_SENTENCE_CAP,
        }
    }
}

/// A pretraining configuration and its per-language character budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub id: String,
    pub mode: SelectionMode,
    pub donors: Vec<String>,
    pub recipients_high: Vec<String>,
    pub recipients_low: Vec<String>,
    pub budget_chars: u64,
    /// Equal split of `budget_chars` over every pretraining language.
    pub allocation: BTreeMap<String, u64>,
    #[serde(default)]
    pub downstream_caps: DownstreamCaps,
}

impl PretrainConfig {
    pub fn new(
        id: &str,
        mode: SelectionMode,
        donors: Vec<String>,
        recipients_high: Vec<String>,
        recipients_low: Vec<String>,
        budget_chars: u64,
    ) -> Result<Self> {
        let mut config = PretrainConfig {
            id: id.to_owned(),
            mode,
            donors,
            recipients_high,
            recipients_low,
            budget_chars,
            allocation: BTreeMap::new(),
            downstream_caps: DownstreamCaps::default(),
        };
        let langs = config.languages();
        if langs.is_empty() {
            return Err(Error::invalid("pretraining configuration has no languages"));
        }
        let share = budget_chars / langs.len() as u64;
        config.allocation = langs.into_iter().map(|c| (c, share)).collect();
        config.validate()?;
        Ok(config)
    }

    pub fn recipients(&self) -> BTreeSet<String> {
        self.recipients_high
            .iter()
            .chain(&self.recipients_low)
            .cloned()
            .collect()
    }

    /// Donors plus recipients.
    pub fn languages(&self) -> BTreeSet<String> {
        self.donors.iter().cloned().chain(self.recipients()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::invalid("configuration id is empty"));
        }
        let recipients = self.recipients();
        if let Some(c) = self.donors.iter().find(|c| recipients.contains(*c)) {
            return Err(Error::invalid(format!(
                "'{c}' is both donor and recipient in '{}'",
                self.id
            )));
        }
        if self.mode == SelectionMode::Control && !self.donors.is_empty() {
            return Err(Error::invalid(format!(
                "control configuration '{}' has donors",
                self.id
            )));
        }
        if self.recipients_high.iter().any(|c| self.recipients_low.contains(c)) {
            return Err(Error::invalid(format!("recipient sets of '{}' overlap", self.id)));
        }
        let langs = self.languages();
        if !self.allocation.is_empty() && self.allocation.keys().cloned().collect::<BTreeSet<_>>() != langs {
            return Err(Error::invalid(format!(
                "allocation of '{}' does not cover its languages",
                self.id
            )));
        }
        Ok(())
    }

    pub fn donation_sum(&self, graph: &TransferGraph, include_recipients: bool) -> Result<f64> {
        let langs: Vec<String> = if include_recipients {
            self.languages().into_iter().collect()
        } else {
            self.donors.clone()
        };
        let mut sum = 0.0;
        for c in &langs {
            sum += graph
                .node(c)
                .ok_or_else(|| Error::invalid(format!("unknown language '{c}'")))?
                .donation;
        }
        Ok(sum)
    }
}

/// Selects donors and wraps them into a configuration whose recipients are
/// the excluded languages, split by recipience.
pub fn compose_config(
    graph: &TransferGraph,
    id: &str,
    req: &SelectionRequest,
    budget_chars: u64,
) -> Result<PretrainConfig> {
    let donors = select_pretrain_set(graph, req)?;
    let (high, low) = split_recipients(graph, &req.excluded)?;
    PretrainConfig::new(id, req.mode, donors, high, low, budget_chars)
}

pub fn manifest_to_json(configs: &[PretrainConfig]) -> String {
    let mut s = serde_json::to_string_pretty(configs).expect("configs serialize");
    s.push('\n');
    s
}

/// Accepts a single configuration or an array of them.
pub fn manifest_from_json(text: &str) -> Result<Vec<PretrainConfig>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<PretrainConfig>),
        One(Box<PretrainConfig>),
    }
    let parsed: OneOrMany = serde_json::from_str(text).map_err(|e| Error::parse("manifest", e.to_string()))?;
    let configs = match parsed {
        OneOrMany::Many(v) => v,
        OneOrMany::One(c) => vec![*c],
    };
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PretrainConfig>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    manifest_from_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

/// Downstream F1 per (configuration, finetune language, test language),
/// averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamResults {
    pub task: String,
    pub scores: BTreeMap<(String, String, String), f64>,
    pub seeds: usize,
}

impl DownstreamResults {
    pub fn new(task: &str) -> Self {
        DownstreamResults {
            task: task.to_owned(),
            scores: BTreeMap::new(),
            seeds: 0,
        }
    }

    pub fn insert(&mut self, config: &str, source: &str, target: &str, f1: f64) {
        self.scores
            .insert((config.to_owned(), source.to_owned(), target.to_owned()), f1);
    }

    pub fn get(&self, config: &str, source: &str, target: &str) -> Option<f64> {
        self.scores
            .get(&(config.to_owned(), source.to_owned(), target.to_owned()))
            .copied()
    }

    pub fn config_ids(&self) -> BTreeSet<&str> {
        self.scores.keys().map(|k| k.0.as_str()).collect()
    }
}

/// Parses `config_id  task  source  target  f1  seed` rows (a header row is
/// optional) into one result set per task, averaging over seeds.
pub fn parse_downstream_tsv(text: &str) -> Result<Vec<DownstreamResults>> {
    type Key = (String, String, String);
    let mut sums: BTreeMap<String, BTreeMap<Key, (f64, usize)>> = BTreeMap::new();
    let mut seeds: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if i == 0 && f.first() == Some(&"config_id") {
            continue;
        }
        if f.len() != 6 {
            return Err(Error::parse(
                format!("line {}", i + 1),
                "expected 6 tab-separated fields",
            ));
        }
        let f1: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(format!("line {}", i + 1), format!("bad f1 '{}'", f[4])))?;
        if !(0.0..=1.0).contains(&f1) {
            return Err(Error::OutOfRange(format!("line {}: f1 {f1} outside [0, 1]", i + 1)));
        }
        let entry = sums
            .entry(f[1].to_owned())
            .or_default()
            .entry((f[0].to_owned(), f[2].to_owned(), f[3].to_owned()))
            .or_insert((0.0, 0));
        entry.0 += f1;
        entry.1 += 1;
        seeds.entry(f[1].to_owned()).or_default().insert(f[5].to_owned());
    }
    Ok(sums
        .into_iter()
        .map(|(task, cells)| DownstreamResults {
            seeds: seeds[&task].len(),
            scores: cells.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            task,
        })
        .collect())
}

pub fn load_downstream(path: impl AsRef<Path>) -> Result<Vec<DownstreamResults>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_downstream_tsv(&text)
}

/// Mean zero-shot score over all ordered pairs of distinct languages in `d`.
pub fn zero_shot_score(results: &DownstreamResults, config: &str, d: &[String]) -> Result<f64> {
    let d: BTreeSet<&String> = d.iter().collect();
    if d.len() < 2 {
        return Err(Error::invalid("zero-shot score needs at least 2 languages"));
    }
    let mut sum = 0.0;
    let mut missing = Vec::new();
    for s in &d {
        for t in &d {
            if s == t {
                continue;
            }
            match results.get(config, s, t) {
                Some(v) => sum += v,
                None => missing.push(format!("{config}:{s}->{t}")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    Ok(sum / (d.len() * (d.len() - 1)) as f64)
}

/// Mean of the monolingual (source = target) scores over `c`.
pub fn monolingual_score(results: &DownstreamResults, config: &str, c: &[String]) -> Result<f64> {
    let c: BTreeSet<&String> = c.iter().collect();
    if c.is_empty() {
        return Err(Error::invalid("monolingual score needs at least 1 language"));
    }
    let mut sum = 0.0;
    let mut missing = Vec::new();
    for l in &c {
        match results.get(config, l, l) {
            Some(v) => sum += v,
            None => missing.push(format!("{config}:{l}->{l}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    Ok(sum / c.len() as f64)
}

/// Differences smaller than this count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisId {
    /// Zero-shot score grows with the summed recipience of the test set.
    RecipienceProportionality,
    /// A larger summed donation never lowers zero-shot score.
    DonationSums,
    /// High-recipience languages beat low-recipience ones under every
    /// configuration.
    RecipientSets,
    /// Most donating > random > least donating.
    DonorSets,
    /// Adding pretraining languages never lowers the aggregate score.
    PretrainMonotonicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Holds,
    Tie,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub left: f64,
    pub right: f64,
    /// `left - right`.
    pub margin: f64,
    pub outcome: Outcome,
}

impl Comparison {
    /// `left > right`, with near-equal values reported as a tie.
    fn strict(label: String, left: f64, right: f64) -> Self {
        let margin = left - right;
        let outcome = if margin.abs() <= TIE_TOLERANCE {
            Outcome::Tie
        } else if margin > 0.0 {
            Outcome::Holds
        } else {
            Outcome::Violated
        };
        Comparison {
            label,
            left,
            right,
            margin,
            outcome,
        }
    }

    /// `left >= right`, up to the tie tolerance.
    fn weak(label: String, left: f64, right: f64) -> Self {
        let margin = left - right;
        Comparison {
            label,
            left,
            right,
            margin,
            outcome: if margin >= -TIE_TOLERANCE {
                Outcome::Holds
            } else {
                Outcome::Violated
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n: usize,
    pub pearson_r: f64,
    pub pearson_p: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub hypothesis_id: HypothesisId,
    /// Downstream task, when the check used downstream results.
    pub task: Option<String>,
    /// Which reading was checked, when there are several.
    pub variant: Option<String>,
    pub satisfied: Verdict,
    pub margins: Vec<f64>,
    pub details: Vec<Comparison>,
    pub ties: usize,
    pub correlation: Option<CorrelationSummary>,
}

impl HypothesisResult {
    fn from_comparisons(id: HypothesisId, task: Option<&str>, details: Vec<Comparison>) -> Self {
        let holds = details.iter().filter(|c| c.outcome == Outcome::Holds).count();
        let satisfied = if holds == details.len() {
            Verdict::Yes
        } else if holds == 0 {
            Verdict::No
        } else {
            Verdict::Partial
        };
        HypothesisResult {
            hypothesis_id: id,
            task: task.map(str::to_owned),
            variant: None,
            satisfied,
            margins: details.iter().map(|c| c.margin).collect(),
            ties: details.iter().filter(|c| c.outcome == Outcome::Tie).count(),
            details,
            correlation: None,
        }
    }
}

/// Recipient sets: for every configuration, the zero-shot score on the
/// high-recipience set exceeds the one on the low set.
pub fn check_recipient_sets(
    results: &DownstreamResults,
    configs: &[&str],
    r_high: &[String],
    r_low: &[String],
) -> Result<HypothesisResult> {
    if configs.is_empty() {
        return Err(Error::invalid("no configurations to check"));
    }
    let mut details = Vec::new();
    for &c in configs {
        let high = zero_shot_score(results, c, r_high)?;
        let low = zero_shot_score(results, c, r_low)?;
        details.push(Comparison::strict(format!("{c}: high > low"), high, low));
    }
    Ok(HypothesisResult::from_comparisons(
        HypothesisId::RecipientSets,
        Some(&results.task),
        details,
    ))
}

/// Donor sets from already aggregated zero-shot scores.
pub fn donor_set_ordering(task: Option<&str>, most: f64, random: f64, least: f64) -> HypothesisResult {
    HypothesisResult::from_comparisons(
        HypothesisId::DonorSets,
        task,
        vec![
            Comparison::strict("most > random".into(), most, random),
            Comparison::strict("random > least".into(), random, least),
        ],
    )
}

/// Donor sets: most donating > random > least donating on `c`.
pub fn check_donor_sets(
    results: &DownstreamResults,
    most: &str,
    random: &str,
    least: &str,
    c: &[String],
) -> Result<HypothesisResult> {
    Ok(donor_set_ordering(
        Some(&results.task),
        zero_shot_score(results, most, c)?,
        zero_shot_score(results, random, c)?,
        zero_shot_score(results, least, c)?,
    ))
}

/// Recipient sets from already aggregated zero-shot scores.
pub fn recipient_set_ordering(task: Option<&str>, pairs: &[(&str, f64, f64)]) -> HypothesisResult {
    HypothesisResult::from_comparisons(
        HypothesisId::RecipientSets,
        task,
        pairs
            .iter()
            .map(|(label, high, low)| Comparison::strict(format!("{label}: high > low"), *high, *low))
            .collect(),
    )
}

/// Donation sum: ordering configurations by summed donation must not
/// reverse their zero-shot scores on `d`. Checked once with donors only and
/// once with every pretraining language.
pub fn check_donation_sum(
    graph: &TransferGraph,
    results: &DownstreamResults,
    configs: &[&PretrainConfig],
    d: &[String],
) -> Result<Vec<HypothesisResult>> {
    if configs.len() < 2 {
        return Err(Error::invalid("donation sum check needs at least 2 configurations"));
    }
    let mut out = Vec::new();
    for (variant, full) in [("donors_only", false), ("all_pretraining_languages", true)] {
        let mut scored = Vec::new();
        for c in configs {
            scored.push((
                c.id.as_str(),
                c.donation_sum(graph, full)?,
                zero_shot_score(results, &c.id, d)?,
            ));
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        let mut details = Vec::new();
        for i in 0..scored.len() {
            for j in i + 1..scored.len() {
                let (lo, hi) = (&scored[i], &scored[j]);
                details.push(Comparison::weak(
                    format!("{} (donation {:.4}) >= {} (donation {:.4})", hi.0, hi.1, lo.0, lo.1),
                    hi.2,
                    lo.2,
                ));
                if (hi.1 - lo.1).abs() <= TIE_TOLERANCE {
                    details.push(Comparison::weak(format!("{} >= {}", lo.0, hi.0), lo.2, hi.2));
                }
            }
        }
        let mut r = HypothesisResult::from_comparisons(HypothesisId::DonationSums, Some(&results.task), details);
        r.variant = Some(variant.to_owned());
        out.push(r);
    }
    Ok(out)
}

/// One observation for the proportionality check.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: String,
    pub languages: Vec<String>,
}

/// Correlates summed recipience of each observation's languages with the
/// zero-shot score on them. Holds when the correlation is positive with
/// p < 0.05; Pearson and Spearman are both checked.
pub fn recipience_proportionality(
    graph: &TransferGraph,
    results: &DownstreamResults,
    observations: &[Observation],
) -> Result<HypothesisResult> {
    if observations.len() < 3 {
        return Err(Error::invalid(format!(
            "proportionality needs at least 3 observations, got {}",
            observations.len()
        )));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for o in observations {
        let mut sum = 0.0;
        for c in &o.languages {
            sum += graph
                .node(c)
                .ok_or_else(|| Error::invalid(format!("unknown language '{c}'")))?
                .recipience;
        }
        x.push(sum);
        y.push(zero_shot_score(results, &o.config, &o.languages)?);
    }
    proportionality_from_values(Some(&results.task), &x, &y)
}

pub fn proportionality_from_values(task: Option<&str>, x: &[f64], y: &[f64]) -> Result<HypothesisResult> {
    use crate::stats::{pearson_r, spearman_rho, t_test_correlation};
    let r = pearson_r(x, y)?;
    let rho = spearman_rho(x, y)?;
    let pt = t_test_correlation(r, x.len())?;
    let st = t_test_correlation(rho, x.len())?;
    let check = |label: &str, coef: f64, p: f64| Comparison {
        label: format!("{label} positive and significant (p = {p:.3e})"),
        left: coef,
        right: 0.0,
        margin: coef,
        outcome: if coef > 0.0 && p < 0.05 {
            Outcome::Holds
        } else {
            Outcome::Violated
        },
    };
    let mut result = HypothesisResult::from_comparisons(
        HypothesisId::RecipienceProportionality,
        task,
        vec![check("pearson", r, pt.p_value), check("spearman", rho, st.p_value)],
    );
    result.correlation = Some(CorrelationSummary {
        n: x.len(),
        pearson_r: r,
        pearson_p: pt.p_value,
        spearman_rho: rho,
        spearman_p: st.p_value,
    });
    Ok(result)
}

/// A pretraining set and the proxy scores of a model trained on it.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedRun {
    pub pretrain: BTreeSet<String>,
    pub scores: crate::matrix::ScoreMatrix,
}

/// Mean monolingual proxy score over `d` must not drop as pretraining sets
/// grow. Runs are ordered by size and must be nested.
pub fn monotonicity_probe(runs: &[NestedRun], d: &[String]) -> Result<HypothesisResult> {
    if runs.len() < 2 {
        return Err(Error::invalid("monotonicity probe needs at least 2 runs"));
    }
    if d.is_empty() {
        return Err(Error::invalid("monotonicity probe needs evaluation languages"));
    }
    let mut sorted: Vec<&NestedRun> = runs.iter().collect();
    sorted.sort_by_key(|r| r.pretrain.len());
    let aggregate = |r: &NestedRun| -> Result<f64> {
        let mut sum = 0.0;
        for l in d {
            sum += r
                .scores
                .mono(l)
                .ok_or_else(|| Error::Missing(vec![format!("mono[{l}]")]))?;
        }
        Ok(sum / d.len() as f64)
    };
    let mut details = Vec::new();
    for w in sorted.windows(2) {
        if !w[0].pretrain.is_subset(&w[1].pretrain) {
            return Err(Error::invalid(format!(
                "pretraining sets {:?} and {:?} are not nested",
                w[0].pretrain, w[1].pretrain
            )));
        }
        let label = format!(
            "{{{}}} >= {{{}}}",
            w[1].pretrain.iter().cloned().collect::<Vec<_>>().join(","),
            w[0].pretrain.iter().cloned().collect::<Vec<_>>().join(",")
        );
        details.push(Comparison::weak(label, aggregate(w[1])?, aggregate(w[0])?));
    }
    Ok(HypothesisResult::from_comparisons(
        HypothesisId::PretrainMonotonicity,
        None,
        details,
    ))
}

/// Runs every downstream check that the given configurations allow.
pub fn check_all(
    graph: &TransferGraph,
    results: &[DownstreamResults],
    configs: &[PretrainConfig],
) -> Result<Vec<HypothesisResult>> {
    let first = configs
        .first()
        .ok_or_else(|| Error::invalid("no configurations given"))?;
    let r_high = first.recipients_high.clone();
    let r_low = first.recipients_low.clone();
    if configs
        .iter()
        .any(|c| c.recipients_high != r_high || c.recipients_low != r_low)
    {
        return Err(Error::invalid("configurations disagree on their recipient sets"));
    }
    let c_set: Vec<String> = r_high.iter().chain(&r_low).cloned().collect();
    let by_mode = |m: SelectionMode| configs.iter().find(|c| c.mode == m).map(|c| c.id.as_str());
    let ids: Vec<&str> = configs.iter().map(|c| c.id.as_str()).collect();
    let refs: Vec<&PretrainConfig> = configs.iter().collect();
    let mut out = Vec::new();
    for res in results {
        out.push(check_recipient_sets(res, &ids, &r_high, &r_low)?);
        if let (Some(m), Some(r), Some(l)) = (
            by_mode(SelectionMode::MostDonating),
            by_mode(SelectionMode::Random),
            by_mode(SelectionMode::LeastDonating),
        ) {
            out.push(check_donor_sets(res, m, r, l, &c_set)?);
        }
        if configs.len() >= 2 {
            out.extend(check_donation_sum(graph, res, &refs, &c_set)?);
        }
        let observations: Vec<Observation> = configs
            .iter()
            .flat_map(|c| {
                [&r_high, &r_low].into_iter().map(|d| Observation {
                    config: c.id.clone(),
                    languages: d.clone(),
                })
            })
            .collect();
        if observations.len() >= 3 {
            match recipience_proportionality(graph, res, &observations) {
                Ok(r) => out.push(r),
                Err(Error::Degenerate(_)) | Err(Error::InvalidInput(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageMeta;
    use crate::graph::build_graph;
    use crate::matrix::{Provenance, ScoreMatrix};
    use approx::assert_abs_diff_eq;

    /// Graph whose donation scores are `donations` (n >= 2 languages).
    pub(crate) fn graph_with_donations(langs: &[(&str, &str, f64)]) -> TransferGraph {
        let n = langs.len() as f64;
        let mut m = ScoreMatrix::new(langs.iter().map(|l| l.0.to_string()).collect(), Provenance::Ingested);
        for (c, _, _) in langs {
            m.set_mono(c, 0.5);
        }
        for (s, _, d) in langs {
            for (t, _, _) in langs {
                if s != t {
                    m.set_bilingual(s, t, 0.5 * (1.0 + d / (n - 1.0)));
                }
            }
        }
        let metas = langs
            .iter()
            .map(|(c, f, _)| (c.to_string(), LanguageMeta::new(c, f, "Latin").unwrap()))
            .collect();
        build_graph(&m, &metas).unwrap()
    }

    fn codes(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn donor_ranking() {
        let g = graph_with_donations(&[("a", "F", 0.3), ("b", "F", 0.1), ("c", "F", -0.2)]);
        assert_eq!(rank_donors(&g), codes(&["a", "b", "c"]));
        let g = graph_with_donations(&[("b", "F", 0.25), ("a", "F", 0.25), ("c", "F", 0.5)]);
        assert_eq!(rank_donors(&g), codes(&["c", "a", "b"]));
    }

    #[test]
    fn vacuous_family_constraint_is_top_k() {
        let g = graph_with_donations(&[("a", "F", 0.3), ("b", "F", 0.1), ("c", "G", -0.2), ("d", "G", 0.2)]);
        let req = SelectionRequest {
            k: 2,
            min_families: 1,
            ..Default::default()
        };
        assert_eq!(select_pretrain_set(&g, &req).unwrap(), codes(&["a", "d"]));
        let req = SelectionRequest {
            k: 2,
            min_families: 1,
            mode: SelectionMode::LeastDonating,
            ..Default::default()
        };
        assert_eq!(select_pretrain_set(&g, &req).unwrap(), codes(&["b", "c"]));
    }

    #[test]
    fn infeasible_requests() {
        let g = graph_with_donations(&[("a", "F", 0.3), ("b", "F", 0.1), ("c", "G", -0.2)]);
        let req = |k, f| SelectionRequest {
            k,
            min_families: f,
            ..Default::default()
        };
        assert!(matches!(select_pretrain_set(&g, &req(4, 1)), Err(Error::Infeasible(_))));
        assert!(matches!(select_pretrain_set(&g, &req(2, 3)), Err(Error::Infeasible(_))));
        assert!(matches!(select_pretrain_set(&g, &req(0, 0)), Err(Error::Infeasible(_))));
        let mut forced = req(2, 2);
        forced.force_include = codes(&["a", "b"]);
        assert!(matches!(select_pretrain_set(&g, &forced), Err(Error::Infeasible(_))));
    }

    #[test]
    fn control_and_forced_members() {
        let g = graph_with_donations(&[("a", "F", 0.3), ("b", "G", 0.1), ("c", "H", -0.2), ("d", "H", -0.3)]);
        let control = SelectionRequest {
            mode: SelectionMode::Control,
            ..Default::default()
        };
        assert!(select_pretrain_set(&g, &control).unwrap().is_empty());
        let req = SelectionRequest {
            k: 2,
            min_families: 2,
            mode: SelectionMode::LeastDonating,
            force_include: codes(&["a"]),
            ..Default::default()
        };
        assert_eq!(select_pretrain_set(&g, &req).unwrap(), codes(&["a", "d"]));
    }

    #[test]
    fn random_mode_is_seeded_and_skips_excluded() {
        let langs: Vec<(String, String, f64)> = (0..8)
            .map(|i| (format!("l{i}"), format!("F{}", i % 3), i as f64 / 10.0))
            .collect();
        let refs: Vec<(&str, &str, f64)> = langs.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), *c)).collect();
        let g = graph_with_donations(&refs);
        let excluded: BTreeSet<String> = ["l0", "l1"].iter().map(|s| s.to_string()).collect();
        let req = |seed| SelectionRequest {
            k: 3,
            min_families: 3,
            mode: SelectionMode::Random,
            excluded: excluded.clone(),
            seed,
            ..Default::default()
        };
        let a = select_pretrain_set(&g, &req(5)).unwrap();
        assert_eq!(a, select_pretrain_set(&g, &req(5)).unwrap());
        let mut seen = BTreeSet::new();
        for seed in 0..40 {
            let s = select_pretrain_set(&g, &req(seed)).unwrap();
            assert!(s.iter().all(|c| !excluded.contains(c)));
            let fams: BTreeSet<_> = s.iter().map(|c| &g.nodes[c].meta.family).collect();
            assert_eq!(fams.len(), 3);
            seen.insert(s);
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn config_allocation_and_invariants() {
        let c = PretrainConfig::new(
            "most",
            SelectionMode::MostDonating,
            codes(&["ja", "te", "fi", "ru"]),
            codes(&["hi", "de", "hu"]),
            codes(&["ar", "el", "ta"]),
            DEFAULT_PRETRAIN_BUDGET,
        )
        .unwrap();
        assert_eq!(c.allocation.len(), 10);
        assert!(c.allocation.values().all(|v| *v == 10_000_000));
        assert!(PretrainConfig::new("x", SelectionMode::Control, codes(&["ja"]), codes(&["hi"]), vec![], 100).is_err());
        assert!(PretrainConfig::new("x", SelectionMode::Random, codes(&["hi"]), codes(&["hi"]), vec![], 100).is_err());
        let back = manifest_from_json(&manifest_to_json(std::slice::from_ref(&c))).unwrap();
        assert_eq!(back, vec![c.clone()]);
        let single = serde_json::to_string(&c).unwrap();
        assert_eq!(manifest_from_json(&single).unwrap(), vec![c]);
    }

    #[test]
    fn downstream_tsv_averages_seeds() {
        let text = "config_id\ttask\tsource\ttarget\tf1\tseed\n\
                    p\tNER\ta\tb\t0.4\t1\n\
                    p\tNER\ta\tb\t0.6\t2\n\
                    p\tPOS\ta\tb\t0.1\t1\n";
        let r = parse_downstream_tsv(text).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].task, "NER");
        assert_eq!(r[0].seeds, 2);
        assert_abs_diff_eq!(r[0].get("p", "a", "b").unwrap(), 0.5, epsilon = 1e-15);
        assert!(parse_downstream_tsv("p\tNER\ta\tb\t1.5\t1\n").is_err());
        assert!(parse_downstream_tsv("p\tNER\ta\tb\n").is_err());
    }

    #[test]
    fn zero_shot_and_monolingual_means() {
        let mut r = DownstreamResults::new("NER");
        r.insert("p", "a", "b", 0.4);
        r.insert("p", "b", "a", 0.2);
        r.insert("p", "a", "a", 0.6);
        r.insert("p", "b", "b", 0.4);
        assert_abs_diff_eq!(
            zero_shot_score(&r, "p", &codes(&["a", "b"])).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            monolingual_score(&r, "p", &codes(&["a", "b"])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(monolingual_score(&r, "p", &codes(&["a"])).unwrap(), 0.6);
        match zero_shot_score(&r, "p", &codes(&["a", "b", "c"])) {
            Err(Error::Missing(m)) => assert_eq!(m, vec!["p:a->c", "p:b->c", "p:c->a", "p:c->b"]),
            other => panic!("{other:?}"),
        }
        assert!(zero_shot_score(&r, "p", &codes(&["a"])).is_err());
        let mut all = DownstreamResults::new("NER");
        for s in ["a", "b", "c"] {
            for t in ["a", "b", "c"] {
                all.insert("p", s, t, 0.5);
            }
        }
        assert_eq!(zero_shot_score(&all, "p", &codes(&["a", "b", "c"])).unwrap(), 0.5);
    }

    #[test]
    fn ordering_checks() {
        let r = donor_set_ordering(None, 0.3, 0.2, 0.1);
        assert_eq!(r.satisfied, Verdict::Yes);
        assert_eq!(r.ties, 0);
        let mut res = DownstreamResults::new("NER");
        for (cfg, high, low) in [("p", 0.5, 0.3), ("q", 0.2, 0.4)] {
            for (s, t) in [("h1", "h2"), ("h2", "h1")] {
                res.insert(cfg, s, t, high);
            }
            for (s, t) in [("l1", "l2"), ("l2", "l1")] {
                res.insert(cfg, s, t, low);
            }
        }
        let r = check_recipient_sets(&res, &["p", "q"], &codes(&["h1", "h2"]), &codes(&["l1", "l2"])).unwrap();
        assert_eq!(r.satisfied, Verdict::Partial);
        assert_eq!(r.details[1].outcome, Outcome::Violated);
        let r = check_recipient_sets(&res, &["q"], &codes(&["h1", "h2"]), &codes(&["l1", "l2"])).unwrap();
        assert_eq!(r.satisfied, Verdict::No);
    }

    #[test]
    fn proportionality_extremes() {
        let x = [0.1, 0.5, -0.2, 0.9, 0.3];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = proportionality_from_values(None, &x, &y).unwrap();
        let c = r.correlation.unwrap();
        assert_abs_diff_eq!(c.pearson_r, 1.0, epsilon = 1e-12);
        assert_eq!(r.satisfied, Verdict::Yes);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v).collect();
        let r = proportionality_from_values(None, &x, &y).unwrap();
        assert_abs_diff_eq!(r.correlation.unwrap().pearson_r, -1.0, epsilon = 1e-12);
        assert_eq!(r.satisfied, Verdict::No);
        assert!(proportionality_from_values(None, &x[..2], &y[..2]).is_err());
    }

    #[test]
    fn monotonicity_probe_contract() {
        let mk = |set: &[&str], v: f64| {
            let mut m = ScoreMatrix::new(codes(&["a", "b"]), Provenance::Proxy);
            m.set_mono("a", v);
            m.set_mono("b", v);
            NestedRun {
                pretrain: set.iter().map(|s| s.to_string()).collect(),
                scores: m,
            }
        };
        let d = codes(&["a", "b"]);
        let r = monotonicity_probe(&[mk(&["a", "b"], 0.4), mk(&["a", "b", "c"], 0.4)], &d).unwrap();
        assert_eq!(r.satisfied, Verdict::Yes);
        assert_eq!(r.margins, vec![0.0]);
        let r = monotonicity_probe(&[mk(&["a", "b", "c"], 0.3), mk(&["a", "b"], 0.4)], &d).unwrap();
        assert_eq!(r.satisfied, Verdict::No);
        assert!(r.details[0].label.contains("{a,b,c} >= {a,b}"));
        assert!(monotonicity_probe(&[mk(&["a", "b"], 0.4), mk(&["a", "c", "d"], 0.4)], &d).is_err());
    }
}
