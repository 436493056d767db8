//! The directed transfer graph: one edge per ordered language pair,
//! weighted by the relative MRR gain of bilingual over monolingual
//! training, plus node- and graph-level analytics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageMeta;
use crate::error::{Error, Result};
use crate::matrix::{Provenance, Regime, ScoreMatrix};
use crate::stats::{chi_square, pearson_r, t_test_correlation, ContingencyTable, TestResult};

/// Borders between the four bins, in percent.
pub const BIN_BORDERS: [f64; 3] = [-10.0, 10.0, 55.0];

pub const DEFAULT_CREATED_AT: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransferBin {
    Negative,
    Neutral,
    Positive,
    VeryPositive,
}

impl TransferBin {
    pub const ALL: [TransferBin; 4] = [
        TransferBin::Negative,
        TransferBin::Neutral,
        TransferBin::Positive,
        TransferBin::VeryPositive,
    ];

    /// Each border belongs to the bin above it.
    pub fn from_percent(ft_percent: f64) -> TransferBin {
        let [low, mid, high] = BIN_BORDERS;
        if ft_percent < low {
            TransferBin::Negative
        } else if ft_percent < mid {
            TransferBin::Neutral
        } else if ft_percent < high {
            TransferBin::Positive
        } else {
            TransferBin::VeryPositive
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransferBin::Negative => "Negative",
            TransferBin::Neutral => "Neutral",
            TransferBin::Positive => "Positive",
            TransferBin::VeryPositive => "VeryPositive",
        }
    }
}

impl fmt::Display for TransferBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransferBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransferBin::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown transfer bin '{s}'")))
    }
}

/// Quadrant of (donation, recipience). Zero counts as positive on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BloodType {
    /// Donates, does not receive.
    O,
    /// Receives, does not donate.
    ABplus,
    Universal,
    Isolate,
}

impl BloodType {
    pub const ALL: [BloodType; 4] = [
        BloodType::O,
        BloodType::ABplus,
        BloodType::Universal,
        BloodType::Isolate,
    ];

    pub fn classify(donation: f64, recipience: f64) -> BloodType {
        match (donation >= 0.0, recipience >= 0.0) {
            (true, false) => BloodType::O,
            (false, true) => BloodType::ABplus,
            (true, true) => BloodType::Universal,
            (false, false) => BloodType::Isolate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BloodType::O => "O",
            BloodType::ABplus => "ABplus",
            BloodType::Universal => "Universal",
            BloodType::Isolate => "Isolate",
        }
    }
}

impl fmt::Display for BloodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BloodType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "AB+" {
            return Ok(BloodType::ABplus);
        }
        BloodType::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown blood type '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEdge {
    pub source: String,
    pub target: String,
    pub ft: f64,
    pub ft_percent: f64,
    pub bin: TransferBin,
}

impl TransferEdge {
    fn new(source: &str, target: &str, ft: f64) -> Self {
        let ft_percent = ft * 100.0;
        TransferEdge {
            source: source.to_owned(),
            target: target.to_owned(),
            ft,
            ft_percent,
            bin: TransferBin::from_percent(ft_percent),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageNode {
    pub meta: LanguageMeta,
    pub mono_mrr: f64,
    pub donation: f64,
    pub recipience: f64,
    pub blood_type: BloodType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub bin_borders: Vec<f64>,
    pub blood_type_tie_rule: String,
    pub correlation_aggregation: String,
    pub invented_labels: Vec<String>,
    /// Grid that every ft value was rounded to.
    pub ft_quantum: f64,
}

impl Conventions {
    fn with_quantum(ft_quantum: f64) -> Self {
        Conventions {
            bin_borders: BIN_BORDERS.to_vec(),
            blood_type_tie_rule: "donation >= 0 counts as donating; recipience >= 0 counts as receiving".into(),
            correlation_aggregation: "sum for donation and recipience; mean ft per node for mono correlations".into(),
            invented_labels: vec!["Universal".into(), "Isolate".into()],
            ft_quantum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub regime: Option<Regime>,
    pub created_at: String,
    pub conventions: Conventions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferGraph {
    pub nodes: BTreeMap<String, LanguageNode>,
    pub edges: BTreeMap<(String, String), TransferEdge>,
    pub meta: GraphMeta,
}

impl TransferGraph {
    pub fn edge(&self, source: &str, target: &str) -> Option<&TransferEdge> {
        self.edges.get(&(source.to_owned(), target.to_owned()))
    }

    pub fn node(&self, code: &str) -> Option<&LanguageNode> {
        self.nodes.get(code)
    }

    pub fn ft(&self, source: &str, target: &str) -> Result<f64> {
        self.edge(source, target)
            .map(|e| e.ft)
            .ok_or_else(|| Error::Missing(vec![format!("edge {source}->{target}")]))
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn total_ft(&self) -> f64 {
        self.edges.values().map(|e| e.ft).sum()
    }

    pub fn total_donation(&self) -> f64 {
        self.nodes.values().map(|n| n.donation).sum()
    }

    pub fn total_recipience(&self) -> f64 {
        self.nodes.values().map(|n| n.recipience).sum()
    }

    pub fn shares_script(&self, a: &str, b: &str) -> bool {
        matches!((self.node(a), self.node(b)), (Some(x), Some(y)) if x.meta.script == y.meta.script)
    }

    pub fn shares_family(&self, a: &str, b: &str) -> bool {
        matches!((self.node(a), self.node(b)), (Some(x), Some(y)) if x.meta.family == y.meta.family)
    }
}

/// Relative MRR change of `t` when trained together with `s`.
pub fn finetune_score(matrix: &ScoreMatrix, s: &str, t: &str) -> Result<f64> {
    if s == t {
        return Err(Error::invalid(format!("source and target are both '{s}'")));
    }
    let mono = matrix
        .mono(t)
        .ok_or_else(|| Error::Missing(vec![format!("mono[{t}]")]))?;
    let bilingual = matrix
        .bilingual(s, t)
        .ok_or_else(|| Error::Missing(vec![format!("bilingual[{s}->{t}]")]))?;
    if mono == 0.0 {
        return Err(Error::Degenerate(format!("mono[{t}] is zero")));
    }
    Ok((bilingual - mono) / mono)
}

/// Finest power-of-two grid on which a set of values with absolute sum
/// `total` can be added in any order without rounding.
pub fn exact_sum_quantum(total: f64) -> f64 {
    if total == 0.0 || !total.is_finite() {
        return 0.0;
    }
    let mut e = total.log2().ceil() as i32;
    // log2 may be off by one near powers of two
    while 2f64.powi(e) < total {
        e += 1;
    }
    while e > -960 && 2f64.powi(e - 1) >= total {
        e -= 1;
    }
    2f64.powi(e.max(-960) - 53)
}

fn snap(x: f64, quantum: f64) -> f64 {
    if quantum == 0.0 {
        x
    } else {
        (x / quantum).round() * quantum
    }
}

/// Builds the complete graph over the matrix's languages. Every ft value is
/// rounded to a dyadic grid fine enough to keep it within one part in 2^53
/// of the total, which makes all donation and recipience sums exact.
pub fn build_graph(matrix: &ScoreMatrix, metas: &BTreeMap<String, LanguageMeta>) -> Result<TransferGraph> {
    let missing = matrix.missing_entries();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    matrix.check_codes(metas)?;
    for (what, v) in matrix.mono.iter().map(|(c, v)| (format!("mono[{c}]"), *v)).chain(
        matrix
            .bilingual
            .iter()
            .map(|((s, t), v)| (format!("bilingual[{s}->{t}]"), *v)),
    ) {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::OutOfRange(format!("{what} = {v} must be positive")));
        }
    }
    let codes = &matrix.languages;
    let mut raw = BTreeMap::new();
    for s in codes {
        for t in codes {
            if s != t {
                raw.insert((s.clone(), t.clone()), finetune_score(matrix, s, t)?);
            }
        }
    }
    let total: f64 = raw.values().map(|v: &f64| v.abs()).sum();
    let quantum = exact_sum_quantum(total);
    let edges: BTreeMap<(String, String), TransferEdge> = raw
        .into_iter()
        .map(|((s, t), ft)| {
            let e = TransferEdge::new(&s, &t, snap(ft, quantum));
            ((s, t), e)
        })
        .collect();
    let mut nodes = BTreeMap::new();
    for code in codes {
        let donation: f64 = edges.values().filter(|e| &e.source == code).map(|e| e.ft).sum();
        let recipience: f64 = edges.values().filter(|e| &e.target == code).map(|e| e.ft).sum();
        nodes.insert(
            code.clone(),
            LanguageNode {
                meta: metas[code].clone(),
                mono_mrr: matrix.mono[code],
                donation,
                recipience,
                blood_type: BloodType::classify(donation, recipience),
            },
        );
    }
    Ok(TransferGraph {
        nodes,
        edges,
        meta: GraphMeta {
            provenance: matrix.provenance,
            seeds: matrix.seeds.clone(),
            regime: matrix.regime,
            created_at: DEFAULT_CREATED_AT.to_owned(),
            conventions: Conventions::with_quantum(quantum),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    pub delta: f64,
    pub sign_flip: bool,
}

/// `ft(l1 -> l2) - ft(l2 -> l1)`; a sign flip needs strictly opposite signs.
pub fn detect_asymmetry(graph: &TransferGraph, l1: &str, l2: &str) -> Result<Asymmetry> {
    let a = graph.ft(l1, l2)?;
    let b = graph.ft(l2, l1)?;
    Ok(Asymmetry {
        delta: a - b,
        sign_flip: (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub n: usize,
    pub test: TestResult,
}

fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    let r = pearson_r(x, y)?;
    Ok(Correlation {
        r,
        n: x.len(),
        test: t_test_correlation(r, x.len())?,
    })
}

/// Pearson r between `ft(a -> b)` and `ft(b -> a)` over unordered pairs,
/// with `a < b` by code.
pub fn reciprocity_correlation(graph: &TransferGraph) -> Result<Correlation> {
    let (x, y) = reciprocity_pairs(graph);
    if x.len() < 3 {
        return Err(Error::invalid(format!(
            "reciprocity needs at least 3 language pairs, got {}",
            x.len()
        )));
    }
    correlate(&x, &y)
}

/// `(ft(a -> b), ft(b -> a))` for every unordered pair, `a < b`.
pub fn reciprocity_pairs(graph: &TransferGraph) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for ((s, t), e) in &graph.edges {
        if s < t {
            if let Some(back) = graph.edge(t, s) {
                x.push(e.ft);
                y.push(back.ft);
            }
        }
    }
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonoCorrelations {
    /// Mono MRR of a language against its mean outgoing ft.
    pub as_source: Correlation,
    /// Mono MRR of a language against its mean incoming ft.
    pub as_target: Correlation,
}

/// Per node: (mono MRR, mean outgoing ft, mean incoming ft).
pub fn node_means(graph: &TransferGraph) -> Vec<(f64, f64, f64)> {
    graph
        .nodes
        .iter()
        .map(|(code, node)| {
            let mean = |it: Vec<f64>| {
                if it.is_empty() {
                    0.0
                } else {
                    it.iter().sum::<f64>() / it.len() as f64
                }
            };
            let out = graph
                .edges
                .values()
                .filter(|e| &e.source == code)
                .map(|e| e.ft)
                .collect();
            let inc = graph
                .edges
                .values()
                .filter(|e| &e.target == code)
                .map(|e| e.ft)
                .collect();
            (node.mono_mrr, mean(out), mean(inc))
        })
        .collect()
}

pub fn mono_correlations(graph: &TransferGraph) -> Result<MonoCorrelations> {
    if graph.nodes.len() < 3 {
        return Err(Error::invalid(format!(
            "mono correlations need at least 3 languages, got {}",
            graph.nodes.len()
        )));
    }
    let means = node_means(graph);
    let mono: Vec<f64> = means.iter().map(|m| m.0).collect();
    let out: Vec<f64> = means.iter().map(|m| m.1).collect();
    let inc: Vec<f64> = means.iter().map(|m| m.2).collect();
    Ok(MonoCorrelations {
        as_source: correlate(&mono, &out)?,
        as_target: correlate(&mono, &inc)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTest {
    /// Rows `shared`, `not_shared`; one column per bin.
    pub table: ContingencyTable,
    pub test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFamilyAnalysis {
    pub script: FactorTest,
    pub family: FactorTest,
}

fn factor_test(graph: &TransferGraph, shared: impl Fn(&str, &str) -> bool) -> Result<FactorTest> {
    let mut counts = vec![vec![0u64; 4]; 2];
    for e in graph.edges.values() {
        let row = if shared(&e.source, &e.target) { 0 } else { 1 };
        counts[row][e.bin as usize] += 1;
    }
    let table = ContingencyTable::new(
        vec!["shared".into(), "not_shared".into()],
        TransferBin::ALL.iter().map(|b| b.name().to_owned()).collect(),
        counts,
    )?;
    let (cols, kept) = table.without_empty_columns();
    let degenerate = TestResult {
        statistic: 0.0,
        df: 0,
        p_value: 1.0,
        degenerate: true,
    };
    let test = if cols.len() < 2 || kept.iter().any(|r| r.iter().all(|c| *c == 0)) {
        degenerate
    } else {
        chi_square(&ContingencyTable::new(table.rows.clone(), cols, kept)?)?
    };
    Ok(FactorTest { table, test })
}

/// Chi-square tests of bin counts against shared script and shared family.
/// Columns that are empty in both rows are dropped before testing; a table
/// left with fewer than two columns or an empty row reports statistic 0.
pub fn script_family_analysis(graph: &TransferGraph) -> Result<ScriptFamilyAnalysis> {
    if graph.edges.is_empty() {
        return Err(Error::invalid("graph has no edges"));
    }
    Ok(ScriptFamilyAnalysis {
        script: factor_test(graph, |a, b| graph.shares_script(a, b))?,
        family: factor_test(graph, |a, b| graph.shares_family(a, b))?,
    })
}

pub fn bin_histogram(graph: &TransferGraph) -> BTreeMap<TransferBin, usize> {
    let mut counts: BTreeMap<TransferBin, usize> = TransferBin::ALL.iter().map(|b| (*b, 0)).collect();
    for e in graph.edges.values() {
        *counts.entry(e.bin).or_insert(0) += 1;
    }
    counts
}

/// Either a value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome<T> {
    Value(T),
    Unavailable { error: String },
}

impl<T> From<Result<T>> for Outcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Value(v),
            Err(e) => Outcome::Unavailable { error: e.to_string() },
        }
    }
}

impl<T> Outcome<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Outcome::Value(v) => Some(v),
            Outcome::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphAnalytics {
    pub reciprocity: Outcome<Correlation>,
    pub mono_correlations: Outcome<MonoCorrelations>,
    pub bin_histogram: BTreeMap<TransferBin, usize>,
    pub script_family: Outcome<ScriptFamilyAnalysis>,
}

pub fn analyze(graph: &TransferGraph) -> GraphAnalytics {
    GraphAnalytics {
        reciprocity: reciprocity_correlation(graph).into(),
        mono_correlations: mono_correlations(graph).into(),
        bin_histogram: bin_histogram(graph),
        script_family: script_family_analysis(graph).into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRecord {
    pub code: String,
    pub family: String,
    pub script: String,
    pub mono_mrr: f64,
    pub donation: f64,
    pub recipience: f64,
    pub blood_type: BloodType,
    pub wals: BTreeMap<String, String>,
}

impl From<&LanguageNode> for LanguageRecord {
    fn from(n: &LanguageNode) -> Self {
        LanguageRecord {
            code: n.meta.code.clone(),
            family: n.meta.family.clone(),
            script: n.meta.script.clone(),
            mono_mrr: n.mono_mrr,
            donation: n.donation,
            recipience: n.recipience,
            blood_type: n.blood_type,
            wals: n.meta.wals.clone(),
        }
    }
}

/// Serialized form of a [`TransferGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub languages: Vec<LanguageRecord>,
    pub edges: Vec<TransferEdge>,
    pub meta: GraphMeta,
}

impl From<&TransferGraph> for GraphDocument {
    fn from(g: &TransferGraph) -> Self {
        GraphDocument {
            languages: g.nodes.values().map(LanguageRecord::from).collect(),
            edges: g.edges.values().cloned().collect(),
            meta: g.meta.clone(),
        }
    }
}

impl TryFrom<GraphDocument> for TransferGraph {
    type Error = Error;

    fn try_from(doc: GraphDocument) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for l in doc.languages {
            let mut meta = LanguageMeta::new(&l.code, &l.family, &l.script)?;
            meta.wals = l.wals;
            if BloodType::classify(l.donation, l.recipience) != l.blood_type {
                return Err(Error::invalid(format!(
                    "blood type of '{}' disagrees with its scores",
                    l.code
                )));
            }
            let node = LanguageNode {
                meta,
                mono_mrr: l.mono_mrr,
                donation: l.donation,
                recipience: l.recipience,
                blood_type: l.blood_type,
            };
            if nodes.insert(l.code.clone(), node).is_some() {
                return Err(Error::invalid(format!("duplicate language '{}'", l.code)));
            }
        }
        let mut edges = BTreeMap::new();
        for e in doc.edges {
            for c in [&e.source, &e.target] {
                if !nodes.contains_key(c) {
                    return Err(Error::invalid(format!("edge refers to unknown language '{c}'")));
                }
            }
            if e.source == e.target {
                return Err(Error::invalid(format!("self edge on '{}'", e.source)));
            }
            if e.ft_percent != e.ft * 100.0 || e.bin != TransferBin::from_percent(e.ft_percent) {
                return Err(Error::invalid(format!(
                    "edge {}->{} is inconsistent",
                    e.source, e.target
                )));
            }
            let key = (e.source.clone(), e.target.clone());
            if edges.insert(key, e).is_some() {
                return Err(Error::invalid("duplicate edge"));
            }
        }
        let n = nodes.len();
        if edges.len() != n * n.saturating_sub(1) {
            return Err(Error::invalid(format!(
                "graph over {n} languages must have {} edges, found {}",
                n * n.saturating_sub(1),
                edges.len()
            )));
        }
        Ok(TransferGraph {
            nodes,
            edges,
            meta: doc.meta,
        })
    }
}

pub fn graph_to_json(graph: &TransferGraph) -> String {
    let mut s = serde_json::to_string_pretty(&GraphDocument::from(graph)).expect("graph serializes");
    s.push('\n');
    s
}

pub fn graph_from_json(text: &str) -> Result<TransferGraph> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| Error::parse("graph document", e.to_string()))?;
    TransferGraph::try_from(doc)
}

pub fn export_graph(graph: &TransferGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, graph_to_json(graph)).map_err(|e| Error::io(path, e))
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<TransferGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    graph_from_json(&text)
}

/// JSON schema of the graph document.
pub const GRAPH_SCHEMA: &str = include_str!("../schema/graph.schema.json");

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn metas(codes: &[&str]) -> BTreeMap<String, LanguageMeta> {
        codes
            .iter()
            .map(|c| (c.to_string(), LanguageMeta::new(c, "F", "Latin").unwrap()))
            .collect()
    }

    /// Matrix whose ft values are exactly `fts` (mono 0.5 everywhere).
    fn matrix_with_ft(codes: &[&str], fts: &[((&str, &str), f64)]) -> ScoreMatrix {
        let mut m = ScoreMatrix::new(codes.iter().map(|c| c.to_string()).collect(), Provenance::Ingested);
        for c in codes {
            m.set_mono(c, 0.5);
        }
        for ((s, t), ft) in fts {
            m.set_bilingual(s, t, 0.5 * (1.0 + ft));
        }
        m
    }

    #[test]
    fn finetune_score_arithmetic() {
        let mut m = ScoreMatrix::new(vec!["s".into(), "t".into()], Provenance::Ingested);
        m.set_mono("t", 0.25);
        m.set_bilingual("s", "t", 0.30);
        assert_abs_diff_eq!(finetune_score(&m, "s", "t").unwrap(), 0.2, epsilon = 1e-15);
        m.set_bilingual("s", "t", 0.25);
        assert_eq!(finetune_score(&m, "s", "t").unwrap(), 0.0);
        assert!(finetune_score(&m, "t", "s").is_err());
        assert!(finetune_score(&m, "t", "t").is_err());
    }

    #[test]
    fn equal_scores_give_a_flat_graph() {
        let codes = ["a", "b", "c"];
        let pairs: Vec<_> = codes
            .iter()
            .flat_map(|s| codes.iter().filter(move |t| *t != s).map(move |t| ((*s, *t), 0.0)))
            .collect();
        let g = build_graph(&matrix_with_ft(&codes, &pairs), &metas(&codes)).unwrap();
        assert_eq!(g.edges.len(), 6);
        for n in g.nodes.values() {
            assert_eq!((n.donation, n.recipience), (0.0, 0.0));
            assert_eq!(n.blood_type, BloodType::Universal);
        }
    }

    #[test]
    fn sums_and_sign_rules() {
        let codes = ["a", "b", "c"];
        let fts = [
            (("a", "b"), 0.2),
            (("a", "c"), 0.1),
            (("b", "a"), -0.1),
            (("b", "c"), 0.0),
            (("c", "a"), -0.2),
            (("c", "b"), 0.3),
        ];
        let g = build_graph(&matrix_with_ft(&codes, &fts), &metas(&codes)).unwrap();
        let a = g.node("a").unwrap();
        assert_abs_diff_eq!(a.donation, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(a.recipience, -0.3, epsilon = 1e-12);
        assert_eq!(a.blood_type, BloodType::O);
        assert_eq!(g.total_donation(), g.total_recipience());
        assert_eq!(g.total_donation(), g.total_ft());
    }

    #[test]
    fn incomplete_matrix_is_rejected() {
        let codes = ["a", "b"];
        let m = matrix_with_ft(&codes, &[(("a", "b"), 0.1)]);
        match build_graph(&m, &metas(&codes)) {
            Err(Error::Missing(list)) => assert_eq!(list, vec!["bilingual[b->a]"]),
            other => panic!("{other:?}"),
        }
        let full = matrix_with_ft(&codes, &[(("a", "b"), 0.1), (("b", "a"), 0.1)]);
        assert!(build_graph(&full, &metas(&["a"])).is_err());
    }

    #[test]
    fn blood_type_quadrants() {
        assert_eq!(BloodType::classify(1.0, -1.0), BloodType::O);
        assert_eq!(BloodType::classify(-1.0, 1.0), BloodType::ABplus);
        assert_eq!(BloodType::classify(1.0, 1.0), BloodType::Universal);
        assert_eq!(BloodType::classify(-1.0, -1.0), BloodType::Isolate);
        assert_eq!(BloodType::classify(0.0, -1.0), BloodType::O);
        assert_eq!(BloodType::classify(-1.0, 0.0), BloodType::ABplus);
        assert_eq!("AB+".parse::<BloodType>().unwrap(), BloodType::ABplus);
    }

    #[test]
    fn bin_borders_belong_to_the_upper_bin() {
        use TransferBin::*;
        let cases = [
            (-24.0, Negative),
            (-10.001, Negative),
            (-10.0, Neutral),
            (0.0, Neutral),
            (9.999, Neutral),
            (10.0, Positive),
            (51.0, Positive),
            (54.999, Positive),
            (55.0, VeryPositive),
            (60.0, VeryPositive),
        ];
        for (p, bin) in cases {
            assert_eq!(TransferBin::from_percent(p), bin, "{p}");
        }
        assert_eq!("verypositive".parse::<TransferBin>().unwrap(), VeryPositive);
    }

    #[test]
    fn asymmetry() {
        let codes = ["a", "b"];
        let g = build_graph(
            &matrix_with_ft(&codes, &[(("a", "b"), 0.2), (("b", "a"), 0.2)]),
            &metas(&codes),
        )
        .unwrap();
        let r = detect_asymmetry(&g, "a", "b").unwrap();
        assert_eq!((r.delta, r.sign_flip), (0.0, false));
        let g = build_graph(
            &matrix_with_ft(&codes, &[(("a", "b"), 0.0), (("b", "a"), -0.1)]),
            &metas(&codes),
        )
        .unwrap();
        assert!(!detect_asymmetry(&g, "a", "b").unwrap().sign_flip);
        assert!(detect_asymmetry(&g, "a", "z").is_err());
    }

    fn graph_from_fn(codes: &[&str], f: impl Fn(usize, usize) -> f64) -> TransferGraph {
        let mut fts = Vec::new();
        for (i, s) in codes.iter().enumerate() {
            for (j, t) in codes.iter().enumerate() {
                if i != j {
                    fts.push(((*s, *t), f(i, j)));
                }
            }
        }
        build_graph(&matrix_with_ft(codes, &fts), &metas(codes)).unwrap()
    }

    #[test]
    fn reciprocity_extremes() {
        let codes = ["a", "b", "c", "d"];
        let sym = graph_from_fn(&codes, |i, j| ((i + 1) * (j + 1)) as f64 / 20.0);
        assert_abs_diff_eq!(reciprocity_correlation(&sym).unwrap().r, 1.0, epsilon = 1e-12);
        let anti = graph_from_fn(&codes, |i, j| {
            let v = ((i + 1) * (j + 1)) as f64 / 20.0;
            if i < j {
                v
            } else {
                -v
            }
        });
        assert_abs_diff_eq!(reciprocity_correlation(&anti).unwrap().r, -1.0, epsilon = 1e-12);
        let small = graph_from_fn(&["a", "b"], |_, _| 0.1);
        assert!(reciprocity_correlation(&small).is_err());
    }

    #[test]
    fn mono_correlation_contract() {
        let codes = ["a", "b", "c"];
        let flat = graph_from_fn(&codes, |_, _| 0.0);
        assert!(mono_correlations(&flat).is_err());
        // mean incoming ft = 1 - mono
        let monos = [0.2, 0.5, 0.7];
        let mut m = ScoreMatrix::new(codes.iter().map(|c| c.to_string()).collect(), Provenance::Ingested);
        for (i, c) in codes.iter().enumerate() {
            m.set_mono(c, monos[i]);
        }
        for (i, s) in codes.iter().enumerate() {
            for (j, t) in codes.iter().enumerate() {
                if i != j {
                    let ft = 1.0 - monos[j];
                    m.set_bilingual(s, t, monos[j] * (1.0 + ft));
                }
            }
        }
        let g = build_graph(&m, &metas(&codes)).unwrap();
        assert_abs_diff_eq!(mono_correlations(&g).unwrap().as_target.r, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn script_and_family_tables() {
        let codes = ["a", "b", "c"];
        let flat = graph_from_fn(&codes, |_, _| 0.0);
        let r = script_family_analysis(&flat).unwrap();
        assert_eq!(r.script.test.statistic, 0.0);
        assert_eq!(r.family.test.statistic, 0.0);
        assert_eq!(r.script.table.grand_total(), 6);

        // shared-script edges very positive, the rest negative
        let mut ms = metas(&["a", "b", "c", "d"]);
        ms.get_mut("c").unwrap().script = "Greek".into();
        ms.get_mut("d").unwrap().script = "Greek".into();
        let codes = ["a", "b", "c", "d"];
        let g = {
            let mut fts = Vec::new();
            for s in codes {
                for t in codes {
                    if s != t {
                        let same = ms[s].script == ms[t].script;
                        fts.push(((s, t), if same { 0.6 } else { -0.3 }));
                    }
                }
            }
            build_graph(&matrix_with_ft(&codes, &fts), &ms).unwrap()
        };
        let r = script_family_analysis(&g).unwrap();
        // effective 2x2 table [[0, 4], [8, 0]]: chi-square equals N
        assert_abs_diff_eq!(r.script.test.statistic, 12.0, epsilon = 1e-12);
        assert_eq!(r.script.test.df, 1);
        // one family everywhere: empty not_shared row
        assert!(r.family.test.degenerate);
        assert_eq!(r.family.test.p_value, 1.0);
    }

    #[test]
    fn histogram_counts() {
        let codes = ["a", "b"];
        let g = build_graph(
            &matrix_with_ft(&codes, &[(("a", "b"), 0.51), (("b", "a"), -0.24)]),
            &metas(&codes),
        )
        .unwrap();
        let h = bin_histogram(&g);
        assert_eq!(h[&TransferBin::Positive], 1);
        assert_eq!(h[&TransferBin::Negative], 1);
        assert_eq!(h.values().sum::<usize>(), 2);
        let g = graph_from_fn(&["a", "b", "c"], |_, _| -0.1);
        assert_eq!(bin_histogram(&g)[&TransferBin::Neutral], 6);
    }

    #[test]
    fn quantum_bounds_the_total() {
        for total in [0.75, 1.0, 1.5, 3.0, 1e-3, 123.456] {
            let q = exact_sum_quantum(total);
            assert!(total <= q * 2f64.powi(53));
            assert!(total > q * 2f64.powi(52));
        }
        assert_eq!(exact_sum_quantum(0.0), 0.0);
    }

    #[test]
    fn json_round_trip_and_wals() {
        let codes = ["a", "b", "c"];
        let mut ms = metas(&codes);
        ms.get_mut("a").unwrap().wals.insert("81A".into(), "SOV".into());
        let g = build_graph(
            &matrix_with_ft(
                &codes,
                &[
                    (("a", "b"), 0.2),
                    (("a", "c"), -0.13),
                    (("b", "a"), 0.07),
                    (("b", "c"), 0.0),
                    (("c", "a"), 1.0 / 3.0),
                    (("c", "b"), -0.01),
                ],
            ),
            &ms,
        )
        .unwrap();
        let text = graph_to_json(&g);
        assert!(text.contains("\"81A\": \"SOV\""));
        assert_eq!(graph_from_json(&text).unwrap(), g);
        let broken = text.replacen("\"bin\": \"Positive\"", "\"bin\": \"Negative\"", 1);
        assert!(graph_from_json(&broken).is_err());
    }
}
