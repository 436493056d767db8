//! `xling`: corpus sampling, proxy scoring, transfer graphs, and
//! pretraining-set selection from the command line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use xling_core::corpus::{
    balance_tsv, length_distributions, load_language_table, load_raw_corpus, load_wals, read_partition,
    read_partitions, sample_partition, validate_balance, write_partition, DistributionSet, LanguageMeta,
    DEFAULT_BALANCE_THRESHOLD,
};
use xling_core::graph::{analyze, build_graph, export_graph, graph_to_json, load_graph, DEFAULT_CREATED_AT};
use xling_core::matrix::{ingest_score_matrix, Orientation, Regime};
use xling_core::mlm::{score_all_pairs, ScoringOptions};
use xling_core::selection::{
    check_all, compose_config, load_downstream, load_manifest, manifest_to_json, SelectionMode, SelectionRequest,
    DEFAULT_K, DEFAULT_MIN_FAMILIES, DEFAULT_PRETRAIN_BUDGET,
};
use xling_core::subword::{train_vocabulary, SubwordVocabulary, DEFAULT_VOCAB_SIZE};
use xling_core::synthetic::{fixture_corpora, fixture_language_table, fixture_wals_csv};
use xling_service::ServiceConfig;

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "xling",
    version,
    about = "Balanced corpora, transfer graphs and pretraining-set selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic fixture: raw corpora, langs.tsv, wals.csv.
    Synth(SynthArgs),
    /// Draw a fixed-budget partition per language.
    Sample(SampleArgs),
    /// Compare sample and full-corpus length distributions.
    ValidateBalance(BalanceArgs),
    /// Train the shared subword vocabulary.
    TrainVocab(TrainVocabArgs),
    /// Proxy MLM scores for every language and ordered pair.
    Score(ScoreArgs),
    /// Validate an external score matrix and rewrite it in canonical form.
    IngestMatrix(IngestArgs),
    /// Build the transfer graph document from a score matrix.
    BuildGraph(BuildGraphArgs),
    /// Reciprocity, mono correlations, bins and script/family tests.
    Analyze(AnalyzeArgs),
    /// Choose pretraining donors.
    Select(SelectArgs),
    /// Check the downstream hypotheses against results.
    CheckHypotheses(HypothesesArgs),
    /// Serve a workspace over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Sentences per language.
    #[arg(long, default_value_t = 3000)]
    sentences: usize,
    #[arg(long, default_value_t = 5)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    /// Directory with `<code>.txt` files or `<code>/` directories.
    #[arg(long)]
    raw: PathBuf,
    /// Language table; defaults to `<raw>/langs.tsv`.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Characters per language.
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    sample: PathBuf,
    /// Raw corpora (as for `sample`) or a partition directory.
    #[arg(long)]
    full: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BALANCE_THRESHOLD)]
    threshold: f64,
    /// Vocabulary for token lengths; trained on the sample when omitted.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainVocabArgs {
    #[arg(long)]
    partitions: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    partitions: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "joint")]
    regime: Regime,
    /// n-gram order of the proxy model.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    orientation: Orientation,
    /// Canonical TSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, default_value = "row-source")]
    orientation: Orientation,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    wals: Option<PathBuf>,
    /// Timestamp recorded in the document. Falls back to SOURCE_DATE_EPOCH,
    /// then to the Unix epoch, so rebuilds are byte-identical.
    #[arg(long)]
    created_at: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value = "most_donating")]
    mode: SelectionMode,
    #[arg(long, default_value_t = DEFAULT_MIN_FAMILIES)]
    min_families: usize,
    /// Held-out languages; they become the recipients.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    force_include: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PRETRAIN_BUDGET)]
    budget: u64,
    /// Manifest path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HypothesesArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    configs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, required_unless_present = "config")]
    workspace: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    cors_origin: Option<String>,
    /// key=value file with workspace_dir, bind and cors_origin.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<xling_core::Error>() {
            return match core {
                xling_core::Error::Io { .. } | xling_core::Error::Utf8 { .. } => EXIT_IO,
                xling_core::Error::Infeasible(_) => EXIT_INFEASIBLE,
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(svc) = cause.downcast_ref::<xling_service::ServiceError>() {
            return match svc {
                xling_service::ServiceError::Core(xling_core::Error::Io { .. } | xling_core::Error::Utf8 { .. }) => {
                    EXIT_IO
                }
                xling_service::ServiceError::Bind { .. } | xling_service::ServiceError::Serve(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// `<dir>/<code>.txt` if present, otherwise `<dir>/<code>/`.
fn raw_path(dir: &Path, code: &str) -> PathBuf {
    let file = dir.join(format!("{code}.txt"));
    if file.is_file() {
        file
    } else {
        dir.join(code)
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(a)?,
        Command::Sample(a) => sample(a)?,
        Command::ValidateBalance(a) => return balance(a),
        Command::TrainVocab(a) => {
            let parts = read_partitions(&a.partitions)?;
            if parts.is_empty() {
                bail!(xling_core::Error::InvalidInput(format!(
                    "no partitions in {}",
                    a.partitions.display()
                )));
            }
            train_vocabulary(&parts, a.size)?.save(&a.out)?;
        }
        Command::Score(a) => {
            let parts = read_partitions(&a.partitions)?;
            let vocab = SubwordVocabulary::load(&a.vocab)?;
            let mut opts = ScoringOptions {
                regime: a.regime,
                ..Default::default()
            };
            if let Some(order) = a.order {
                opts.config.order = order;
            }
            if let Some(alpha) = a.alpha {
                opts.config.smoothing_alpha = alpha;
            }
            score_all_pairs(&parts, &vocab, &opts, &a.seeds)?.save(&a.out)?;
        }
        Command::IngestMatrix(a) => {
            let m = ingest_score_matrix(&a.input, a.orientation)?;
            m.validate()?;
            write_out(a.out.as_deref(), &m.to_tsv())?;
        }
        Command::BuildGraph(a) => build(a)?,
        Command::Analyze(a) => {
            let g = load_graph(&a.graph)?;
            write_out(a.out.as_deref(), &json(&analyze(&g)))?;
        }
        Command::Select(a) => {
            let g = load_graph(&a.graph)?;
            let req = SelectionRequest {
                k: a.k,
                mode: a.mode,
                min_families: a.min_families,
                excluded: a.exclude.into_iter().collect::<BTreeSet<_>>(),
                force_include: a.force_include,
                seed: a.seed,
            };
            let id = a.id.unwrap_or_else(|| a.mode.to_string());
            let config = compose_config(&g, &id, &req, a.budget)?;
            write_out(a.out.as_deref(), &manifest_to_json(&[config]))?;
        }
        Command::CheckHypotheses(a) => {
            let g = load_graph(&a.graph)?;
            let results = load_downstream(&a.results)?;
            let mut configs = Vec::new();
            for path in &a.configs {
                configs.extend(load_manifest(path)?);
            }
            write_out(a.out.as_deref(), &json(&check_all(&g, &results, &configs)?))?;
        }
        Command::Serve(a) => serve(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for raw in fixture_corpora(a.sentences, a.seed)? {
        write_file(
            &a.out.join(format!("{}.txt", raw.meta.code)),
            &(raw.documents.join("\n\n") + "\n"),
        )?;
    }
    write_file(&a.out.join("langs.tsv"), &fixture_language_table())?;
    write_file(&a.out.join("wals.csv"), &fixture_wals_csv())
}

fn sample(a: SampleArgs) -> Result<()> {
    let meta_path = a.meta.unwrap_or_else(|| a.raw.join("langs.tsv"));
    let metas = load_language_table(&meta_path)?;
    for meta in metas.into_values() {
        let path = raw_path(&a.raw, &meta.code);
        let raw = load_raw_corpus(&path, meta)?;
        let part = sample_partition(&raw, a.budget, a.seed)?;
        if part.underfull {
            eprintln!(
                "warning: {} has only {} characters for a budget of {}",
                part.meta.code, part.char_count, a.budget
            );
        }
        write_partition(&a.out, &part)?;
    }
    Ok(())
}

fn full_distributions(dir: &Path, meta: &LanguageMeta, vocab: &SubwordVocabulary) -> Result<DistributionSet> {
    if dir.join(format!("{}.partition.meta", meta.code)).is_file() {
        return Ok(length_distributions(&read_partition(dir, &meta.code)?, vocab)?);
    }
    let raw = load_raw_corpus(raw_path(dir, &meta.code), meta.clone())?;
    Ok(length_distributions(&raw, vocab)?)
}

fn balance(a: BalanceArgs) -> Result<ExitCode> {
    let parts = read_partitions(&a.sample)?;
    if parts.is_empty() {
        bail!(xling_core::Error::InvalidInput(format!(
            "no partitions in {}",
            a.sample.display()
        )));
    }
    let vocab = match &a.vocab {
        Some(p) => SubwordVocabulary::load(p)?,
        None => train_vocabulary(&parts, a.vocab_size)?,
    };
    let mut reports = BTreeMap::new();
    for p in &parts {
        let sample = length_distributions(p, &vocab)?;
        let full = full_distributions(&a.full, &p.meta, &vocab)?;
        reports.insert(p.meta.code.clone(), validate_balance(&sample, &full, a.threshold)?);
    }
    write_out(
        a.out.as_deref(),
        &balance_tsv(reports.iter().map(|(c, r)| (c.as_str(), r))),
    )?;
    let failed: Vec<&String> = reports.iter().filter(|(_, r)| !r.passed).map(|(c, _)| c).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "unbalanced: {}",
            failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        );
        Ok(ExitCode::from(EXIT_VALIDATION))
    }
}

fn created_at(flag: Option<String>) -> Result<String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v.trim().parse().context("SOURCE_DATE_EPOCH is not an integer")?;
            let t = time::OffsetDateTime::from_unix_timestamp(secs).context("SOURCE_DATE_EPOCH out of range")?;
            Ok(t.format(&time::format_description::well_known::Rfc3339)?)
        }
        Err(_) => Ok(DEFAULT_CREATED_AT.to_owned()),
    }
}

fn build(a: BuildGraphArgs) -> Result<()> {
    let matrix = ingest_score_matrix(&a.matrix, a.orientation)?;
    let mut metas = load_language_table(&a.meta)?;
    if let Some(w) = &a.wals {
        load_wals(w, &mut metas)?;
    }
    let mut graph = build_graph(&matrix, &metas)?;
    graph.meta.created_at = created_at(a.created_at)?;
    export_graph(&graph, &a.out)?;
    debug_assert_eq!(fs::read_to_string(&a.out).ok(), Some(graph_to_json(&graph)));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::new(a.workspace.clone().expect("clap enforces --workspace")),
    };
    if let Some(w) = a.workspace {
        config.workspace_dir = w;
    }
    if let Some(b) = a.bind {
        config.bind = b;
    }
    if a.cors_origin.is_some() {
        config.cors_origin = a.cors_origin;
    }
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    eprintln!("serving {} on {}", config.workspace_dir.display(), config.bind);
    runtime.block_on(xling_service::serve(&config))?;
    Ok(())
}
