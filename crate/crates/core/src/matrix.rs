//! Monolingual and bilingual MRR evaluations and their TSV form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageMeta;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Proxy,
    Ingested,
}

/// How bilingual models are formed from two languages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Pooled training data.
    #[default]
    Joint,
    /// Continued training on the target, starting from the source model.
    Sequential,
}

/// Which axis of the TSV holds the source language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    RowSource,
    ColumnSource,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(Error::invalid(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

text_enum!(Provenance { Provenance::Proxy => "proxy", Provenance::Ingested => "ingested" });
text_enum!(Regime { Regime::Joint => "joint", Regime::Sequential => "sequential" });
text_enum!(Orientation {
    Orientation::RowSource => "row-source",
    Orientation::ColumnSource => "column-source",
});

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub languages: Vec<String>,
    pub mono: BTreeMap<String, f64>,
    /// `(source, target)` -> MRR of the bilingual model evaluated on target.
    pub bilingual: BTreeMap<(String, String), f64>,
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub regime: Option<Regime>,
}

fn check_value(what: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::OutOfRange(format!("{what} = {v} is outside (0, 1]")));
    }
    Ok(())
}

impl ScoreMatrix {
    pub fn new(languages: Vec<String>, provenance: Provenance) -> Self {
        ScoreMatrix {
            languages,
            mono: BTreeMap::new(),
            bilingual: BTreeMap::new(),
            provenance,
            seeds: Vec::new(),
            regime: None,
        }
    }

    pub fn set_mono(&mut self, code: &str, mrr: f64) {
        self.mono.insert(code.to_owned(), mrr);
    }

    pub fn set_bilingual(&mut self, source: &str, target: &str, mrr: f64) {
        self.bilingual.insert((source.to_owned(), target.to_owned()), mrr);
    }

    pub fn mono(&self, code: &str) -> Option<f64> {
        self.mono.get(code).copied()
    }

    pub fn bilingual(&self, source: &str, target: &str) -> Option<f64> {
        self.bilingual.get(&(source.to_owned(), target.to_owned())).copied()
    }

    pub fn validate(&self) -> Result<()> {
        let known: BTreeSet<&str> = self.languages.iter().map(String::as_str).collect();
        if known.len() != self.languages.len() {
            return Err(Error::invalid("duplicate language in score matrix"));
        }
        for (code, v) in &self.mono {
            if !known.contains(code.as_str()) {
                return Err(Error::invalid(format!("unlisted language '{code}'")));
            }
            check_value(&format!("mono[{code}]"), *v)?;
        }
        let mut missing = Vec::new();
        for ((s, t), v) in &self.bilingual {
            if s == t {
                return Err(Error::invalid(format!("bilingual entry ({s}, {t}) on the diagonal")));
            }
            for c in [s, t] {
                if !known.contains(c.as_str()) {
                    return Err(Error::invalid(format!("unlisted language '{c}'")));
                }
                if !self.mono.contains_key(c) {
                    missing.push(format!("mono[{c}]"));
                }
            }
            check_value(&format!("bilingual[{s}->{t}]"), *v)?;
        }
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(Error::Missing(missing));
        }
        Ok(())
    }

    /// Every ordered pair and every diagonal is present.
    pub fn missing_entries(&self) -> Vec<String> {
        let mut missing = Vec::new();
        for s in &self.languages {
            if !self.mono.contains_key(s) {
                missing.push(format!("mono[{s}]"));
            }
            for t in &self.languages {
                if s != t && self.bilingual(s, t).is_none() {
                    missing.push(format!("bilingual[{s}->{t}]"));
                }
            }
        }
        missing
    }

    pub fn is_complete(&self) -> bool {
        self.missing_entries().is_empty()
    }

    /// Checks that every language is described in `metas`.
    pub fn check_codes(&self, metas: &BTreeMap<String, LanguageMeta>) -> Result<()> {
        let unknown: Vec<String> = self
            .languages
            .iter()
            .filter(|c| !metas.contains_key(*c))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "unknown language codes: {}",
                unknown.join(", ")
            )))
        }
    }

    /// Element-wise mean of matrices over identical language lists, in the
    /// given order. Seeds are concatenated.
    pub fn mean(matrices: &[ScoreMatrix]) -> Result<ScoreMatrix> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::invalid("no matrices to average"))?;
        let k = matrices.len() as f64;
        let mut out = ScoreMatrix::new(first.languages.clone(), first.provenance);
        out.regime = first.regime;
        for m in matrices {
            if m.languages != first.languages
                || m.mono.len() != first.mono.len()
                || m.bilingual.len() != first.bilingual.len()
            {
                return Err(Error::invalid("matrices to average have different shapes"));
            }
            out.seeds.extend(&m.seeds);
        }
        for code in first.mono.keys() {
            let mut sum = 0.0;
            for m in matrices {
                sum += m
                    .mono
                    .get(code)
                    .ok_or_else(|| Error::Missing(vec![format!("mono[{code}]")]))?;
            }
            out.mono.insert(code.clone(), sum / k);
        }
        for key in first.bilingual.keys() {
            let mut sum = 0.0;
            for m in matrices {
                sum += m
                    .bilingual
                    .get(key)
                    .ok_or_else(|| Error::Missing(vec![format!("bilingual[{}->{}]", key.0, key.1)]))?;
            }
            out.bilingual.insert(key.clone(), sum / k);
        }
        Ok(out)
    }

    /// Multiplies every MRR by `c`. Values may leave (0, 1]; used for
    /// invariance checks.
    pub fn scaled(&self, c: f64) -> ScoreMatrix {
        let mut out = self.clone();
        out.mono.values_mut().for_each(|v| *v *= c);
        out.bilingual.values_mut().for_each(|v| *v *= c);
        out
    }

    /// Renders the row-source TSV with its header comments.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# orientation={}", Orientation::RowSource);
        let _ = writeln!(out, "# provenance={}", self.provenance);
        if let Some(r) = self.regime {
            let _ = writeln!(out, "# regime={r}");
        }
        if !self.seeds.is_empty() {
            let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "# seeds={}", seeds.join(","));
        }
        out.push_str("src");
        for t in &self.languages {
            let _ = write!(out, "\t{t}");
        }
        out.push('\n');
        for s in &self.languages {
            out.push_str(s);
            for t in &self.languages {
                let v = if s == t { self.mono(s) } else { self.bilingual(s, t) };
                out.push('\t');
                if let Some(v) = v {
                    out.push_str(&format_cell(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Shortest round-tripping decimal, padded to at least four fractional digits.
pub fn format_cell(v: f64) -> String {
    let mut s = format!("{v}");
    let frac = match s.find('.') {
        Some(i) => s.len() - i - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..4 {
        s.push('0');
    }
    s
}

/// Parses a score-matrix TSV.
///
/// The file must declare `# orientation=...` and it must agree with
/// `declared`. `# scale=percent` divides every cell by 100. A row labelled
/// `mono` supplies diagonal values for the header columns.
pub fn parse_score_matrix(text: &str, declared: Orientation) -> Result<ScoreMatrix> {
    let mut headers: BTreeMap<String, String> = BTreeMap::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows: Vec<(usize, String, Vec<Option<f64>>)> = Vec::new();
    let mut raw_cells: Vec<(usize, String, Vec<String>)> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                headers.insert(k.trim().to_owned(), v.trim().to_owned());
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if columns.is_none() {
            let corner = fields[0].trim();
            if corner != "src" && corner != "src/trgt" {
                return Err(Error::parse(format!("line {lineno}"), "header must start with 'src'"));
            }
            columns = Some(fields[1..].iter().map(|f| f.trim().to_owned()).collect());
            continue;
        }
        raw_cells.push((
            lineno,
            fields[0].trim().to_owned(),
            fields[1..].iter().map(|f| f.trim().to_owned()).collect(),
        ));
    }

    match headers.get("orientation") {
        None => return Err(Error::parse("header", "missing mandatory '# orientation=' declaration")),
        Some(o) => {
            let o: Orientation = o.parse()?;
            if o != declared {
                return Err(Error::parse(
                    "header",
                    format!("file declares orientation={o} but {declared} was requested"),
                ));
            }
        }
    }
    let scale = match headers.get("scale").map(String::as_str) {
        None | Some("fraction") => 1.0,
        Some("percent") => 100.0,
        Some(other) => return Err(Error::parse("header", format!("unknown scale '{other}'"))),
    };
    let columns = columns.ok_or_else(|| Error::parse("header", "missing 'src' header row"))?;

    for (lineno, label, cells) in raw_cells {
        if cells.len() > columns.len() {
            return Err(Error::parse(
                format!("line {lineno}"),
                format!("{} cells for {} columns", cells.len(), columns.len()),
            ));
        }
        let mut parsed = Vec::with_capacity(columns.len());
        for (j, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                parsed.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::parse(format!("line {lineno}"), format!("bad number '{cell}'")))?;
            let v = v / scale;
            check_value(&format!("line {lineno}, column {}", columns[j]), v)?;
            parsed.push(Some(v));
        }
        parsed.resize(columns.len(), None);
        rows.push((lineno, label, parsed));
    }

    let mut languages: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for c in columns.iter().chain(rows.iter().map(|r| &r.1).filter(|l| *l != "mono")) {
        if seen.insert(c.clone()) {
            languages.push(c.clone());
        }
    }
    let mut m = ScoreMatrix::new(languages, Provenance::Ingested);
    for (lineno, label, cells) in &rows {
        for (col, v) in columns.iter().zip(cells) {
            let Some(v) = *v else { continue };
            if label == "mono" || label == col {
                if m.mono.insert(col.clone(), v).is_some() {
                    return Err(Error::parse(
                        format!("line {lineno}"),
                        format!("duplicate monolingual value for '{col}'"),
                    ));
                }
                continue;
            }
            let (s, t) = match declared {
                Orientation::RowSource => (label, col),
                Orientation::ColumnSource => (col, label),
            };
            m.set_bilingual(s, t, v);
        }
    }

    let missing: Vec<String> = m
        .languages
        .iter()
        .filter(|c| !m.mono.contains_key(*c))
        .map(|c| format!("mono[{c}]"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    if let Some(r) = headers.get("regime") {
        m.regime = Some(r.parse()?);
    }
    if let Some(p) = headers.get("provenance") {
        // files written by the proxy scorer keep their provenance label
        if p.parse::<Provenance>()? == Provenance::Proxy {
            m.provenance = Provenance::Proxy;
        }
    }
    if let Some(seeds) = headers.get("seeds") {
        m.seeds = seeds
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::parse("header", format!("bad seed '{s}'")))
            })
            .collect::<Result<_>>()?;
    }
    m.validate()?;
    Ok(m)
}

/// Reads and validates a score matrix file.
pub fn ingest_score_matrix(path: impl AsRef<Path>, declared: Orientation) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score_matrix(&text, declared).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE5: &str = "# orientation=row-source
src/trgt\tde\ten\the\tne\thi\tja
de\t0.2801\t0.3177\t0.2881\t0.2231\t0.2685\t0.3954
en\t0.3401\t0.2508\t0.2761\t0.2238\t0.2615\t0.3927
he\t0.3527\t0.3295\t0.2612\t0.2536\t0.2912\t0.4041
ne\t0.3255\t0.2861\t0.2716\t0.1510\t0.2531\t0.3887
hi\t0.3221\t0.2981\t0.2873\t0.2415\t0.2083\t0.4045
ja\t0.373\t0.3536\t0.3194\t0.2825\t0.3232\t0.3869
";

    #[test]
    fn six_language_table() {
        let m = parse_score_matrix(TABLE5, Orientation::RowSource).unwrap();
        assert_eq!(m.mono("de"), Some(0.2801));
        assert_eq!(m.mono("ja"), Some(0.3869));
        assert_eq!(m.bilingual("de", "en"), Some(0.3177));
        assert_eq!(m.provenance, Provenance::Ingested);
        assert!(m.is_complete());

        let t = parse_score_matrix(
            &TABLE5.replace("row-source", "column-source"),
            Orientation::ColumnSource,
        )
        .unwrap();
        assert_eq!(t.bilingual("en", "de"), Some(0.3177));
        assert_eq!(t.mono("ja"), Some(0.3869));
    }

    #[test]
    fn orientation_is_mandatory_and_must_agree() {
        let no_header = TABLE5.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(parse_score_matrix(&no_header, Orientation::RowSource).is_err());
        assert!(parse_score_matrix(TABLE5, Orientation::ColumnSource).is_err());
    }

    #[test]
    fn monolingual_row_in_percent() {
        let text = "# orientation=row-source\n# scale=percent\nsrc\ten\tpms\tde\nmono\t25.9\t58.9\t24.7\n";
        let m = parse_score_matrix(text, Orientation::RowSource).unwrap();
        assert!((m.mono("en").unwrap() - 0.259).abs() < 1e-15);
        assert!((m.mono("pms").unwrap() - 0.589).abs() < 1e-15);
        assert!(m.bilingual.is_empty());
    }

    #[test]
    fn out_of_range_cell() {
        let text = "# orientation=row-source\nsrc\ta\tb\na\t0.5\t1.5\nb\t0.4\t0.3\n";
        assert!(matches!(
            parse_score_matrix(text, Orientation::RowSource),
            Err(Error::OutOfRange(_))
        ));
        let zero = "# orientation=row-source\nsrc\ta\tb\na\t0.5\t0\nb\t0.4\t0.3\n";
        assert!(parse_score_matrix(zero, Orientation::RowSource).is_err());
    }

    #[test]
    fn missing_diagonal() {
        let text = "# orientation=row-source\nsrc\ta\tb\na\t\t0.5\nb\t0.4\t0.3\n";
        match parse_score_matrix(text, Orientation::RowSource) {
            Err(Error::Missing(m)) => assert_eq!(m, vec!["mono[a]"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_off_diagonal_cells_are_missing() {
        let text = "# orientation=row-source\nsrc\ta\tb\na\t0.5\t\nb\t0.4\t0.3\n";
        let m = parse_score_matrix(text, Orientation::RowSource).unwrap();
        assert_eq!(m.missing_entries(), vec!["bilingual[a->b]"]);
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let mut m = ScoreMatrix::new(vec!["a".into(), "b".into()], Provenance::Proxy);
        m.set_mono("a", 0.1 + 0.2);
        m.set_mono("b", 0.25);
        m.set_bilingual("a", "b", 1.0);
        m.set_bilingual("b", "a", 1.0 / 3.0);
        m.seeds = vec![1, 2];
        m.regime = Some(Regime::Joint);
        let text = m.to_tsv();
        assert!(text.contains("\t0.2500\n"));
        assert!(text.contains("\t1.0000\n") || text.contains("\t1.0000\t"));
        let back = parse_score_matrix(&text, Orientation::RowSource).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_codes_against_metadata() {
        let m = parse_score_matrix(TABLE5, Orientation::RowSource).unwrap();
        let mut metas = BTreeMap::new();
        for c in ["de", "en", "he", "ne", "hi"] {
            metas.insert(c.to_owned(), LanguageMeta::new(c, "f", "s").unwrap());
        }
        let err = m.check_codes(&metas).unwrap_err();
        assert!(err.to_string().contains("ja"));
    }

    #[test]
    fn cell_formatting() {
        assert_eq!(format_cell(0.25), "0.2500");
        assert_eq!(format_cell(1.0), "1.0000");
        assert_eq!(format_cell(0.123456789), "0.123456789");
    }
}
