//! Statistics kernel: correlations, significance tests and 1-D Earth
//! Mover's Distance. Everything here is a pure function.

mod special;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use special::{beta_inc, chi_square_sf, gamma_q, ln_gamma, student_t_two_sided};

/// Tolerance on total mass when a histogram is expected to be normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Outcome of a significance test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Set when the test could not be evaluated normally (|r| = 1, or a
    /// contingency table that collapsed below 2x2).
    #[serde(default)]
    pub degenerate: bool,
}

impl TestResult {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Discrete distribution over non-negative integer support.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    mass: BTreeMap<u64, f64>,
}

impl Histogram {
    /// Builds a normalized histogram from raw counts. Zero counts are dropped.
    pub fn from_counts<I>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, u64)>,
    {
        let mut raw = BTreeMap::new();
        for (k, c) in counts {
            if c > 0 {
                *raw.entry(k).or_insert(0u64) += c;
            }
        }
        let total: u64 = raw.values().sum();
        if total == 0 {
            return Err(Error::Degenerate("histogram has no mass".into()));
        }
        let mass = raw.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect();
        Ok(Histogram { mass })
    }

    /// Builds a histogram from a list of observations.
    pub fn from_observations<I: IntoIterator<Item = u64>>(values: I) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_insert(0u64) += 1;
        }
        Self::from_counts(counts)
    }

    /// Wraps explicit probabilities without renormalizing them.
    pub fn from_probabilities<I: IntoIterator<Item = (u64, f64)>>(probs: I) -> Self {
        let mut mass = BTreeMap::new();
        for (k, p) in probs {
            *mass.entry(k).or_insert(0.0) += p;
        }
        Histogram { mass }
    }

    pub fn get(&self, k: u64) -> f64 {
        self.mass.get(&k).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.mass.iter().map(|(&k, &p)| (k, p))
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.mass.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    fn check_normalized(&self, name: &str) -> Result<()> {
        let total = self.total_mass();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::invalid(format!("{name} is not normalized (total mass {total})")));
        }
        if self.mass.values().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid(format!("{name} has negative or non-finite mass")));
        }
        Ok(())
    }
}

/// Labelled table of non-negative counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if rows.len() < 2 || cols.len() < 2 {
            return Err(Error::invalid("contingency table needs at least 2 rows and 2 columns"));
        }
        if counts.len() != rows.len() || counts.iter().any(|r| r.len() != cols.len()) {
            return Err(Error::invalid("contingency table shape does not match its labels"));
        }
        let table = ContingencyTable { rows, cols, counts };
        if table.grand_total() == 0 {
            return Err(Error::invalid("contingency table is empty"));
        }
        Ok(table)
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.cols.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn grand_total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Drops columns whose total is zero.
    pub fn without_empty_columns(&self) -> (Vec<String>, Vec<Vec<u64>>) {
        let keep: Vec<usize> = self
            .col_totals()
            .iter()
            .enumerate()
            .filter(|(_, t)| **t > 0)
            .map(|(j, _)| j)
            .collect();
        let cols = keep.iter().map(|&j| self.cols[j].clone()).collect();
        let counts = self
            .counts
            .iter()
            .map(|r| keep.iter().map(|&j| r[j]).collect())
            .collect();
        (cols, counts)
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average (mid) ranks, 1-based.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-rank ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_r(&mid_ranks(x), &mid_ranks(y))
}

/// Student's t test for a correlation coefficient, two-sided.
///
/// `|r| = 1` yields `p = 0` with `degenerate` set.
pub fn t_test_correlation(r: f64, n: usize) -> Result<TestResult> {
    if n < 3 {
        return Err(Error::invalid(format!("t test needs n >= 3, got {n}")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::OutOfRange(format!("correlation {r}")));
    }
    let df = n - 2;
    if r.abs() == 1.0 {
        return Ok(TestResult {
            statistic: r.signum() * f64::INFINITY,
            df,
            p_value: 0.0,
            degenerate: true,
        });
    }
    let t = r * (df as f64 / (1.0 - r * r)).sqrt();
    Ok(TestResult {
        statistic: t,
        df,
        p_value: student_t_two_sided(t, df as f64),
        degenerate: false,
    })
}

/// Pearson's chi-square test of independence.
pub fn chi_square(table: &ContingencyTable) -> Result<TestResult> {
    let rows = table.row_totals();
    let cols = table.col_totals();
    if let Some(i) = rows.iter().position(|t| *t == 0) {
        return Err(Error::Degenerate(format!("row '{}' has zero total", table.rows[i])));
    }
    if let Some(j) = cols.iter().position(|t| *t == 0) {
        return Err(Error::Degenerate(format!("column '{}' has zero total", table.cols[j])));
    }
    let grand = table.grand_total() as f64;
    let mut statistic = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = rows[i] as f64 * cols[j] as f64 / grand;
            let d = obs as f64 - expected;
            statistic += d * d / expected;
        }
    }
    let df = (rows.len() - 1) * (cols.len() - 1);
    Ok(TestResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df as f64),
        degenerate: false,
    })
}

/// 1-D Earth Mover's Distance with ground distance |i - j|, computed as the
/// L1 distance between the two CDFs. Support points missing from one side
/// carry zero mass.
pub fn emd_1d(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_normalized("p")?;
    q.check_normalized("q")?;
    let mut support: Vec<u64> = p.support().chain(q.support()).collect();
    support.sort_unstable();
    support.dedup();
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for pair in support.windows(2) {
        cp += p.get(pair[0]);
        cq += q.get(pair[0]);
        total += (cp - cq).abs() * (pair[1] - pair[0]) as f64;
    }
    Ok(total)
}
