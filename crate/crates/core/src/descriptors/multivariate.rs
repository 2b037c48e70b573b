use serde::{Deserialize, Serialize};

use crate::datamodel::DataMatrix;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub total_count: usize,
    /// Sum over columns of distinct observed values.
    pub total_unique: usize,
    /// Missing cells in numeric-valued columns.
    pub missing_count: usize,
    pub cardinality_percent: f64,
    pub non_numeric_percent: f64,
}

pub fn count_descriptors(m: &DataMatrix) -> Counts {
    let total_count = m.n() * m.p();
    let total_unique = (0..m.p()).map(|j| m.distinct_levels(j).len()).sum();
    let missing_count = (0..m.p())
        .filter(|&j| m.is_numeric_valued(j))
        .map(|j| m.column(j).iter().filter(|v| v.is_none()).count())
        .sum();
    let non_numeric: usize = (0..m.p()).map(|j| m.non_numeric_count(j)).sum();
    Counts {
        total_count,
        total_unique,
        missing_count,
        cardinality_percent: 100.0 * total_unique as f64 / total_count as f64,
        non_numeric_percent: 100.0 * non_numeric as f64 / total_count as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub column: usize,
    pub culprit: usize,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Symmetric Pearson correlations; pairs involving a constant column are 0.
    pub pairwise_r: Vec<Vec<f64>>,
    pub retained: Vec<usize>,
    pub dropped: Vec<Dropped>,
}

impl CorrelationReport {
    /// Retained pairs `(i, j)`, `i < j`, with correlation and the slope of
    /// column `j` regressed on column `i`.
    pub fn retained_pairs(&self, columns: &[Vec<f64>]) -> Vec<(usize, usize, f64, Option<f64>)> {
        let mut out = Vec::new();
        for (a, &i) in self.retained.iter().enumerate() {
            for &j in &self.retained[a + 1..] {
                out.push((i, j, self.pairwise_r[i][j], stats::ols_slope(&columns[i], &columns[j])));
            }
        }
        out
    }
}

/// Greedy scan in column order: a column is dropped when its squared
/// correlation with an already retained column exceeds `rho`.
pub fn collinearity_prune(columns: &[Vec<f64>], rho: f64) -> CorrelationReport {
    let p = columns.len();
    let mut r = vec![vec![0.0; p]; p];
    for i in 0..p {
        r[i][i] = 1.0;
        for j in i + 1..p {
            let v = stats::pearson(&columns[i], &columns[j]).unwrap_or(0.0);
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    let mut retained: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p {
        let worst = retained
            .iter()
            .map(|&i| (i, r[i][j] * r[i][j]))
            .filter(|&(_, r2)| r2 > rho)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((culprit, r2)) => dropped.push(Dropped { column: j, culprit, r2 }),
            None => retained.push(j),
        }
    }
    CorrelationReport {
        pairwise_r: r,
        retained,
        dropped,
    }
}
