//! Tabular input: CSV ingestion, column classification and run configuration.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x p` table of optional reals, stored column-major.
///
/// Cells that are empty or do not parse as a finite number are missing.
/// The original token of a non-numeric cell is kept so that label columns
/// (e.g. a textual species column) can still act as categorical variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    column_names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
    tokens: Vec<Vec<Option<String>>>,
    n: usize,
}

impl DataMatrix {
    /// Builds a matrix from named numeric columns. Every column must have the same length.
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let tokens = columns.iter().map(|c| vec![None; c.len()]).collect();
        Self::with_tokens(names, columns, tokens)
    }

    /// Complete numeric matrix from row-major data.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| Some(r[j])).collect())
            .collect();
        Self::from_columns(names, columns)
    }

    fn with_tokens(
        names: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
        tokens: Vec<Vec<Option<String>>>,
    ) -> Result<Self> {
        if names.is_empty() || names.len() != columns.len() {
            return Err(Error::Config(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        if n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Config("columns must be non-empty and of equal length".into()));
        }
        let mut seen = HashSet::new();
        let mut column_names = Vec::with_capacity(names.len());
        for name in names {
            let name = normalize_name(&name);
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateHeader(name));
            }
            column_names.push(name);
        }
        let columns = columns
            .into_iter()
            .map(|c| c.into_iter().map(|v| v.filter(|x| x.is_finite())).collect())
            .collect();
        Ok(Self {
            column_names,
            columns,
            tokens,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, j: usize) -> &[Option<f64>] {
        &self.columns[j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.columns[j][i]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.columns[j][i].is_none()
    }

    /// Row-major missingness mask.
    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| (0..self.p()).map(|j| self.is_missing(i, j)).collect())
            .collect()
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Cells holding a token that is not a number.
    pub fn non_numeric_count(&self, j: usize) -> usize {
        self.tokens[j].iter().filter(|t| t.is_some()).count()
    }

    /// Cells that were empty in the source (missing, but not a stray token).
    pub fn empty_count(&self, j: usize) -> usize {
        self.columns[j]
            .iter()
            .zip(&self.tokens[j])
            .filter(|(v, t)| v.is_none() && t.is_none())
            .count()
    }

    pub fn token(&self, i: usize, j: usize) -> Option<&str> {
        self.tokens[j][i].as_deref()
    }

    /// True when at least one cell of the column parsed as a number.
    pub fn is_numeric_valued(&self, j: usize) -> bool {
        self.columns[j].iter().any(|v| v.is_some())
    }

    /// Categorical level of a cell: the canonical number for numeric-valued
    /// columns, the raw token for label columns.
    pub fn level_key(&self, i: usize, j: usize) -> Option<String> {
        if self.is_numeric_valued(j) {
            self.columns[j][i].map(canonical_number)
        } else {
            self.tokens[j][i].clone()
        }
    }

    pub fn distinct_levels(&self, j: usize) -> BTreeSet<String> {
        (0..self.n).filter_map(|i| self.level_key(i, j)).collect()
    }

    /// Subset of rows, preserving order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            column_names: self.column_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            tokens: self
                .tokens
                .iter()
                .map(|c| rows.iter().map(|&i| c[i].clone()).collect())
                .collect(),
            n: rows.len(),
        }
    }

    /// Writes the table as CSV. Missing numeric cells are empty unless they
    /// carried a non-numeric token, which is written back verbatim.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.column_names)?;
        for i in 0..self.n {
            let row: Vec<String> = (0..self.p())
                .map(|j| match (self.columns[j][i], &self.tokens[j][i]) {
                    (Some(v), _) => format!("{v}"),
                    (None, Some(t)) => t.clone(),
                    (None, None) => String::new(),
                })
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn normalize_name(name: &str) -> String {
    name.trim()
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

pub(crate) fn canonical_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Reads an RFC-4180 CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file).map_err(|e| match e {
        Error::EmptyFile { .. } => Error::EmptyFile {
            path: path.to_path_buf(),
        },
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyFile {
            path: Default::default(),
        });
    }
    let p = headers.len();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); p];
    let mut tokens: Vec<Vec<Option<String>>> = vec![Vec::new(); p];
    for record in rdr.records() {
        let record = record?;
        for j in 0..p {
            let cell = record.get(j).unwrap_or("");
            let (value, token) = parse_cell(cell);
            columns[j].push(value);
            tokens[j].push(token);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::EmptyFile {
            path: Default::default(),
        });
    }
    let m = DataMatrix::with_tokens(headers, columns, tokens)?;
    if !(0..m.p()).any(|j| m.is_numeric_valued(j)) {
        return Err(Error::NoNumericColumns);
    }
    Ok(m)
}

fn parse_cell(cell: &str) -> (Option<f64>, Option<String>) {
    if cell.is_empty() {
        return (None, None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => (Some(v), None),
        _ => (None, Some(cell.to_owned())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnKind {
    pub kind: Kind,
    pub unique_count: usize,
}

/// Columns with at most `kappa` distinct observed values are categorical, as
/// are class columns named in `config.class_columns` and label columns that
/// carry no numbers at all.
pub fn classify_columns(m: &DataMatrix, config: &FingerprintConfig) -> Vec<ColumnKind> {
    (0..m.p())
        .map(|j| {
            let unique_count = m.distinct_levels(j).len();
            let name = &m.column_names()[j];
            let is_class = config
                .class_columns
                .iter()
                .any(|c| c.eq_ignore_ascii_case(name));
            let kind = if unique_count <= config.kappa || is_class || !m.is_numeric_valued(j) {
                Kind::Categorical
            } else {
                Kind::Numeric
            };
            ColumnKind { kind, unique_count }
        })
        .collect()
}

/// Where Laplace noise is injected when privacy is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpLevel {
    /// Noise each scalar descriptor after it is computed.
    #[default]
    Descriptor,
    /// Noise each numeric cell of the imputed matrix before any descriptor.
    Data,
}

/// Serialization-stage switch that removes parts of each sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    NoValue,
    NoValueNoVariable,
    MultivariateOnly,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-value" => Ok(Ablation::NoValue),
            "no-value-no-variable" => Ok(Ablation::NoValueNoVariable),
            "multivariate-only" => Ok(Ablation::MultivariateOnly),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerprintConfig {
    pub dp_enabled: bool,
    pub epsilon: f64,
    pub dp_level: DpLevel,
    /// Collinearity threshold on squared Pearson correlation.
    pub rho: f64,
    /// Cardinality threshold for categorical columns.
    pub kappa: usize,
    /// Minimum rows for a category level to be partitioned.
    pub n_min: usize,
    pub scad_a: f64,
    pub seed: u64,
    /// Declared `[lo, hi]` ranges per column name, used as DP clamp bounds.
    pub column_bounds: BTreeMap<String, (f64, f64)>,
    pub class_columns: Vec<String>,
    pub ablation: Ablation,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            dp_enabled: false,
            epsilon: 1.0,
            dp_level: DpLevel::Descriptor,
            rho: 0.95,
            kappa: 12,
            n_min: 30,
            scad_a: 3.7,
            seed: 42,
            column_bounds: BTreeMap::new(),
            class_columns: vec!["class".into(), "quality".into(), "species".into()],
            ablation: Ablation::Full,
        }
    }
}

impl FingerprintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dp_enabled && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.kappa == 0 {
            return Err(Error::Config("kappa must be positive".into()));
        }
        if self.n_min < 2 {
            return Err(Error::Config("n_min must be at least 2".into()));
        }
        if self.scad_a <= 2.0 {
            return Err(Error::Config(format!("SCAD a must exceed 2, got {}", self.scad_a)));
        }
        for (name, (lo, hi)) in &self.column_bounds {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Config(format!("bad bounds for `{name}`")));
            }
        }
        Ok(())
    }
}
