//! Assembly of scoped descriptor blocks: the matrix block, per-variable
//! blocks, categorical summaries and the one-level partition recursion.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::categorical::{categorical_summary, level_rows, CategoricalSummary};
use super::changepoint::{pelt_changepoints, ChangeKind, ChangePointSet};
use super::multivariate::{collinearity_prune, count_descriptors};
use super::scad::scad_importance;
use super::series::{acf_significant_lags, ar1_and_trend, fft_dominant};
use super::univariate::{univariate_bounds, univariate_entropy, univariate_moments, univariate_norms};
use super::{Descriptor, Measure, Scope, Value};
use crate::datamodel::{classify_columns, ColumnKind, DataMatrix, FingerprintConfig, Kind};
use crate::error::Result;
use crate::spectral::{self, EntropyWeights, SoftImputeConfig};

/// Minimum rows for a change-point segment to be described.
pub const MIN_SEGMENT_ROWS: usize = 4;

/// A dataset ready for description: the raw table, its column kinds and the
/// soft-imputed values of every numeric-valued column.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: DataMatrix,
    pub kinds: Vec<ColumnKind>,
    /// Imputed values by original column index; `None` for label-only columns.
    pub values: Vec<Option<Vec<f64>>>,
}

impl Prepared {
    pub fn new(raw: DataMatrix, config: &FingerprintConfig) -> Result<Self> {
        let kinds = classify_columns(&raw, config);
        let cols: Vec<usize> = (0..raw.p()).filter(|&j| raw.is_numeric_valued(j)).collect();
        let n = raw.n();
        let x = DMatrix::from_fn(n, cols.len(), |i, k| raw.get(i, cols[k]).unwrap_or(0.0));
        let observed = DMatrix::from_fn(n, cols.len(), |i, k| !raw.is_missing(i, cols[k]));
        let completed = spectral::soft_impute(&x, &observed, &SoftImputeConfig::default())?.completed;
        let mut values = vec![None; raw.p()];
        for (k, &j) in cols.iter().enumerate() {
            values[j] = Some(completed.column(k).iter().copied().collect());
        }
        Ok(Self { raw, kinds, values })
    }

    /// Row subset; column kinds are inherited from the full table.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            raw: self.raw.select_rows(rows),
            kinds: self.kinds.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.as_ref().map(|v| rows.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    pub fn name(&self, j: usize) -> &str {
        &self.raw.column_names()[j]
    }

    /// Indices of columns analysed as continuous variables.
    pub fn numeric_columns(&self) -> Vec<usize> {
        (0..self.raw.p())
            .filter(|&j| self.kinds[j].kind == Kind::Numeric && self.values[j].is_some())
            .collect()
    }

    pub fn categorical_columns(&self) -> Vec<usize> {
        (0..self.raw.p()).filter(|&j| self.kinds[j].kind == Kind::Categorical).collect()
    }

    /// The imputed matrix over all numeric-valued columns.
    pub fn imputed_matrix(&self) -> DMatrix<f64> {
        let cols: Vec<&Vec<f64>> = self.values.iter().flatten().collect();
        DMatrix::from_fn(self.raw.n(), cols.len(), |i, k| cols[k][i])
    }
}

fn real(scope: &Scope, measure: Measure, v: f64) -> Descriptor {
    Descriptor::real(scope.clone(), measure, v)
}

fn opt(scope: &Scope, measure: Measure, v: Option<f64>) -> Descriptor {
    match v {
        Some(v) => real(scope, measure, v),
        None => Descriptor::new(scope.clone(), measure, Value::Undefined),
    }
}

fn undefined(scope: &Scope, measures: &[Measure]) -> Vec<Descriptor> {
    measures
        .iter()
        .map(|&m| Descriptor::new(scope.clone(), m, Value::Undefined))
        .collect()
}

/// Counts, matrix norms, spectral quantities, pairwise statistics of the
/// pruned numeric columns and SCAD fits, in vocabulary order.
pub fn matrix_block(data: &Prepared, scope: &Scope, config: &FingerprintConfig) -> Vec<Descriptor> {
    use Measure::*;
    let mut out = Vec::new();
    let c = count_descriptors(&data.raw);
    out.push(real(scope, TotalCount, c.total_count as f64));
    out.push(real(scope, TotalUnique, c.total_unique as f64));
    out.push(real(scope, MissingCount, c.missing_count as f64));
    out.push(real(scope, CardinalityPercent, c.cardinality_percent));
    out.push(real(scope, NonNumericPercent, c.non_numeric_percent));

    let x = data.imputed_matrix();
    let norms = spectral::matrix_norms(&x);
    out.push(real(scope, MatrixL1Norm, norms.l1));
    out.push(real(scope, FrobeniusNorm, norms.frobenius));
    out.push(real(scope, InfinityNorm, norms.infinity));
    out.push(real(scope, MaxModulus, norms.max_modulus));
    let spectrum = spectral::singular_values(&x)
        .and_then(|s| spectral::spectral_descriptors(&s, EntropyWeights::Energy));
    let spectral_measures = [
        NumericalRank,
        SvThreshold,
        SpectralNorm,
        ConditionNumber,
        SvFrobeniusNorm,
        NuclearNorm,
        SvEntropy,
        SvMedianGap,
        SvMaxGap,
    ];
    match spectrum {
        Ok(s) => {
            let vals = [
                s.numerical_rank as f64,
                s.threshold,
                s.spectral_norm,
                s.condition_number,
                s.frobenius_norm,
                s.nuclear_norm,
                s.sv_entropy,
                s.median_gap,
                s.max_gap,
            ];
            for (m, v) in spectral_measures.into_iter().zip(vals) {
                out.push(real(scope, m, v));
            }
        }
        Err(e) => {
            log::debug!("spectral descriptors undefined: {e}");
            out.extend(undefined(scope, &spectral_measures));
        }
    }

    let numeric = data.numeric_columns();
    if numeric.len() < 2 {
        return out;
    }
    let columns: Vec<Vec<f64>> = numeric.iter().map(|&j| data.values[j].clone().unwrap()).collect();
    let names: Vec<&str> = numeric.iter().map(|&j| data.name(j)).collect();
    let report = collinearity_prune(&columns, config.rho);
    let pairs = report.retained_pairs(&columns);
    for &(i, j, r, _) in &pairs {
        out.push(real(scope, PairwiseCorrelation, r).with_aux([names[i], names[j]]));
    }
    for &(i, j, _, slope) in &pairs {
        out.push(opt(scope, PairwiseRegression, slope).with_aux([names[i], names[j]]));
    }

    let retained: Vec<Vec<f64>> = report.retained.iter().map(|&k| columns[k].clone()).collect();
    let fits = scad_importance(&retained, config.scad_a, config.seed);
    let name_of = |k: usize| names[report.retained[k]].to_string();
    let named = |fit: &super::ScadFit, nonzero_only: bool| {
        fit.predictors
            .iter()
            .zip(&fit.coefficients)
            .filter(|(_, c)| !nonzero_only || **c != 0.0)
            .map(|(&k, &c)| (name_of(k), c))
            .collect::<Vec<_>>()
    };
    for fit in &fits {
        let value = if fit.lambda_selected.is_nan() {
            Value::Undefined
        } else {
            Value::Named(named(fit, true))
        };
        out.push(Descriptor::new(scope.clone(), ScadCorrelation, value).with_aux([name_of(fit.response)]));
    }
    for fit in &fits {
        let value = if fit.lambda_selected.is_nan() {
            Value::Undefined
        } else {
            Value::Named(named(fit, false))
        };
        out.push(Descriptor::new(scope.clone(), RegressionCoefficients, value).with_aux([name_of(fit.response)]));
    }
    out
}

/// Every per-variable measure for one numeric series, plus the mean-shift
/// segmentation used for partitioning.
pub fn variable_block(scope: &Scope, x: &[f64]) -> (Vec<Descriptor>, Option<ChangePointSet>) {
    use Measure::*;
    let mut out = Vec::new();
    if x.is_empty() {
        let all: Vec<Measure> = Measure::ALL
            .iter()
            .copied()
            .filter(|m| (Minimum..=MeanVarianceShiftLocations).contains(m))
            .collect();
        return (undefined(scope, &all), None);
    }
    let b = univariate_bounds(x).expect("non-empty");
    out.push(real(scope, Minimum, b.minimum));
    out.push(real(scope, Maximum, b.maximum));
    out.push(real(scope, Range, b.range));
    out.push(real(scope, NegativeCount, b.negative_count as f64));
    let norms = univariate_norms(x).expect("non-empty");
    out.push(real(scope, L0Norm, norms.l0 as f64));
    out.push(real(scope, L1Norm, norms.l1));
    out.push(real(scope, L2Norm, norms.l2));
    let m = univariate_moments(x).expect("non-empty");
    out.push(real(scope, Mean, m.mean));
    out.push(opt(scope, StandardDeviation, m.sd));
    out.push(opt(scope, Skewness, m.skewness));
    out.push(opt(scope, Kurtosis, m.kurtosis));
    out.push(opt(scope, CoefficientOfVariation, m.cv));
    out.push(real(scope, Q1, m.q1));
    out.push(real(scope, Median, m.median));
    out.push(real(scope, Q3, m.q3));
    out.push(real(scope, MedianAbsDeviation, m.mad));
    out.push(opt(scope, HistogramEntropy, univariate_entropy(x, None).ok()));

    let trend = ar1_and_trend(x).ok();
    out.push(opt(scope, Ar1Coefficient, trend.and_then(|t| t.ar1_coeff)));
    out.push(opt(scope, IndexSlope, trend.map(|t| t.index_slope)));

    let lag_value = |f: fn(&super::series::LagSets) -> &Vec<usize>| match acf_significant_lags(x, None) {
        Ok(l) if !l.constant => Value::Indices(f(&l).clone()),
        _ => Value::Undefined,
    };
    out.push(Descriptor::new(scope.clone(), AcfSignificantLags, lag_value(|l| &l.acf_lags)));
    out.push(Descriptor::new(scope.clone(), PacfSignificantLags, lag_value(|l| &l.pacf_lags)));

    let dominant = fft_dominant(x).ok().flatten();
    out.push(opt(scope, DominantFrequency, dominant.map(|d| d.frequency as f64)));
    out.push(opt(scope, Phase, dominant.map(|d| d.phase)));

    let mut mean_set = None;
    for (kind, measure) in [
        (ChangeKind::Mean, MeanShiftLocations),
        (ChangeKind::Variance, VarianceShiftLocations),
        (ChangeKind::MeanVariance, MeanVarianceShiftLocations),
    ] {
        match pelt_changepoints(x, kind) {
            Ok(set) => {
                out.push(Descriptor::new(scope.clone(), measure, Value::Indices(set.boundaries.clone())));
                if kind == ChangeKind::Mean {
                    mean_set = Some(set);
                }
            }
            Err(_) => out.push(Descriptor::new(scope.clone(), measure, Value::Undefined)),
        }
    }
    (out, mean_set)
}

/// Frequency table, modal category and level count of a categorical column.
pub fn categorical_block(scope: &Scope, s: &CategoricalSummary) -> Vec<Descriptor> {
    vec![
        Descriptor::new(
            scope.clone(),
            Measure::FrequencyDistribution,
            Value::Frequencies(s.frequencies.iter().map(|(l, c, f)| (l.clone(), *c as f64, *f)).collect()),
        ),
        Descriptor::new(
            scope.clone(),
            Measure::ModalCategory,
            Value::Label {
                level: s.modal_level.clone(),
                frequency: s.modal_frequency,
            },
        ),
        real(scope, Measure::UniqueLevels, s.unique_levels as f64),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Partition {
    /// Rows where categorical `column` equals `level`.
    Level { column: usize, level: String, rows: Vec<usize> },
    /// Rows `start..end` of a change-point segment of numeric `column`;
    /// `index` is 1-based.
    Segment {
        column: usize,
        index: usize,
        start: usize,
        end: usize,
    },
}

/// Category levels with at least `n_min` rows, then segments of every
/// column's mean-shift segmentation.
pub fn find_partitions(
    data: &Prepared,
    segmentations: &[(usize, ChangePointSet)],
    config: &FingerprintConfig,
) -> Vec<Partition> {
    let mut out = Vec::new();
    for j in data.categorical_columns() {
        if let Some(s) = categorical_summary(&data.raw, j, config.n_min) {
            for level in s.qualifying {
                let rows = level_rows(&data.raw, j, &level);
                out.push(Partition::Level { column: j, level, rows });
            }
        }
    }
    for (column, set) in segmentations {
        if set.segment_count < 2 {
            continue;
        }
        for (k, (start, end)) in set.segments(data.raw.n()).into_iter().enumerate() {
            out.push(Partition::Segment {
                column: *column,
                index: k + 1,
                start,
                end,
            });
        }
    }
    out
}

/// Descriptors recomputed within each partition. Category levels get the
/// matrix block and the univariate block of every numeric column; segments
/// get the univariate block of their own column. Partitions are never
/// partitioned further.
pub fn partition_descriptors(data: &Prepared, partitions: &[Partition], config: &FingerprintConfig) -> Vec<Descriptor> {
    let per_partition: Vec<Vec<Descriptor>> = partitions
        .par_iter()
        .map(|p| match p {
            Partition::Level { column, level, rows } => {
                if rows.len() < config.n_min {
                    log::info!("skipping level {level} of {}: {} rows", data.name(*column), rows.len());
                    return Vec::new();
                }
                let sub = data.subset(rows);
                let column_name = data.name(*column).to_string();
                let scope = |target: Option<String>| Scope::CategoryLevel {
                    column: column_name.clone(),
                    level: level.clone(),
                    target,
                };
                let mut out = matrix_block(&sub, &scope(None), config);
                for j in sub.numeric_columns() {
                    let s = scope(Some(sub.name(j).to_string()));
                    out.extend(variable_block(&s, sub.values[j].as_ref().unwrap()).0);
                }
                out
            }
            Partition::Segment {
                column,
                index,
                start,
                end,
            } => {
                if end - start < MIN_SEGMENT_ROWS {
                    log::info!("skipping segment {index} of {}: {} rows", data.name(*column), end - start);
                    return Vec::new();
                }
                let x = &data.values[*column].as_ref().unwrap()[*start..*end];
                let scope = Scope::Segment {
                    variable: data.name(*column).to_string(),
                    index: *index,
                };
                variable_block(&scope, x).0
            }
        })
        .collect();
    per_partition.into_iter().flatten().collect()
}

/// All descriptors of a dataset in fingerprint order: matrix scope, then
/// columns in order, then category levels, then segments.
pub fn describe(data: &Prepared, config: &FingerprintConfig) -> Vec<Descriptor> {
    let mut out = matrix_block(data, &Scope::Matrix, config);
    let per_column: Vec<(Vec<Descriptor>, Option<ChangePointSet>)> = (0..data.raw.p())
        .into_par_iter()
        .map(|j| {
            let scope = Scope::Variable(data.name(j).to_string());
            match data.kinds[j].kind {
                Kind::Numeric => match &data.values[j] {
                    Some(x) => variable_block(&scope, x),
                    None => (Vec::new(), None),
                },
                Kind::Categorical => (
                    categorical_summary(&data.raw, j, config.n_min)
                        .map(|s| categorical_block(&scope, &s))
                        .unwrap_or_default(),
                    None,
                ),
            }
        })
        .collect();
    let mut segmentations = Vec::new();
    for (j, (d, seg)) in per_column.into_iter().enumerate() {
        out.extend(d);
        if let Some(seg) = seg {
            segmentations.push((j, seg));
        }
    }
    let partitions = find_partitions(data, &segmentations, config);
    out.extend(partition_descriptors(data, &partitions, config));
    out
}
