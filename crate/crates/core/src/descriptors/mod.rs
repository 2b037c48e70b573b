//! Descriptor catalog: univariate, multivariate, sequential and categorical
//! statistics, and their assembly into scoped descriptor blocks.

pub mod blocks;
pub mod categorical;
pub mod changepoint;
pub mod multivariate;
pub mod scad;
pub mod series;
pub mod univariate;

use serde::{Deserialize, Serialize};

pub use blocks::{describe, matrix_block, partition_descriptors, variable_block, Partition, Prepared};
pub use changepoint::{pelt_changepoints, ChangeKind, ChangePointSet};
pub use multivariate::{collinearity_prune, count_descriptors, CorrelationReport};
pub use scad::{scad_importance, ScadFit};

/// Where a descriptor applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Matrix,
    Variable(String),
    /// Recomputed within rows where `column == level`; `target` is the
    /// numeric variable, or `None` for matrix-level measures.
    CategoryLevel {
        column: String,
        level: String,
        target: Option<String>,
    },
    /// 1-based segment of a change-point segmentation of `variable`.
    Segment { variable: String, index: usize },
}

impl Scope {
    /// Variable token used in rendered sentences.
    pub fn token(&self) -> String {
        match self {
            Scope::Matrix => "matrix".into(),
            Scope::Variable(v) => v.clone(),
            Scope::CategoryLevel { level, target, .. } => {
                format!("{}__lvl_{}", target.as_deref().unwrap_or("matrix"), level)
            }
            Scope::Segment { variable, index } => format!("{variable}__seg{index}"),
        }
    }

    pub fn is_matrix_level(&self) -> bool {
        matches!(self, Scope::Matrix | Scope::CategoryLevel { target: None, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Real(f64),
    /// Lags or segment boundaries.
    Indices(Vec<usize>),
    /// Named coefficients, e.g. SCAD fits.
    Named(Vec<(String, f64)>),
    /// `(level, count, relative frequency)`.
    Frequencies(Vec<(String, f64, f64)>),
    Label { level: String, frequency: f64 },
    /// The statistic is undefined for this input (zero variance and the like).
    Undefined,
}

impl Value {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }
}

macro_rules! vocabulary {
    ($($variant:ident => $id:literal),* $(,)?) => {
        /// Closed measure vocabulary, declared in rendering order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum Measure { $($variant),* }

        impl Measure {
            pub const ALL: &'static [Measure] = &[$(Measure::$variant),*];

            pub fn id(self) -> &'static str {
                match self { $(Measure::$variant => $id),* }
            }

            pub fn from_id(id: &str) -> Option<Measure> {
                match id { $($id => Some(Measure::$variant),)* _ => None }
            }
        }
    };
}

vocabulary! {
    TotalCount => "total_count",
    TotalUnique => "total_unique",
    MissingCount => "missing_count",
    CardinalityPercent => "cardinality_percent",
    NonNumericPercent => "non_numeric_percent",
    MatrixL1Norm => "matrix_l1_norm",
    FrobeniusNorm => "frobenius_norm",
    InfinityNorm => "infinity_norm",
    MaxModulus => "max_modulus",
    NumericalRank => "numerical_rank",
    SvThreshold => "singular_value_threshold",
    SpectralNorm => "spectral_norm",
    ConditionNumber => "condition_number",
    SvFrobeniusNorm => "spectral_frobenius_norm",
    NuclearNorm => "nuclear_norm",
    SvEntropy => "singular_value_entropy",
    SvMedianGap => "singular_value_median_gap",
    SvMaxGap => "singular_value_max_gap",
    PairwiseCorrelation => "pairwise_correlation",
    PairwiseRegression => "pairwise_regression_coefficient",
    ScadCorrelation => "scad_multivariate_correlation",
    RegressionCoefficients => "multivariate_regression_coefficients",
    Minimum => "minimum",
    Maximum => "maximum",
    Range => "range",
    NegativeCount => "negative_count",
    L0Norm => "l0_norm",
    L1Norm => "l1_norm",
    L2Norm => "l2_norm",
    Mean => "mean",
    StandardDeviation => "standard_deviation",
    Skewness => "skewness",
    Kurtosis => "kurtosis",
    CoefficientOfVariation => "coefficient_of_variation",
    Q1 => "q1",
    Median => "median",
    Q3 => "q3",
    MedianAbsDeviation => "median_abs_deviation",
    HistogramEntropy => "histogram_entropy",
    Ar1Coefficient => "ar1_coefficient",
    IndexSlope => "index_slope",
    AcfSignificantLags => "acf_significant_lags",
    PacfSignificantLags => "pacf_significant_lags",
    DominantFrequency => "dominant_frequency",
    Phase => "phase",
    MeanShiftLocations => "mean_shift_locations",
    VarianceShiftLocations => "variance_shift_locations",
    MeanVarianceShiftLocations => "mean_variance_shift_locations",
    FrequencyDistribution => "frequency_distribution",
    ModalCategory => "modal_category",
    UniqueLevels => "unique_levels",
}

impl Measure {
    /// Measures that describe the whole matrix rather than one column.
    pub fn is_multivariate(self) -> bool {
        self <= Measure::RegressionCoefficients
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub scope: Scope,
    pub measure: Measure,
    pub value: Value,
    /// Related variables: both columns of a pairwise statistic, or the
    /// response of a regression fit.
    pub aux: Vec<String>,
}

impl Descriptor {
    pub fn new(scope: Scope, measure: Measure, value: Value) -> Self {
        Self {
            scope,
            measure,
            value,
            aux: Vec::new(),
        }
    }

    pub fn real(scope: Scope, measure: Measure, v: f64) -> Self {
        let value = if v.is_finite() { Value::Real(v) } else { Value::Undefined };
        Self::new(scope, measure, value)
    }

    pub fn with_aux<S: Into<String>>(mut self, aux: impl IntoIterator<Item = S>) -> Self {
        self.aux = aux.into_iter().map(Into::into).collect();
        self
    }
}
