//! Sentence templates, fingerprint assembly and the JSON-Lines fingerprint
//! file.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datamodel::{Ablation, DataMatrix, DpLevel, FingerprintConfig};
use crate::descriptors::{describe, Descriptor, Measure, Prepared, Scope, Value};
use crate::error::{Error, Result};
use crate::privacy::{self, PrivacyBudget, Registry};

pub const SCHEMA_VERSION: &str = "tabfp-1";

/// Lists longer than this are truncated in sentences.
pub const MAX_LIST: usize = 10;

/// Kurtosis band around 3 rendered as mesokurtic.
pub const KURTOSIS_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub variable: String,
    pub measure: String,
    /// Structured value as rendered: a number, a list, or null when undefined.
    pub value: serde_json::Value,
    pub value_text: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dataset_id: String,
    pub sentences: Vec<Sentence>,
    pub config_echo: FingerprintConfig,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.text.as_str()).collect()
    }
}

/// Fixed 4-decimal rendering, ties to even, without negative zero.
pub fn format_number(v: f64) -> String {
    let s = format!("{v:.4}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Subject phrase and optional qualifying clause of a measure's template.
fn template(d: &Descriptor, aux: &[String]) -> (String, Option<String>) {
    use Measure::*;
    let a = |k: usize| aux.get(k).cloned().unwrap_or_else(|| "var".into());
    let subject = match d.measure {
        TotalCount => "The total number of cells".into(),
        TotalUnique => "The total number of unique values across columns".into(),
        MissingCount => "The number of missing values".into(),
        CardinalityPercent => "The cardinality percent".into(),
        NonNumericPercent => "The percentage of non-numeric entries".into(),
        MatrixL1Norm => "The matrix L1 norm".into(),
        FrobeniusNorm => "The Frobenius norm".into(),
        InfinityNorm => "The matrix infinity norm".into(),
        MaxModulus => "The maximum absolute entry".into(),
        NumericalRank => "The numerical rank".into(),
        SvThreshold => "The optimal singular value threshold".into(),
        SpectralNorm => "The spectral norm".into(),
        ConditionNumber => "The condition number".into(),
        SvFrobeniusNorm => "The Frobenius norm of the singular values".into(),
        NuclearNorm => "The nuclear norm".into(),
        SvEntropy => "The singular value entropy".into(),
        SvMedianGap => "The median gap between consecutive singular values".into(),
        SvMaxGap => "The largest gap between consecutive singular values".into(),
        PairwiseCorrelation => format!("The Pearson correlation between {} and {}", a(0), a(1)),
        PairwiseRegression => format!("The regression coefficient of {} on {}", a(1), a(0)),
        ScadCorrelation => format!("The SCAD-selected predictors of {}", a(0)),
        RegressionCoefficients => format!("The multivariate regression coefficients of {}", a(0)),
        Minimum => "The minimum".into(),
        Maximum => "The maximum".into(),
        Range => "The range".into(),
        NegativeCount => "The number of negative values".into(),
        L0Norm => "The L0 norm".into(),
        L1Norm => "The L1 norm".into(),
        L2Norm => "The L2 norm".into(),
        Mean => "The mean".into(),
        StandardDeviation => "The standard deviation".into(),
        Skewness => "Skewness".into(),
        Kurtosis => "Kurtosis".into(),
        CoefficientOfVariation => "The coefficient of variation".into(),
        Q1 => "The first quartile".into(),
        Median => "The median".into(),
        Q3 => "The third quartile".into(),
        MedianAbsDeviation => "The median absolute deviation".into(),
        HistogramEntropy => "The histogram entropy in bits".into(),
        Ar1Coefficient => "The lag-1 autoregressive coefficient".into(),
        IndexSlope => "The slope against the row index".into(),
        AcfSignificantLags => "The significant autocorrelation lags".into(),
        PacfSignificantLags => "The significant partial autocorrelation lags".into(),
        DominantFrequency => "The dominant frequency in cycles per series".into(),
        Phase => "The phase at the dominant frequency in radians".into(),
        MeanShiftLocations => "The mean shift locations".into(),
        VarianceShiftLocations => "The variance shift locations".into(),
        MeanVarianceShiftLocations => "The mean and variance shift locations".into(),
        FrequencyDistribution => "The level frequencies".into(),
        ModalCategory => "The modal category".into(),
        UniqueLevels => "The number of unique levels".into(),
    };
    let suffix = match (d.measure, &d.value) {
        (SvThreshold, _) => Some("singular values below this are considered noise under the Gavish--Donoho criterion".into()),
        (Kurtosis, Value::Real(k)) => Some(
            if *k < 3.0 - KURTOSIS_TOL {
                "the distribution is platykurtic with lighter tails than normal"
            } else if *k > 3.0 + KURTOSIS_TOL {
                "the distribution is leptokurtic with heavier tails than normal"
            } else {
                "the distribution is mesokurtic with tails similar to normal"
            }
            .into(),
        ),
        _ => None,
    };
    (subject, suffix)
}

fn list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    if items.is_empty() {
        return "none".into();
    }
    let mut s: Vec<String> = items.iter().take(MAX_LIST).map(f).collect();
    if items.len() > MAX_LIST {
        s.push(format!("and {} more", items.len() - MAX_LIST));
    }
    s.join(", ")
}

/// Value text and structured value for a descriptor.
fn value_parts(value: &Value, rename: &dyn Fn(&str) -> String) -> (String, serde_json::Value) {
    let num = |v: f64| -> serde_json::Value {
        let t = format_number(v);
        json!(t.parse::<f64>().unwrap_or(v))
    };
    match value {
        Value::Real(v) => (format_number(*v), num(*v)),
        Value::Indices(ix) => (list(ix, |i| i.to_string()), json!(ix)),
        Value::Named(items) => (
            list(items, |(n, c)| format!("{} ({})", rename(n), format_number(*c))),
            serde_json::Value::Array(items.iter().map(|(n, c)| json!([rename(n), num(*c)])).collect()),
        ),
        Value::Frequencies(items) => (
            list(items, |(l, c, f)| format!("{l}: {} ({})", format_number(*c), format_number(*f))),
            serde_json::Value::Array(items.iter().map(|(l, c, f)| json!([l, num(*c), num(*f)])).collect()),
        ),
        Value::Label { level, frequency } => (
            format!("{level} with relative frequency {}", format_number(*frequency)),
            json!({ "level": level, "frequency": num(*frequency) }),
        ),
        Value::Undefined => (String::new(), serde_json::Value::Null),
    }
}

/// Renders one descriptor under an ablation mode.
pub fn render_sentence(d: &Descriptor, index: usize, ablation: Ablation) -> Sentence {
    let hide_names = ablation == Ablation::NoValueNoVariable;
    let rename = |s: &str| if hide_names { "var".to_string() } else { s.to_string() };
    let variable = rename(&d.scope.token());
    let aux: Vec<String> = d.aux.iter().map(|a| rename(a)).collect();
    let (subject, suffix) = template(d, &aux);
    let (value_text, value) = value_parts(&d.value, &rename);
    let with_values = matches!(ablation, Ablation::Full | Ablation::MultivariateOnly);
    let plural = matches!(
        d.measure,
        Measure::ScadCorrelation
            | Measure::RegressionCoefficients
            | Measure::AcfSignificantLags
            | Measure::PacfSignificantLags
            | Measure::MeanShiftLocations
            | Measure::VarianceShiftLocations
            | Measure::MeanVarianceShiftLocations
            | Measure::FrequencyDistribution
    );
    let verb = if plural { "are" } else { "is" };
    let response = if matches!(d.value, Value::Undefined) {
        format!("{subject} {verb} undefined for this column.")
    } else if !with_values {
        format!("{subject}.")
    } else {
        match suffix {
            Some(s) => format!("{subject} {verb} {value_text}; {s}."),
            None => format!("{subject} {verb} {value_text}."),
        }
    };
    let (value_text, value) = if with_values {
        (value_text, value)
    } else {
        (String::new(), serde_json::Value::Null)
    };
    Sentence {
        index,
        text: format!("Variable: {variable}. Measure: {}. Response: {response}", d.measure.id()),
        variable,
        measure: d.measure.id().to_string(),
        value,
        value_text,
    }
}

/// Variable, measure and scalar value recovered from a rendered sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSentence {
    pub variable: String,
    pub measure: Measure,
    /// `None` for undefined, value-free or non-scalar responses.
    pub value: Option<f64>,
}

pub fn parse_sentence(text: &str) -> Result<ParsedSentence> {
    let bad = |r: &str| Error::format("sentence", format!("{r}: {text}"));
    let rest = text.strip_prefix("Variable: ").ok_or_else(|| bad("missing variable"))?;
    let (variable, rest) = rest.split_once(". Measure: ").ok_or_else(|| bad("missing measure"))?;
    let (measure, response) = rest.split_once(". Response: ").ok_or_else(|| bad("missing response"))?;
    let measure = Measure::from_id(measure).ok_or_else(|| Error::UnknownMeasure(measure.to_string()))?;
    let head = response.split_once("; ").map_or(response, |(h, _)| h);
    let value = head
        .strip_suffix('.')
        .unwrap_or(head)
        .rsplit_once(" is ")
        .and_then(|(_, v)| v.parse::<f64>().ok());
    Ok(ParsedSentence {
        variable: variable.to_string(),
        measure,
        value,
    })
}

/// Renders descriptors in order, applying the ablation's sentence filter.
pub fn render_all(descriptors: &[Descriptor], ablation: Ablation) -> Vec<Sentence> {
    descriptors
        .iter()
        .filter(|d| ablation != Ablation::MultivariateOnly || d.scope == Scope::Matrix)
        .enumerate()
        .map(|(i, d)| render_sentence(d, i, ablation))
        .collect()
}

/// Descriptors of a dataset, privatized according to `config`.
pub fn fingerprint_descriptors(m: &DataMatrix, config: &FingerprintConfig, registry: &Registry) -> Result<Vec<Descriptor>> {
    config.validate()?;
    let mut data = Prepared::new(m.clone(), config)?;
    let budget = PrivacyBudget {
        epsilon: config.epsilon,
        rng_seed: config.seed,
    };
    if config.dp_enabled && config.dp_level == DpLevel::Data {
        privacy::privatize_data(&mut data, &config.column_bounds, &budget);
    }
    let mut descriptors = describe(&data, config);
    if config.dp_enabled && config.dp_level == DpLevel::Descriptor {
        privacy::privatize_descriptors(&mut descriptors, &data, &config.column_bounds, registry, &budget)?;
    }
    Ok(descriptors)
}

/// The full pipeline from a table to its ordered sentence collection.
pub fn fingerprint(dataset_id: &str, m: &DataMatrix, config: &FingerprintConfig) -> Result<Fingerprint> {
    fingerprint_with_registry(dataset_id, m, config, &Registry::default())
}

pub fn fingerprint_with_registry(
    dataset_id: &str,
    m: &DataMatrix,
    config: &FingerprintConfig,
    registry: &Registry,
) -> Result<Fingerprint> {
    let descriptors = fingerprint_descriptors(m, config, registry)?;
    Ok(Fingerprint {
        dataset_id: dataset_id.to_string(),
        sentences: render_all(&descriptors, config.ablation),
        config_echo: config.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    dataset_id: String,
    config_echo: FingerprintConfig,
    schema_version: String,
}

pub fn write_fingerprint<W: Write>(fp: &Fingerprint, mut w: W) -> Result<()> {
    let header = Header {
        dataset_id: fp.dataset_id.clone(),
        config_echo: fp.config_echo.clone(),
        schema_version: SCHEMA_VERSION.into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &fp.sentences {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fingerprint<R: Read>(r: R) -> Result<Fingerprint> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format("fingerprint", "empty file"))??;
    let header: Header = serde_json::from_str(&first)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::format(
            "fingerprint",
            format!("unsupported schema `{}`", header.schema_version),
        ));
    }
    let mut sentences = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sentence = serde_json::from_str(&line)?;
        if s.index != sentences.len() {
            return Err(Error::format("fingerprint", format!("sentence index {} out of order", s.index)));
        }
        sentences.push(s);
    }
    Ok(Fingerprint {
        dataset_id: header.dataset_id,
        sentences,
        config_echo: header.config_echo,
    })
}

pub fn save_fingerprint(fp: &Fingerprint, path: impl AsRef<std::path::Path>) -> Result<()> {
    write_fingerprint(fp, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_fingerprint(path: impl AsRef<std::path::Path>) -> Result<Fingerprint> {
    read_fingerprint(std::fs::File::open(path)?)
}
