//! Laplace mechanism for scalar descriptors, driven by a sensitivity
//! registry that maps each measure to a rule.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{Descriptor, Measure, Prepared, Scope, Value};
use crate::error::{Error, Result};

const DEFAULT_REGISTRY: &str = include_str!("../data/sensitivity.json");

/// How the global sensitivity of a measure is derived from column bounds
/// `[lo, hi]` (width `w = hi - lo`, `B = max(|lo|, |hi|)`), scope size `n`
/// and number of columns `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Counting query, `1`.
    Count,
    /// `w / n`, clamped to `[lo, hi]`.
    Mean,
    /// Order statistics, `w`, clamped to `[lo, hi]`.
    Range,
    /// Dispersion, `w`, clamped to `[0, w]`.
    Spread,
    /// Sums and vector norms, `B`.
    Sum,
    /// Matrix norms under one added row, `factor * B * p^p_exponent`.
    RowNorm {
        p_exponent: f64,
        #[serde(default = "one")]
        factor: f64,
    },
    /// OLS slope on the row index, `6w / n`, clamped to `[-3w/n, 3w/n]`.
    Slope,
    /// Fourier index, `n / 2`, clamped to `[1, n / 2]`.
    Frequency,
    /// Spectral entropy, `log2 p`, clamped to `[0, log2 p]`.
    Entropy,
    /// Fixed interval; sensitivity is its width.
    Clamped { lo: f64, hi: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Derivation {
    Analytic,
    ClampedRange { width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub measure: String,
    pub delta: f64,
    pub derivation: Derivation,
    /// Interval the value is clamped to before noising.
    pub clamp: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, rng_seed: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon, rng_seed })
    }
}

/// Measure id to rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry(pub BTreeMap<String, Rule>);

impl Default for Registry {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_REGISTRY).expect("bundled sensitivity registry parses")
    }
}

impl Registry {
    /// Bundled registry with entries from `path` taking precedence.
    pub fn with_overrides(path: impl AsRef<Path>) -> Result<Self> {
        let extra: Registry = serde_json::from_reader(std::fs::File::open(path)?)?;
        let mut reg = Registry::default();
        reg.0.extend(extra.0);
        Ok(reg)
    }

    pub fn sensitivity_for(&self, measure: &str, bounds: Option<(f64, f64)>, n: usize, p: usize) -> Result<SensitivitySpec> {
        let rule = self
            .0
            .get(measure)
            .ok_or_else(|| Error::UnknownMeasure(measure.to_string()))?;
        let need = || -> Result<(f64, f64)> {
            match bounds {
                Some((lo, hi)) if lo.is_finite() && hi.is_finite() && hi > lo => Ok((lo, hi)),
                _ => Err(Error::MissingBounds(measure.to_string())),
            }
        };
        let n = n.max(1) as f64;
        let p = p.max(1) as f64;
        let analytic = |delta: f64, clamp: Option<(f64, f64)>| SensitivitySpec {
            measure: measure.to_string(),
            delta,
            derivation: Derivation::Analytic,
            clamp,
        };
        Ok(match rule {
            Rule::Count => analytic(1.0, None),
            Rule::Mean => {
                let (lo, hi) = need()?;
                analytic((hi - lo) / n, Some((lo, hi)))
            }
            Rule::Range => {
                let (lo, hi) = need()?;
                analytic(hi - lo, Some((lo, hi)))
            }
            Rule::Spread => {
                let (lo, hi) = need()?;
                analytic(hi - lo, Some((0.0, hi - lo)))
            }
            Rule::Sum => {
                let (lo, hi) = need()?;
                analytic(lo.abs().max(hi.abs()), None)
            }
            Rule::RowNorm { p_exponent, factor } => {
                let (lo, hi) = need()?;
                analytic(factor * lo.abs().max(hi.abs()) * p.powf(*p_exponent), None)
            }
            Rule::Slope => {
                let (lo, hi) = need()?;
                let c = 3.0 * (hi - lo) / n;
                analytic(2.0 * c, Some((-c, c)))
            }
            Rule::Frequency => {
                let top = (n / 2.0).floor().max(1.0);
                analytic(top, Some((1.0, top)))
            }
            Rule::Entropy => {
                let top = p.log2();
                analytic(top, Some((0.0, top)))
            }
            Rule::Clamped { lo, hi } => SensitivitySpec {
                measure: measure.to_string(),
                delta: hi - lo,
                derivation: Derivation::ClampedRange { width: hi - lo },
                clamp: Some((*lo, *hi)),
            },
        })
    }
}

/// Sensitivity from the bundled registry.
pub fn sensitivity_for(measure: &str, bounds: Option<(f64, f64)>, n: usize, p: usize) -> Result<SensitivitySpec> {
    Registry::default().sensitivity_for(measure, bounds, n, p)
}

/// Generator for the noise of item `index`: stream `index` of the seed.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One Laplace(0, `scale`) draw by inverse CDF.
pub fn laplace(rng: &mut impl Rng, scale: f64) -> f64 {
    loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            let u = r - 0.5;
            return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// Clamps then adds Laplace(Δ/ε) noise to a real value.
pub fn noisy_value(v: f64, spec: &SensitivitySpec, budget: &PrivacyBudget, index: u64) -> f64 {
    if spec.delta == 0.0 {
        return v;
    }
    let v = match spec.clamp {
        Some((lo, hi)) => v.clamp(lo, hi),
        None => v,
    };
    v + laplace(&mut substream(budget.rng_seed, index), spec.delta / budget.epsilon)
}

/// Privatized copy of `d`; only real values are noised. `index` selects the
/// noise substream, so results do not depend on processing order.
pub fn privatize(d: &Descriptor, spec: &SensitivitySpec, budget: &PrivacyBudget, index: u64) -> Descriptor {
    let mut out = d.clone();
    if let Value::Real(v) = d.value {
        out.value = Value::Real(noisy_value(v, spec, budget, index));
    }
    out
}

/// Clamp bounds of a column: declared, or the observed range with a warning.
fn column_bounds(data: &Prepared, declared: &BTreeMap<String, (f64, f64)>, j: usize, warned: &mut Vec<usize>) -> Option<(f64, f64)> {
    let name = data.name(j);
    if let Some(b) = declared.get(name) {
        return Some(*b);
    }
    let x = data.values[j].as_ref()?;
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !warned.contains(&j) {
        log::warn!("no declared bounds for `{name}`; using the observed range [{lo}, {hi}]");
        warned.push(j);
    }
    // widen a degenerate range so width-based rules stay positive
    Some(if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) })
}

/// Noises every real-valued descriptor of a fingerprint in place.
///
/// Bounds come from `declared` or the observed column ranges; matrix-scope
/// descriptors use the hull of all numeric-valued columns.
pub fn privatize_descriptors(
    descriptors: &mut [Descriptor],
    data: &Prepared,
    declared: &BTreeMap<String, (f64, f64)>,
    registry: &Registry,
    budget: &PrivacyBudget,
) -> Result<()> {
    let n = data.raw.n();
    let numeric_valued: Vec<usize> = (0..data.raw.p()).filter(|&j| data.values[j].is_some()).collect();
    let p = numeric_valued.len();
    let mut warned = Vec::new();
    let mut bounds_of = HashMap::new();
    for &j in &numeric_valued {
        bounds_of.insert(data.name(j).to_string(), column_bounds(data, declared, j, &mut warned));
    }
    let hull = bounds_of.values().flatten().fold(None, |acc: Option<(f64, f64)>, &(lo, hi)| {
        Some(acc.map_or((lo, hi), |(a, b)| (a.min(lo), b.max(hi))))
    });

    // rows per partition scope
    let mut level_rows: HashMap<(String, String), usize> = HashMap::new();
    let mut segment_rows: HashMap<(String, usize), usize> = HashMap::new();
    for d in descriptors.iter() {
        match (&d.scope, d.measure, &d.value) {
            (Scope::CategoryLevel { column, level, target: None }, Measure::TotalCount, Value::Real(v)) => {
                level_rows.insert((column.clone(), level.clone()), (*v as usize) / data.raw.p().max(1));
            }
            (Scope::Variable(var), Measure::MeanShiftLocations, Value::Indices(b)) => {
                let mut start = 0;
                for (k, &end) in b.iter().chain(std::iter::once(&n)).enumerate() {
                    segment_rows.insert((var.clone(), k + 1), end - start);
                    start = end;
                }
            }
            _ => {}
        }
    }
    for (index, d) in descriptors.iter_mut().enumerate() {
        if !matches!(d.value, Value::Real(_)) {
            continue;
        }
        let (rows, bounds) = match &d.scope {
            Scope::Matrix => (n, hull),
            Scope::Variable(v) => (n, bounds_of.get(v).copied().flatten()),
            Scope::CategoryLevel { column, level, target } => {
                let rows = level_rows.get(&(column.clone(), level.clone())).copied().unwrap_or(n);
                let b = match target {
                    Some(t) => bounds_of.get(t).copied().flatten(),
                    None => hull,
                };
                (rows, b)
            }
            Scope::Segment { variable, index } => (
                segment_rows.get(&(variable.clone(), *index)).copied().unwrap_or(n),
                bounds_of.get(variable).copied().flatten(),
            ),
        };
        let cols = if d.scope.is_matrix_level() { p } else { 1 };
        let spec = registry.sensitivity_for(d.measure.id(), bounds, rows, cols)?;
        *d = privatize(d, &spec, budget, index as u64);
    }
    Ok(())
}

/// Data-level mechanism: every numeric cell gets Laplace noise scaled to its
/// column's clamp width, after clamping to the column bounds.
pub fn privatize_data(
    data: &mut Prepared,
    declared: &BTreeMap<String, (f64, f64)>,
    budget: &PrivacyBudget,
) {
    let mut warned = Vec::new();
    for j in 0..data.raw.p() {
        let Some((lo, hi)) = column_bounds(data, declared, j, &mut warned) else {
            continue;
        };
        let mut rng = substream(budget.rng_seed, j as u64);
        let scale = (hi - lo) / budget.epsilon;
        if let Some(x) = data.values[j].as_mut() {
            for v in x.iter_mut() {
                *v = v.clamp(lo, hi) + laplace(&mut rng, scale);
            }
        }
    }
}
