//! Synthetic catalogs with planted twins, twin-retrieval evaluation and
//! differential-privacy sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{adjusted_rand_index, nearest_neighbors, precision_at_1, ward_d2, Dendrogram};
use crate::datamodel::{DataMatrix, DpLevel, FingerprintConfig};
use crate::descriptors::{Measure, Scope, Value};
use crate::embed::{encode, EmbeddingMatrix, ProviderConfig};
use crate::error::{Error, Result};
use crate::privacy::Registry;
use crate::serialize::{fingerprint_descriptors, fingerprint, Fingerprint};
use crate::similarity::{distance_matrix, CcaConfig, DistanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Generator {
    /// Equal-weight mixture of unit-variance Gaussians with N(0, separation^2) centres.
    GaussianMix { components: usize, separation: f64 },
    /// `z W + noise` with a `rank`-dimensional latent factor.
    LowRankPlusNoise { rank: usize, noise_sd: f64 },
    /// Independent AR(1) columns.
    #[serde(rename = "ARSeries")]
    ArSeries { phi: f64 },
    /// Sinusoid with a per-column phase plus unit noise.
    Seasonal { period: usize, amplitude: f64 },
}

/// One synthetic table. `schema_seed` fixes the column names and ranges, `param_seed`
/// the distribution (offsets, scales, loadings) and `seed` the draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub id: String,
    pub generator: Generator,
    pub n: usize,
    pub p: usize,
    pub schema_seed: u64,
    pub param_seed: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twin_of: Option<String>,
}

const WORDS: [&str; 48] = [
    "alkalinity", "altitude", "amperage", "biomass", "brightness", "calcium", "capacity", "chlorides", "density",
    "depth", "duration", "elevation", "flow", "fluoride", "frequency", "gradient", "hardness", "humidity", "intensity",
    "latency", "length", "load", "luminance", "magnesium", "mass", "moisture", "nitrate", "opacity", "output",
    "phosphate", "pressure", "rainfall", "reflectance", "resistance", "salinity", "speed", "strain", "sulphate",
    "tension", "throughput", "torque", "turbidity", "uptake", "velocity", "viscosity", "voltage", "width", "yield",
];

struct Structure {
    names: Vec<String>,
    offset: Vec<f64>,
    scale: Vec<f64>,
    centres: Vec<Vec<f64>>,
    loadings: Vec<Vec<f64>>,
    phase: Vec<f64>,
}

fn structure(spec: &SyntheticSpec) -> Structure {
    // column names and measurement ranges belong to the schema
    let mut schema_rng = ChaCha8Rng::seed_from_u64(spec.schema_seed);
    let mut words = WORDS.to_vec();
    words.shuffle(&mut schema_rng);
    let names = words.iter().take(spec.p).map(|w| w.to_string()).collect();
    let base: Vec<f64> = (0..spec.p).map(|_| schema_rng.random_range(10.0..90.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.param_seed);
    let offset = base.iter().map(|b| b + rng.random_range(-3.0..3.0)).collect();
    let scale = (0..spec.p).map(|_| rng.random_range(3.0..5.0)).collect();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let (centres, loadings) = match spec.generator {
        Generator::GaussianMix { components, separation } => (
            (0..components).map(|_| (0..spec.p).map(|_| separation * normal(&mut rng)).collect()).collect(),
            Vec::new(),
        ),
        Generator::LowRankPlusNoise { rank, .. } => {
            let loading = |rng: &mut ChaCha8Rng| rng.random_range(0.7..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (Vec::new(), (0..rank).map(|_| (0..spec.p).map(|_| loading(&mut rng)).collect()).collect())
        }
        _ => (Vec::new(), Vec::new()),
    };
    let phase = (0..spec.p).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    Structure {
        names,
        offset,
        scale,
        centres,
        loadings,
        phase,
    }
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.n < 10 || spec.p == 0 || spec.p > WORDS.len() {
        return Err(Error::Config(format!("`{}`: need n >= 10 and 1 <= p <= {}", spec.id, WORDS.len())));
    }
    let ok = match spec.generator {
        Generator::GaussianMix { components, separation } => components >= 1 && separation >= 0.0,
        Generator::LowRankPlusNoise { rank, noise_sd } => rank >= 1 && noise_sd >= 0.0,
        Generator::ArSeries { phi } => phi.abs() < 1.0,
        Generator::Seasonal { period, amplitude } => period >= 2 && amplitude >= 0.0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("`{}`: invalid generator parameters", spec.id)))
    }
}

/// Draws one table. Values are rounded to four decimals so CSV round trips are exact.
pub fn generate(spec: &SyntheticSpec) -> Result<DataMatrix> {
    validate(spec)?;
    let s = structure(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p) = (spec.n, spec.p);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut rows = vec![vec![0.0; p]; n];
    match spec.generator {
        Generator::GaussianMix { components, .. } => {
            for row in rows.iter_mut() {
                let c = rng.random_range(0..components);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = s.centres[c][j] + normal(&mut rng);
                }
            }
        }
        Generator::LowRankPlusNoise { rank, noise_sd } => {
            for row in rows.iter_mut() {
                let z: Vec<f64> = (0..rank).map(|_| normal(&mut rng)).collect();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (0..rank).map(|k| z[k] * s.loadings[k][j]).sum::<f64>() + noise_sd * normal(&mut rng);
                }
            }
        }
        Generator::ArSeries { phi } => {
            let sd0 = 1.0 / (1.0 - phi * phi).sqrt();
            for j in 0..p {
                let mut x = sd0 * normal(&mut rng);
                for row in rows.iter_mut() {
                    row[j] = x;
                    x = phi * x + normal(&mut rng);
                }
            }
        }
        Generator::Seasonal { period, amplitude } => {
            for (t, row) in rows.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = amplitude * (2.0 * PI * t as f64 / period as f64 + s.phase[j]).sin() + normal(&mut rng);
                }
            }
        }
    }
    for row in rows.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (s.offset[j] + s.scale[j] * *v).round();
        }
    }
    DataMatrix::from_rows(s.names, &rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TruthPairs {
    pub pairs: Vec<(String, String)>,
}

impl TruthPairs {
    pub fn from_specs(specs: &[SyntheticSpec]) -> Self {
        Self {
            pairs: specs
                .iter()
                .filter_map(|s| s.twin_of.as_ref().map(|t| (t.clone(), s.id.clone())))
                .collect(),
        }
    }

    /// Ids that have a truth partner, sorted.
    pub fn queries(&self) -> BTreeSet<String> {
        self.pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

fn check_specs(specs: &[SyntheticSpec]) -> Result<()> {
    let mut by_id = BTreeMap::new();
    for s in specs {
        if by_id.insert(s.id.as_str(), s).is_some() {
            return Err(Error::Config(format!("duplicate synthetic id `{}`", s.id)));
        }
    }
    for s in specs {
        if let Some(t) = &s.twin_of {
            let src = by_id.get(t.as_str()).ok_or_else(|| Error::Config(format!("`{}` is a twin of unknown `{t}`", s.id)))?;
            if src.generator != s.generator || src.p != s.p || src.param_seed != s.param_seed || src.schema_seed != s.schema_seed {
                return Err(Error::Config(format!("`{}` does not share the parameters of its twin `{t}`", s.id)));
            }
        }
    }
    Ok(())
}

/// Writes `<id>.csv` per spec, `truth_pairs.json` and `specs.json`.
pub fn generate_catalog(specs: &[SyntheticSpec], dir: impl AsRef<Path>) -> Result<TruthPairs> {
    check_specs(specs)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    specs.par_iter().try_for_each(|s| -> Result<()> {
        let m = generate(s)?;
        m.write_csv(fs::File::create(dir.join(format!("{}.csv", s.id)))?)
    })?;
    let truth = TruthPairs::from_specs(specs);
    truth.save(dir.join("truth_pairs.json"))?;
    fs::write(dir.join("specs.json"), serde_json::to_string_pretty(specs)? + "\n")?;
    Ok(truth)
}

/// Fifteen tables in five schema groups (shared column names). Four groups
/// hold a twin pair (twins differ in `n`) plus a distractor with the same
/// schema but a different distribution; the fifth holds three distractors.
pub fn default_catalog() -> Vec<SyntheticSpec> {
    use Generator::*;
    let spec = |id: &str, generator, n, schema_seed, param_seed, seed, twin_of: Option<&str>| SyntheticSpec {
        id: id.into(),
        generator,
        n,
        p: 3,
        schema_seed,
        param_seed,
        seed,
        twin_of: twin_of.map(str::to_string),
    };
    let gm = GaussianMix { components: 3, separation: 3.0 };
    let lr = LowRankPlusNoise { rank: 1, noise_sd: 0.3 };
    let ar = ArSeries { phi: -0.2 };
    let se = Seasonal { period: 7, amplitude: 1.0 };
    vec![
        spec("mixture_a", gm, 800, 1, 1, 42, None),
        spec("mixture_a_twin", gm, 1300, 1, 1, 43, Some("mixture_a")),
        spec("mixture_b", GaussianMix { components: 2, separation: 5.0 }, 850, 1, 5, 50, None),
        spec("lowrank_a", lr, 900, 2, 2, 44, None),
        spec("lowrank_a_twin", lr, 1400, 2, 2, 45, Some("lowrank_a")),
        spec("lowrank_b", LowRankPlusNoise { rank: 2, noise_sd: 0.5 }, 1050, 2, 7, 52, None),
        spec("ar_a", ar, 700, 3, 3, 46, None),
        spec("ar_a_twin", ar, 1200, 3, 3, 47, Some("ar_a")),
        spec("ar_b", ArSeries { phi: -0.3 }, 750, 3, 8, 53, None),
        spec("seasonal_a", se, 1000, 4, 4, 48, None),
        spec("seasonal_a_twin", se, 1500, 4, 4, 49, Some("seasonal_a")),
        spec("seasonal_b", Seasonal { period: 5, amplitude: 0.8 }, 1150, 4, 10, 55, None),
        spec("mixture_c", GaussianMix { components: 4, separation: 2.0 }, 950, 5, 6, 51, None),
        spec("mixture_d", GaussianMix { components: 2, separation: 4.0 }, 1100, 5, 9, 54, None),
        spec("mixture_e", GaussianMix { components: 3, separation: 3.0 }, 1250, 5, 11, 56, None),
    ]
}

pub fn generate_all(specs: &[SyntheticSpec]) -> Result<Vec<(String, DataMatrix)>> {
    check_specs(specs)?;
    specs.par_iter().map(|s| Ok((s.id.clone(), generate(s)?))).collect()
}

/// Fingerprints and embeds every table, in input order.
pub fn embed_all(
    datasets: &[(String, DataMatrix)],
    fp_cfg: &FingerprintConfig,
    provider: &ProviderConfig,
) -> Result<Vec<(Fingerprint, EmbeddingMatrix)>> {
    datasets
        .par_iter()
        .map(|(id, m)| {
            let fp = fingerprint(id, m, fp_cfg)?;
            let e = encode(&fp, provider)?;
            Ok((fp, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub p_at_1: f64,
    /// Rank-1 neighbour of every twin query.
    pub assignments: BTreeMap<String, String>,
}

/// P@1 over the ids that appear in a truth pair.
pub fn evaluate_twins(dm: &DistanceMatrix, truth: &TruthPairs) -> Result<RetrievalReport> {
    let queries = truth.queries();
    let assignments: BTreeMap<String, String> =
        nearest_neighbors(dm).into_iter().filter(|(q, _)| queries.contains(q)).collect();
    let p_at_1 = precision_at_1(&assignments, &truth.pairs)?;
    Ok(RetrievalReport { p_at_1, assignments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// `None` is the no-privacy baseline.
    pub epsilons: Vec<Option<f64>>,
    pub fingerprint: FingerprintConfig,
    pub provider: ProviderConfig,
    pub cca: CcaConfig,
    /// Flat clusters compared by the adjusted Rand index.
    pub k_clusters: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![None, Some(10.0), Some(1.0), Some(0.1)],
            fingerprint: FingerprintConfig::default(),
            provider: ProviderConfig::default(),
            cca: CcaConfig::default(),
            k_clusters: 5,
        }
    }
}

pub fn epsilon_label(eps: Option<f64>) -> String {
    eps.map_or_else(|| "inf".to_string(), |e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub epsilon: String,
    pub distances: DistanceMatrix,
    pub dendrogram: Dendrogram,
    pub clusters: Vec<usize>,
    pub ari_vs_baseline: f64,
    pub p_at_1: f64,
    /// Spectral entropy of each table after cell-level noise at this budget.
    pub entropy: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub levels: Vec<SweepLevel>,
}

fn matrix_entropy(m: &DataMatrix, cfg: &FingerprintConfig) -> Result<f64> {
    let ds = fingerprint_descriptors(m, cfg, &Registry::default())?;
    ds.iter()
        .find(|d| d.scope == Scope::Matrix && d.measure == Measure::SvEntropy)
        .and_then(|d| match d.value {
            Value::Real(v) => Some(v),
            _ => None,
        })
        .ok_or_else(|| Error::DegenerateView("no spectral entropy for the table".into()))
}

fn sweep_level(
    datasets: &[(String, DataMatrix)],
    truth: &TruthPairs,
    cfg: &SweepConfig,
    eps: Option<f64>,
) -> Result<(DistanceMatrix, Dendrogram, Vec<usize>, f64, Vec<(String, f64)>)> {
    let fp_cfg = FingerprintConfig {
        dp_enabled: eps.is_some(),
        epsilon: eps.unwrap_or(cfg.fingerprint.epsilon),
        ..cfg.fingerprint.clone()
    };
    let entropy_cfg = FingerprintConfig {
        dp_level: DpLevel::Data,
        ..fp_cfg.clone()
    };
    let embedded = embed_all(datasets, &fp_cfg, &cfg.provider)?;
    let embs: Vec<EmbeddingMatrix> = embedded.into_iter().map(|(_, e)| e).collect();
    let dm = distance_matrix(&embs, &cfg.cca)?;
    let tree = ward_d2(&dm)?;
    let clusters = tree.cut(cfg.k_clusters.min(datasets.len()))?;
    let p_at_1 = if truth.pairs.is_empty() { f64::NAN } else { evaluate_twins(&dm, truth)?.p_at_1 };
    let entropy = datasets
        .par_iter()
        .map(|(id, m)| Ok((id.clone(), matrix_entropy(m, &entropy_cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((dm, tree, clusters, p_at_1, entropy))
}

/// Runs the pipeline once per privacy budget and compares each clustering
/// with the no-privacy one. With `out`, writes `results/<epsilon>/` under it.
pub fn run_dp_sweep(
    datasets: &[(String, DataMatrix)],
    truth: &TruthPairs,
    cfg: &SweepConfig,
    out: Option<&Path>,
) -> Result<SweepReport> {
    if datasets.len() < 2 {
        return Err(Error::Config("a sweep needs at least two tables".into()));
    }
    let mut eps_all = vec![None];
    eps_all.extend(cfg.epsilons.iter().copied().filter(Option::is_some));
    for e in eps_all.iter().flatten() {
        if !(*e > 0.0 && e.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {e}")));
        }
    }
    let runs = eps_all
        .par_iter()
        .map(|&e| sweep_level(datasets, truth, cfg, e))
        .collect::<Result<Vec<_>>>()?;
    let baseline = runs[0].2.clone();
    let mut levels = Vec::new();
    for (&eps, (distances, dendrogram, clusters, p_at_1, entropy)) in eps_all.iter().zip(runs) {
        if eps.is_none() && !cfg.epsilons.contains(&None) {
            continue;
        }
        levels.push(SweepLevel {
            epsilon: epsilon_label(eps),
            ari_vs_baseline: adjusted_rand_index(&baseline, &clusters)?,
            distances,
            dendrogram,
            clusters,
            p_at_1,
            entropy,
        });
    }
    let report = SweepReport { levels };
    if let Some(out) = out {
        write_sweep(&report, out)?;
    }
    Ok(report)
}

fn write_sweep(report: &SweepReport, out: &Path) -> Result<()> {
    let mut summary = Vec::new();
    for level in &report.levels {
        let dir = out.join("results").join(&level.epsilon);
        fs::create_dir_all(&dir)?;
        level.distances.write_csv(fs::File::create(dir.join("distances.csv"))?)?;
        fs::write(dir.join("dendrogram.nwk"), level.dendrogram.to_newick() + "\n")?;
        fs::write(dir.join("dendrogram.json"), level.dendrogram.to_json()? + "\n")?;
        let mut w = csv::Writer::from_writer(fs::File::create(dir.join("entropy.csv"))?);
        w.write_record(["dataset_id", "spectral_entropy"])?;
        for (id, h) in &level.entropy {
            w.write_record([id.clone(), h.to_string()])?;
        }
        w.flush()?;
        let clusters: BTreeMap<&str, usize> = level
            .distances
            .labels
            .iter()
            .map(String::as_str)
            .zip(level.clusters.iter().copied())
            .collect();
        fs::write(dir.join("clusters.json"), serde_json::to_string_pretty(&clusters)? + "\n")?;
        summary.push(serde_json::json!({
            "epsilon": level.epsilon,
            "ari_vs_baseline": level.ari_vs_baseline,
            "p_at_1": if level.p_at_1.is_nan() { serde_json::Value::Null } else { level.p_at_1.into() },
        }));
    }
    fs::write(out.join("results").join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}
