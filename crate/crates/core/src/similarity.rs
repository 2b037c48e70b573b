//! Canonical correlation similarity between embedding matrices, sparse
//! (penalized matrix decomposition) CCA, and alignment reports.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::serialize::Fingerprint;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentRule {
    /// `r = min` of the Gavish-Donoho ranks of the two views.
    #[default]
    MinGdRank,
    /// `r = min(M_a, M_b, d_e) - 1`.
    AlgTwoRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaConfig {
    /// Tikhonov ridge added to both within-view covariances.
    pub alpha: f64,
    pub component_rule: ComponentRule,
    pub seed: u64,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            component_rule: ComponentRule::MinGdRank,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    /// Leading `r` canonical correlations, nonincreasing, in `[0, 1]`.
    pub correlations: Vec<f64>,
    pub r: usize,
    pub similarity: f64,
    pub distance: f64,
}

/// Columns centred over embedding dimensions and scaled to unit length.
pub fn preprocess(e: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = e.clone();
    for mut c in x.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
        let n = c.norm();
        if n > 0.0 {
            c.unscale_mut(n);
        }
    }
    x
}

/// A preprocessed view with its thin SVD.
#[derive(Debug, Clone)]
pub struct View {
    pub x: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    pub gd_rank: usize,
}

impl View {
    pub fn new(e: &EmbeddingMatrix) -> Result<Self> {
        Self::from_matrix(&e.columns)
    }

    pub fn from_matrix(raw: &DMatrix<f64>) -> Result<Self> {
        let m = raw.ncols();
        if m < 2 {
            return Err(Error::DegenerateView(format!("{m} sentence(s); need at least 2")));
        }
        if raw.column_iter().all(|c| c == raw.column(0)) {
            return Err(Error::DegenerateView("all columns are identical".into()));
        }
        let x = preprocess(raw);
        let dec = spectral::svd(&x)?;
        let (_, gd_rank) = spectral::gavish_donoho_rank(&dec.sigma)?;
        Ok(Self {
            x,
            u: dec.u,
            sigma: dec.sigma,
            gd_rank,
        })
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    fn shrink(&self, alpha: f64) -> DVector<f64> {
        DVector::from_iterator(self.sigma.len(), self.sigma.iter().map(|s| s / (s * s + alpha).sqrt()))
    }
}

/// All canonical correlations of two views in ridge order.
///
/// Directions come from the ridge problem, whose whitened cross-covariance
/// reduces to `D_a U_a' U_b D_b` with `D = diag(s / sqrt(s^2 + alpha))`; the
/// values reported are the realized correlations of the canonical variates.
pub fn canonical_correlations(a: &View, b: &View, alpha: f64) -> Result<Vec<f64>> {
    if a.x.nrows() != b.x.nrows() {
        return Err(Error::DimMismatch {
            expected: a.x.nrows(),
            got: b.x.nrows(),
        });
    }
    let da = a.shrink(alpha);
    let db = b.shrink(alpha);
    let core = DMatrix::from_diagonal(&da) * a.u.transpose() * &b.u * DMatrix::from_diagonal(&db);
    let dec = spectral::svd(&core)?;
    let k = dec.sigma.len();
    let mut out = Vec::with_capacity(k);
    for l in 0..k {
        let na = da.component_mul(&dec.u.column(l)).norm();
        let nb = db.component_mul(&dec.v.column(l)).norm();
        let rho = if na > 1e-150 && nb > 1e-150 {
            dec.sigma[l] / (na * nb)
        } else {
            0.0
        };
        out.push(rho.clamp(0.0, 1.0));
    }
    Ok(out)
}

pub fn component_count(a: &View, b: &View, rule: ComponentRule) -> usize {
    let r = match rule {
        ComponentRule::MinGdRank => a.gd_rank.min(b.gd_rank),
        ComponentRule::AlgTwoRule => a.m().min(b.m()).min(a.x.nrows()).saturating_sub(1),
    };
    r.max(1)
}

pub fn cca_views(a: &View, b: &View, cfg: &CcaConfig) -> Result<CcaResult> {
    let all = canonical_correlations(a, b, cfg.alpha)?;
    let r = component_count(a, b, cfg.component_rule).min(all.len());
    let mut correlations = all[..r].to_vec();
    correlations.sort_by(|x, y| y.total_cmp(x));
    let similarity = correlations.iter().sum::<f64>() / r as f64;
    Ok(CcaResult {
        correlations,
        r,
        similarity,
        distance: (1.0 - similarity).clamp(0.0, 1.0),
    })
}

pub fn cca_similarity(a: &EmbeddingMatrix, b: &EmbeddingMatrix, cfg: &CcaConfig) -> Result<CcaResult> {
    if a.d_e() != b.d_e() {
        return Err(Error::DimMismatch {
            expected: a.d_e(),
            got: b.d_e(),
        });
    }
    cca_views(&View::new(a)?, &View::new(b)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub d: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.d) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let labels: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut d = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.get(0) != labels.get(i).map(String::as_str) {
                return Err(Error::format("distance matrix", format!("row {i} label does not match the header")));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::format("distance matrix", e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != labels.len() {
                return Err(Error::format("distance matrix", format!("row {i} has {} entries", row.len())));
            }
            d.push(row);
        }
        if d.len() != labels.len() {
            return Err(Error::format("distance matrix", "not square"));
        }
        Ok(Self { labels, d })
    }
}

/// Pairwise CCA distances; computed for `i < j` and mirrored.
pub fn distance_matrix(catalog: &[EmbeddingMatrix], cfg: &CcaConfig) -> Result<DistanceMatrix> {
    if catalog.len() < 2 {
        return Err(Error::Config("a distance matrix needs at least two datasets".into()));
    }
    let first = &catalog[0];
    for e in &catalog[1..] {
        if e.provider_tag != first.provider_tag {
            return Err(Error::ProviderMismatch {
                expected: first.provider_tag.clone(),
                got: e.provider_tag.clone(),
            });
        }
        if e.d_e() != first.d_e() {
            return Err(Error::DimMismatch {
                expected: first.d_e(),
                got: e.d_e(),
            });
        }
    }
    let views = catalog.par_iter().map(View::new).collect::<Result<Vec<_>>>()?;
    let n = catalog.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| cca_views(&views[i], &views[j], cfg).map(|r| r.distance))
        .collect::<Result<Vec<f64>>>()?;
    let mut d = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(dists) {
        d[i][j] = v;
        d[j][i] = v;
    }
    Ok(DistanceMatrix {
        labels: catalog.iter().map(|e| e.dataset_id.clone()).collect(),
        d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCcaComponent {
    /// 1-based.
    pub order: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub rho: f64,
    /// Effective l1 fractions: `|u|_1 <= penalty_u * sqrt(M_a)`.
    pub penalty_u: f64,
    pub penalty_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseCcaConfig {
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SparseCcaConfig {
    fn default() -> Self {
        Self {
            n_init: 5,
            max_iter: 500,
            tol: 1e-10,
            seed: 42,
        }
    }
}

fn soft_threshold(z: &DVector<f64>, delta: f64) -> DVector<f64> {
    z.map(|v| v.signum() * (v.abs() - delta).max(0.0))
}

/// Unit vector in the direction of `S(z, delta)` with `|.|_1 <= bound`,
/// `delta` found by bisection.
pub fn l1_project(z: &DVector<f64>, bound: f64) -> DVector<f64> {
    let n = z.norm();
    if n == 0.0 {
        return z.clone();
    }
    if z.lp_norm(1) / n <= bound {
        return z / n;
    }
    if bound <= 1.0 {
        return basis(z);
    }
    let ratio = |x: &DVector<f64>| {
        let n = x.norm();
        if n == 0.0 {
            0.0
        } else {
            x.lp_norm(1) / n
        }
    };
    let (mut lo, mut hi) = (0.0, z.amax());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(&soft_threshold(z, mid)) > bound {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * z.amax() {
            break;
        }
    }
    let s = soft_threshold(z, hi);
    let sn = s.norm();
    if sn > 0.0 {
        return s / sn;
    }
    basis(z)
}

/// Signed unit vector at the first largest entry of `z`.
fn basis(z: &DVector<f64>) -> DVector<f64> {
    let k = z.iamax();
    let mut e = DVector::zeros(z.len());
    e[k] = z[k].signum();
    e
}

fn penalty_bound(c: f64, m: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InfeasiblePenalty(c));
    }
    let b = c * (m as f64).sqrt();
    if b < 1.0 {
        log::debug!("penalty fraction {c} admits no unit vector for {m} variables; clamped to 1/sqrt({m})");
    }
    Ok(b.max(1.0))
}

fn variate_correlation(x: &DMatrix<f64>, y: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let a = x * u;
    let b = y * v;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Penalized matrix decomposition of `X'Y` with l1 bounds on both sides,
/// deflating both views after each component.
pub fn sparse_cca_views(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    penalty_u: f64,
    penalty_v: f64,
    n_components: usize,
    cfg: &SparseCcaConfig,
) -> Result<Vec<SparseCcaComponent>> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimMismatch {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    if n_components == 0 {
        return Err(Error::Config("at least one component is required".into()));
    }
    let (ma, mb) = (x.ncols(), y.ncols());
    let bu = penalty_bound(penalty_u, ma)?;
    let bv = penalty_bound(penalty_v, mb)?;
    let mut x = x.clone();
    let mut y = y.clone();
    let mut out = Vec::with_capacity(n_components);
    for order in 1..=n_components {
        let z = x.transpose() * &y;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(order as u64));
        let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
        for _ in 0..cfg.n_init {
            let mut v = DVector::from_fn(mb, |_, _| StandardNormal.sample(&mut rng));
            v /= v.norm();
            let mut u = l1_project(&(&z * &v), bu);
            for _ in 0..cfg.max_iter {
                let v_new = l1_project(&(z.transpose() * &u), bv);
                let u_new = l1_project(&(&z * &v_new), bu);
                let change = (&u_new - &u).amax().max((&v_new - &v).amax());
                u = u_new;
                v = v_new;
                if change < cfg.tol {
                    break;
                }
            }
            let rho = variate_correlation(&x, &y, &u, &v);
            if best.as_ref().is_none_or(|b| rho > b.0) {
                best = Some((rho, u, v));
            }
        }
        let (rho, u, v) = best.expect("at least one initialization");
        // rank-one deflation of each view along its weight vector
        let xu = &x * &u;
        x -= &xu * u.transpose();
        let yv = &y * &v;
        y -= &yv * v.transpose();
        out.push(SparseCcaComponent {
            order,
            u: u.iter().copied().collect(),
            v: v.iter().copied().collect(),
            rho,
            penalty_u: bu / (ma as f64).sqrt(),
            penalty_v: bv / (mb as f64).sqrt(),
        });
    }
    Ok(out)
}

pub fn sparse_cca(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    penalty_u: f64,
    penalty_v: f64,
    n_components: usize,
    cfg: &SparseCcaConfig,
) -> Result<Vec<SparseCcaComponent>> {
    sparse_cca_views(
        &preprocess(&a.columns),
        &preprocess(&b.columns),
        penalty_u,
        penalty_v,
        n_components,
        cfg,
    )
}

pub const DEFAULT_PENALTY_GRID: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];

/// Significance level below which no grid point counts as real signal.
const Z_SIGNIFICANT: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySelection {
    pub penalty_u: f64,
    pub penalty_v: f64,
    /// `(fraction, real rho, z-score)` per grid point.
    pub scores: Vec<(f64, f64, f64)>,
}

fn fisher_z(r: f64) -> f64 {
    r.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
}

/// Chooses a common penalty fraction by comparing the first-component
/// correlation with its distribution under row permutations of `b`.
pub fn permutation_penalty(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    n_perm: usize,
    grid: &[f64],
    cfg: &SparseCcaConfig,
) -> Result<PenaltySelection> {
    if n_perm < 10 {
        return Err(Error::Config(format!("need at least 10 permutations, got {n_perm}")));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty penalty grid".into()));
    }
    let x = preprocess(&a.columns);
    let y = preprocess(&b.columns);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let perms: Vec<Vec<usize>> = (0..n_perm)
        .map(|_| {
            let mut p: Vec<usize> = (0..y.nrows()).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let permuted: Vec<DMatrix<f64>> = perms.iter().map(|p| y.select_rows(p.iter())).collect();
    let one = SparseCcaConfig { ..*cfg };
    let mut scores = Vec::with_capacity(grid.len());
    for &c in grid {
        let real = sparse_cca_views(&x, &y, c, c, 1, &one)?[0].rho;
        let null = permuted
            .par_iter()
            .map(|yp| sparse_cca_views(&x, yp, c, c, 1, &one).map(|r| fisher_z(r[0].rho)))
            .collect::<Result<Vec<f64>>>()?;
        let mean = null.iter().sum::<f64>() / null.len() as f64;
        let sd = (null.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64).sqrt();
        let score = (fisher_z(real) - mean) / sd.max(1e-12);
        scores.push((c, real, score));
    }
    // smallest support wins ties and the no-signal case
    let best = scores.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let pick = if best < Z_SIGNIFICANT {
        scores.iter().min_by(|p, q| p.0.total_cmp(&q.0)).unwrap().0
    } else {
        scores
            .iter()
            .filter(|s| s.2 >= best - 1e-9)
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .unwrap()
            .0
    };
    Ok(PenaltySelection {
        penalty_u: pick,
        penalty_v: pick,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedVariable {
    pub variable: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedComponent {
    pub order: usize,
    pub rho: f64,
    pub side_a: Vec<WeightedVariable>,
    pub side_b: Vec<WeightedVariable>,
    /// Set when a weight vector is entirely zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub pair: (String, String),
    pub components: Vec<AlignedComponent>,
}

fn aggregate(weights: &[f64], fp: &Fingerprint) -> Result<Vec<WeightedVariable>> {
    if weights.len() != fp.len() {
        return Err(Error::IndexOutOfRange {
            index: weights.len(),
            len: fp.len(),
        });
    }
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for (w, s) in weights.iter().zip(&fp.sentences) {
        if *w != 0.0 {
            *sums.entry(s.variable.as_str()).or_default() += w.abs();
        }
    }
    let mut out: Vec<WeightedVariable> = sums
        .into_iter()
        .map(|(variable, weight)| WeightedVariable {
            variable: variable.to_string(),
            weight,
        })
        .collect();
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.variable.cmp(&b.variable)));
    Ok(out)
}

/// Maps nonzero sparse weights to the variable tokens of their sentences.
pub fn explain_alignment(components: &[SparseCcaComponent], fp_a: &Fingerprint, fp_b: &Fingerprint) -> Result<AlignmentReport> {
    let components = components
        .iter()
        .map(|c| {
            let side_a = aggregate(&c.u, fp_a)?;
            let side_b = aggregate(&c.v, fp_b)?;
            Ok(AlignedComponent {
                order: c.order,
                rho: c.rho,
                degenerate: side_a.is_empty() || side_b.is_empty(),
                side_a,
                side_b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentReport {
        pair: (fp_a.dataset_id.clone(), fp_b.dataset_id.clone()),
        components,
    })
}
