//! Singular value utilities: thin SVD, soft-impute completion, Gavish-Donoho
//! rank estimation and the matrix-level norm and spectrum descriptors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Gavish-Donoho hard-threshold multiplier on the median singular value.
pub const GD_MULTIPLIER: f64 = 2.858;

/// Finite stand-in for the condition number of a singular matrix.
pub const CONDITION_SENTINEL: f64 = 1e18;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `n x r`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Nonincreasing, length `r = min(n, p)`.
    pub sigma: Vec<f64>,
    /// `p x r`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Thin SVD with singular values sorted nonincreasing.
pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let r = m.nrows().min(m.ncols());
    let dec = m.clone().svd(true, true);
    let u = dec.u.expect("u requested");
    let vt = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let sigma = order.iter().map(|&k| dec.singular_values[k].max(0.0)).collect();
    let u = DMatrix::from_fn(m.nrows(), r, |i, k| u[(i, order[k])]);
    let v = DMatrix::from_fn(m.ncols(), r, |j, k| vt[(order[k], j)]);
    Ok(SvdResult { u, sigma, v })
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut s: Vec<f64> = m.singular_values().iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct SoftImputeConfig {
    /// Absolute, decreasing thresholds. `None` uses [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// `sigma1 * {0.5, 0.25, ...}` down to `sigma1 * 1e-4`.
pub fn default_lambda_grid(sigma1: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut f = 0.5;
    while f > 1e-4 {
        grid.push(sigma1 * f);
        f *= 0.5;
    }
    grid.push(sigma1 * 1e-4);
    grid
}

#[derive(Debug, Clone)]
pub struct ImputeResult {
    pub completed: DMatrix<f64>,
    pub iterations: usize,
    pub final_delta: f64,
    /// False when some stage hit `max_iter` before reaching `tol`.
    pub converged: bool,
    /// Objective `0.5 |P_obs(X - Z)|_F^2 + lambda |Z|_*` per lambda stage,
    /// starting with the warm start of that stage.
    pub objective_trace: Vec<(f64, Vec<f64>)>,
}

fn soft_threshold_svd(w: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut dec = svd(w)?;
    let mut nuclear = 0.0;
    for s in dec.sigma.iter_mut() {
        *s = (*s - lambda).max(0.0);
        nuclear += *s;
    }
    Ok((dec.reconstruct(), nuclear))
}

fn objective(x: &DMatrix<f64>, observed: &DMatrix<bool>, z: &DMatrix<f64>, lambda: f64, nuclear: f64) -> f64 {
    let mut fit = 0.0;
    for ((a, b), &o) in x.iter().zip(z.iter()).zip(observed.iter()) {
        if o {
            fit += (a - b).powi(2);
        }
    }
    0.5 * fit + lambda * nuclear
}

/// Soft-impute matrix completion.
///
/// Iterates `Z <- S_lambda(P_obs(X) + P_miss(Z))` along a decreasing lambda
/// path with warm starts. Observed entries of the output are the inputs,
/// bit for bit. Entries of `x` at unobserved positions are ignored.
pub fn soft_impute(x: &DMatrix<f64>, observed: &DMatrix<bool>, cfg: &SoftImputeConfig) -> Result<ImputeResult> {
    let (n, p) = x.shape();
    assert_eq!(observed.shape(), (n, p));
    let mut col_means = vec![0.0; p];
    for j in 0..p {
        let obs: Vec<f64> = (0..n).filter(|&i| observed[(i, j)]).map(|i| x[(i, j)]).collect();
        if obs.is_empty() {
            return Err(Error::AllMissingColumn(format!("#{j}")));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        col_means[j] = stats::mean(&obs);
    }
    if observed.iter().all(|&o| o) {
        return Ok(ImputeResult {
            completed: x.clone(),
            iterations: 0,
            final_delta: 0.0,
            converged: true,
            objective_trace: Vec::new(),
        });
    }
    let projected = DMatrix::from_fn(n, p, |i, j| if observed[(i, j)] { x[(i, j)] } else { 0.0 });
    let grid = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(singular_values(&projected)?[0]),
    };
    let fill = |z: &DMatrix<f64>| DMatrix::from_fn(n, p, |i, j| if observed[(i, j)] { x[(i, j)] } else { z[(i, j)] });

    // warm start: column means in the holes
    let mut z = DMatrix::from_fn(n, p, |i, j| if observed[(i, j)] { x[(i, j)] } else { col_means[j] });
    let mut z_nuclear = singular_values(&z)?.iter().sum::<f64>();
    let mut iterations = 0;
    let mut final_delta = f64::INFINITY;
    let mut converged = true;
    let mut trace = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let mut objs = vec![objective(x, observed, &z, lambda, z_nuclear)];
        let mut stage_converged = false;
        for _ in 0..cfg.max_iter {
            let (z_new, nuclear) = soft_threshold_svd(&fill(&z), lambda)?;
            let denom = z.norm().max(f64::MIN_POSITIVE);
            final_delta = (&z_new - &z).norm() / denom;
            z = z_new;
            z_nuclear = nuclear;
            iterations += 1;
            objs.push(objective(x, observed, &z, lambda, z_nuclear));
            if final_delta < cfg.tol {
                stage_converged = true;
                break;
            }
        }
        converged &= stage_converged;
        trace.push((lambda, objs));
    }
    if !converged {
        log::warn!("soft-impute did not reach tolerance {} (last delta {final_delta:e})", cfg.tol);
    }
    Ok(ImputeResult {
        completed: fill(&z),
        iterations,
        final_delta,
        converged,
        objective_trace: trace,
    })
}

/// Threshold `tau = 2.858 * median(sigma)` and rank `#{sigma_k > tau}`.
pub fn gavish_donoho_rank(sigma: &[f64]) -> Result<(f64, usize)> {
    if sigma.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let tau = GD_MULTIPLIER * stats::median(sigma);
    Ok((tau, sigma.iter().filter(|&&s| s > tau).count()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    /// Induced 1-norm: largest absolute column sum.
    pub l1: f64,
    pub frobenius: f64,
    /// Induced infinity-norm: largest absolute row sum.
    pub infinity: f64,
    pub max_modulus: f64,
}

pub fn matrix_norms(m: &DMatrix<f64>) -> MatrixNorms {
    let l1 = m
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let infinity = m
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    MatrixNorms {
        l1,
        frobenius: m.norm(),
        infinity,
        max_modulus: m.amax(),
    }
}

/// Weights behind the singular value entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EntropyWeights {
    /// `p_k = sigma_k^2 / sum sigma^2`
    #[default]
    Energy,
    /// `p_k = sigma_k / sum sigma`
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub numerical_rank: usize,
    pub threshold: f64,
    pub spectral_norm: f64,
    pub condition_number: f64,
    pub frobenius_norm: f64,
    pub nuclear_norm: f64,
    pub sv_entropy: f64,
    pub median_gap: f64,
    pub max_gap: f64,
}

/// Base-2 Shannon entropy of the normalized spectrum.
pub fn spectral_entropy(sigma: &[f64], weights: EntropyWeights) -> f64 {
    let w: Vec<f64> = match weights {
        EntropyWeights::Energy => sigma.iter().map(|s| s * s).collect(),
        EntropyWeights::Magnitude => sigma.to_vec(),
    };
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    w.iter().filter(|&&v| v > 0.0).fold(0.0, |h, v| {
        let q = v / total;
        h - q * q.log2()
    })
}

pub fn spectral_descriptors(sigma: &[f64], weights: EntropyWeights) -> Result<SpectralSummary> {
    let (threshold, numerical_rank) = gavish_donoho_rank(sigma)?;
    let s1 = sigma[0];
    let smin = *sigma.last().unwrap();
    let condition_number = if s1 <= 0.0 || smin <= s1 * 1e-14 {
        CONDITION_SENTINEL
    } else {
        (s1 / smin).min(CONDITION_SENTINEL)
    };
    let gaps: Vec<f64> = sigma.windows(2).map(|w| w[0] - w[1]).collect();
    let (median_gap, max_gap) = if gaps.is_empty() {
        (0.0, 0.0)
    } else {
        (stats::median(&gaps), gaps.iter().cloned().fold(f64::MIN, f64::max))
    };
    Ok(SpectralSummary {
        numerical_rank,
        threshold,
        spectral_norm: s1,
        condition_number,
        frobenius_norm: sigma.iter().map(|s| s * s).sum::<f64>().sqrt(),
        nuclear_norm: sigma.iter().sum(),
        sv_entropy: spectral_entropy(sigma, weights),
        median_gap,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn svd_of_diagonals() {
        assert_eq!(svd(&DMatrix::identity(3, 3)).unwrap().sigma, vec![1.0, 1.0, 1.0]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let s = svd(&d).unwrap().sigma;
        for (a, b) in s.iter().zip([3.0, 2.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn svd_orthogonality_and_reconstruction() {
        for (n, p) in [(6, 4), (4, 6)] {
            let m = random(n, p, 42);
            let d = svd(&m).unwrap();
            let r = n.min(p);
            assert!((d.u.transpose() * &d.u - DMatrix::identity(r, r)).amax() < 1e-8);
            assert!((d.v.transpose() * &d.v - DMatrix::identity(r, r)).amax() < 1e-8);
            assert!((d.reconstruct() - &m).norm() / m.norm() < 1e-8);
            assert!(d.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn gd_direct_formula() {
        let (tau, r) = gavish_donoho_rank(&[10.0, 3.0, 1.0, 0.5, 0.1]).unwrap();
        assert_abs_diff_eq!(tau, 2.858, epsilon = 1e-12);
        assert_eq!(r, 2);
        assert_eq!(gavish_donoho_rank(&[1.0, 1.0, 1.0]).unwrap().1, 0);
        assert!(matches!(gavish_donoho_rank(&[]), Err(Error::EmptySpectrum)));
    }

    #[test]
    fn matrix_norm_hand_values() {
        let i = DMatrix::<f64>::identity(2, 2);
        let n = matrix_norms(&i);
        assert_eq!((n.l1, n.infinity, n.max_modulus), (1.0, 1.0, 1.0));
        assert_abs_diff_eq!(n.frobenius, 2f64.sqrt(), epsilon = 1e-15);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        let n = matrix_norms(&m);
        assert_eq!((n.l1, n.infinity, n.max_modulus), (6.0, 7.0, 4.0));
        assert_abs_diff_eq!(n.frobenius, 30f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn frobenius_matches_spectrum() {
        let m = random(5, 5, 7);
        let s = singular_values(&m).unwrap();
        assert_abs_diff_eq!(
            matrix_norms(&m).frobenius.powi(2),
            s.iter().map(|v| v * v).sum::<f64>(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(spectral_entropy(&[2.0, 0.0], EntropyWeights::Energy), 0.0);
        assert_abs_diff_eq!(spectral_entropy(&[3.0, 3.0], EntropyWeights::Energy), 1.0, epsilon = 1e-15);
        let sd = spectral_descriptors(&[4.0, 3.0, 3.0, 1.0], EntropyWeights::Energy).unwrap();
        assert_eq!(sd.spectral_norm, 4.0);
        assert_eq!(sd.condition_number, 4.0);
        assert_eq!(sd.nuclear_norm, 11.0);
        assert_eq!(sd.max_gap, 2.0);
        assert_eq!(sd.median_gap, 1.0);
        let singular = spectral_descriptors(&[2.0, 0.0], EntropyWeights::Energy).unwrap();
        assert_eq!(singular.condition_number, CONDITION_SENTINEL);
    }

    #[test]
    fn soft_impute_complete_matrix_is_fixed_point() {
        let m = random(6, 3, 1);
        let obs = DMatrix::from_element(6, 3, true);
        let r = soft_impute(&m, &obs, &SoftImputeConfig::default()).unwrap();
        assert_eq!(r.completed, m);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn soft_impute_rejects_empty_column() {
        let m = random(4, 2, 1);
        let mut obs = DMatrix::from_element(4, 2, true);
        for i in 0..4 {
            obs[(i, 1)] = false;
        }
        assert!(matches!(
            soft_impute(&m, &obs, &SoftImputeConfig::default()),
            Err(Error::AllMissingColumn(_))
        ));
    }

    #[test]
    fn soft_impute_recovers_rank_one_entry() {
        let a = [1.0, 2.0, -1.0, 0.5, 3.0];
        let b = [2.0, -1.0, 1.5, 1.0, 0.5];
        let m = DMatrix::from_fn(5, 5, |i, j| a[i] * b[j]);
        let mut obs = DMatrix::from_element(5, 5, true);
        obs[(2, 3)] = false;
        let s1 = singular_values(&m).unwrap()[0];
        let mut grid = default_lambda_grid(s1);
        grid.push(1e-6);
        let cfg = SoftImputeConfig {
            lambda_grid: Some(grid),
            max_iter: 2000,
            ..Default::default()
        };
        let r = soft_impute(&m, &obs, &cfg).unwrap();
        assert!((r.completed[(2, 3)] - m[(2, 3)]).abs() < 1e-3, "{}", r.completed[(2, 3)]);
        for (idx, &o) in obs.iter().enumerate() {
            if o {
                assert_eq!(r.completed.as_slice()[idx], m.as_slice()[idx]);
            }
        }
    }
}
