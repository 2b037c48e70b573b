//! SCAD-penalized least squares by coordinate descent, with the penalty
//! chosen by K-fold cross-validation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats;

pub const DEFAULT_A: f64 = 3.7;
const N_LAMBDA: usize = 50;
const N_FOLDS: usize = 5;

/// Univariate SCAD solution for a standardized predictor with least-squares
/// estimate `z`.
pub fn scad_threshold(z: f64, lambda: f64, a: f64) -> f64 {
    let az = z.abs();
    let soft = |t: f64| z.signum() * (az - t).max(0.0);
    if az <= 2.0 * lambda {
        soft(lambda)
    } else if az <= a * lambda {
        soft(a * lambda / (a - 1.0)) / (1.0 - 1.0 / (a - 1.0))
    } else {
        z
    }
}

/// Coordinate descent for `1/(2n) |y - X b|^2 + sum SCAD(|b_j|)`.
///
/// Columns of `x` must be centred with `x_j' x_j / n = 1`; `y` centred.
/// `beta` is the warm start and receives the solution.
pub fn scad_coordinate_descent(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    a: f64,
    beta: &mut [f64],
    tol: f64,
    max_sweeps: usize,
) -> usize {
    let (n, p) = x.shape();
    let nf = n as f64;
    let mut r: Vec<f64> = y.to_vec();
    for j in 0..p {
        if beta[j] != 0.0 {
            for i in 0..n {
                r[i] -= x[(i, j)] * beta[j];
            }
        }
    }
    for sweep in 1..=max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let col = x.column(j);
            let z = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nf + beta[j];
            let new = scad_threshold(z, lambda, a);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (ri, xi) in r.iter_mut().zip(col.iter()) {
                    *ri -= delta * xi;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            return sweep;
        }
    }
    max_sweeps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScadFit {
    /// Index of the response column.
    pub response: usize,
    /// Predictor column indices, aligned with `coefficients`.
    pub predictors: Vec<usize>,
    /// Standardized-scale coefficients; exact zeros off the support.
    pub coefficients: Vec<f64>,
    pub lambda_selected: f64,
    pub cv_error: f64,
    /// Set when a zero-variance column was skipped.
    pub degenerate: bool,
}

impl ScadFit {
    pub fn support(&self) -> Vec<usize> {
        self.predictors
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(p, _)| *p)
            .collect()
    }
}

struct Standardized {
    x: DMatrix<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
}

fn pop_sd(v: &[f64], mean: f64) -> f64 {
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn standardize(cols: &[&[f64]], y: &[f64], rows: &[usize]) -> Option<Standardized> {
    let n = rows.len();
    let take = |c: &[f64]| rows.iter().map(|&i| c[i]).collect::<Vec<f64>>();
    let yr = take(y);
    let y_mean = stats::mean(&yr);
    let y_sd = pop_sd(&yr, y_mean);
    if !(y_sd > 0.0) {
        return None;
    }
    let mut x = DMatrix::zeros(n, cols.len());
    let mut x_mean = Vec::with_capacity(cols.len());
    let mut x_sd = Vec::with_capacity(cols.len());
    for (j, c) in cols.iter().enumerate() {
        let v = take(c);
        let m = stats::mean(&v);
        let s = pop_sd(&v, m);
        if !(s > 0.0) {
            return None;
        }
        for i in 0..n {
            x[(i, j)] = (v[i] - m) / s;
        }
        x_mean.push(m);
        x_sd.push(s);
    }
    Some(Standardized {
        x,
        y: yr.iter().map(|v| (v - y_mean) / y_sd).collect(),
        x_mean,
        x_sd,
        y_mean,
        y_sd,
    })
}

fn lambda_grid(s: &Standardized) -> Vec<f64> {
    let (n, p) = s.x.shape();
    let lmax = (0..p)
        .map(|j| s.x.column(j).iter().zip(&s.y).map(|(a, b)| a * b).sum::<f64>().abs() / n as f64)
        .fold(0.0, f64::max);
    let ratio: f64 = if n > p { 1e-3 } else { 0.05 };
    (0..N_LAMBDA)
        .map(|k| lmax * ratio.powf(k as f64 / (N_LAMBDA - 1) as f64))
        .collect()
}

const CD_TOL: f64 = 1e-9;
const CD_SWEEPS: usize = 1000;

/// SCAD fit of `y` on `predictors` with lambda chosen by 5-fold CV under the
/// one-standard-error rule: the largest lambda whose mean CV error is within
/// one standard error of the minimum.
///
/// Returns `None` when the response or a predictor has zero variance.
pub fn scad_cv(predictors: &[&[f64]], y: &[f64], a: f64, seed: u64) -> Option<(Vec<f64>, f64, f64)> {
    let n = y.len();
    let all: Vec<usize> = (0..n).collect();
    let full = standardize(predictors, y, &all)?;
    let grid = lambda_grid(&full);
    let p = predictors.len();

    let mut order = all.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_errors: Vec<Vec<f64>> = Vec::with_capacity(N_FOLDS);
    for fold in 0..N_FOLDS {
        let test: Vec<usize> = order.iter().skip(fold).step_by(N_FOLDS).copied().collect();
        let train: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(k, _)| k % N_FOLDS != fold)
            .map(|(_, &i)| i)
            .collect();
        let Some(tr) = standardize(predictors, y, &train) else {
            continue;
        };
        let mut errors = vec![0.0; grid.len()];
        let mut beta = vec![0.0; p];
        for (k, &lambda) in grid.iter().enumerate() {
            scad_coordinate_descent(&tr.x, &tr.y, lambda, a, &mut beta, CD_TOL, CD_SWEEPS);
            let mut sse = 0.0;
            for &i in &test {
                let mut pred = 0.0;
                for j in 0..p {
                    pred += beta[j] * (predictors[j][i] - tr.x_mean[j]) / tr.x_sd[j];
                }
                let pred = tr.y_mean + tr.y_sd * pred;
                // squared error on the full-data standardized scale
                sse += ((y[i] - pred) / full.y_sd).powi(2);
            }
            errors[k] = sse / test.len() as f64;
        }
        fold_errors.push(errors);
    }
    if fold_errors.is_empty() {
        return None;
    }
    let folds = fold_errors.len() as f64;
    let mean: Vec<f64> = (0..grid.len()).map(|k| fold_errors.iter().map(|e| e[k]).sum::<f64>() / folds).collect();
    // ties go to the larger (sparser) lambda, which comes first
    let min_k = (0..grid.len()).fold(0, |b, k| if mean[k] < mean[b] { k } else { b });
    let se = if fold_errors.len() > 1 {
        let var = fold_errors.iter().map(|e| (e[min_k] - mean[min_k]).powi(2)).sum::<f64>() / (folds - 1.0);
        (var / folds).sqrt()
    } else {
        0.0
    };
    let best = (0..=min_k).find(|&k| mean[k] <= mean[min_k] + se).unwrap_or(min_k);
    let mut beta = vec![0.0; p];
    for &lambda in &grid[..=best] {
        scad_coordinate_descent(&full.x, &full.y, lambda, a, &mut beta, CD_TOL, CD_SWEEPS);
    }
    Some((beta, grid[best], mean[best]))
}

/// Regresses every column on all the others.
pub fn scad_importance(columns: &[Vec<f64>], a: f64, seed: u64) -> Vec<ScadFit> {
    let p = columns.len();
    if p < 2 || columns[0].len() < 10 {
        return Vec::new();
    }
    let varies = |c: &[f64]| {
        let m = stats::mean(c);
        pop_sd(c, m) > 0.0
    };
    (0..p)
        .map(|response| {
            let mut degenerate = false;
            let predictors: Vec<usize> = (0..p)
                .filter(|&j| j != response)
                .filter(|&j| {
                    let ok = varies(&columns[j]);
                    degenerate |= !ok;
                    ok
                })
                .collect();
            let xs: Vec<&[f64]> = predictors.iter().map(|&j| columns[j].as_slice()).collect();
            let fit = if predictors.is_empty() {
                None
            } else {
                scad_cv(&xs, &columns[response], a, seed.wrapping_add(response as u64))
            };
            match fit {
                Some((coefficients, lambda_selected, cv_error)) => ScadFit {
                    response,
                    predictors,
                    coefficients,
                    lambda_selected,
                    cv_error,
                    degenerate,
                },
                None => {
                    log::debug!("SCAD fit for column {response} skipped: degenerate design");
                    ScadFit {
                        response,
                        coefficients: vec![0.0; predictors.len()],
                        predictors,
                        lambda_selected: f64::NAN,
                        cv_error: f64::NAN,
                        degenerate: true,
                    }
                }
            }
        })
        .collect()
}
