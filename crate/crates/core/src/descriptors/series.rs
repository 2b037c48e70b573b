//! Sequential descriptors: lag-1 autoregression, index trend, ACF/PACF
//! significance and the dominant Fourier component.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    /// OLS slope of `x_t` on `x_{t-1}`; `None` for a constant lagged series.
    pub ar1_coeff: Option<f64>,
    /// OLS slope of `x_i` on `i`.
    pub index_slope: f64,
}

pub fn ar1_and_trend(x: &[f64]) -> Result<Trend> {
    if x.len() < 3 {
        return Err(Error::TooShort { len: x.len(), min: 3 });
    }
    let idx: Vec<f64> = (1..=x.len()).map(|i| i as f64).collect();
    Ok(Trend {
        ar1_coeff: stats::ols_slope(&x[..x.len() - 1], &x[1..]),
        index_slope: stats::ols_slope(&idx, x).expect("index is never constant"),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagSets {
    /// `acf[h - 1]` is the lag-`h` autocorrelation.
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
    pub acf_lags: Vec<usize>,
    pub pacf_lags: Vec<usize>,
    pub constant: bool,
}

pub fn default_max_lag(n: usize) -> usize {
    (n / 4).clamp(1, 40).min(n.saturating_sub(1)).max(1)
}

/// Biased sample autocorrelations for lags `1..=max_lag`, or `None` when the
/// series has no variance.
pub fn acf(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let m = stats::mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0: f64 = d.iter().map(|v| v * v).sum();
    if c0 <= 0.0 {
        return None;
    }
    Some(
        (1..=max_lag)
            .map(|h| d.iter().zip(&d[h..]).map(|(a, b)| a * b).sum::<f64>() / c0)
            .collect(),
    )
}

/// Partial autocorrelations by the Durbin-Levinson recursion.
pub fn pacf_from_acf(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(r.len());
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=r.len() {
        let num = r[k - 1] - (1..k).map(|j| phi[j - 1] * r[k - j - 1]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * r[j - 1]).sum::<f64>();
        if den.abs() < 1e-12 {
            // perfectly predictable from earlier lags
            out.resize(r.len(), 0.0);
            break;
        }
        let pkk = num / den;
        let prev = phi.clone();
        for j in 1..k {
            phi[j - 1] = prev[j - 1] - pkk * prev[k - j - 1];
        }
        phi.push(pkk);
        out.push(pkk);
    }
    out
}

/// Lags whose ACF / PACF magnitude exceeds the white-noise band `1.96 / sqrt(n)`.
pub fn acf_significant_lags(x: &[f64], max_lag: Option<usize>) -> Result<LagSets> {
    let n = x.len();
    let max_lag = max_lag.unwrap_or_else(|| default_max_lag(n));
    if max_lag == 0 || n <= max_lag {
        return Err(Error::TooShort { len: n, min: max_lag + 1 });
    }
    let Some(r) = acf(x, max_lag) else {
        return Ok(LagSets {
            constant: true,
            ..Default::default()
        });
    };
    let p = pacf_from_acf(&r);
    let band = 1.96 / (n as f64).sqrt();
    let sig = |v: &[f64]| {
        v.iter()
            .enumerate()
            .filter(|(_, c)| c.abs() > band)
            .map(|(h, _)| h + 1)
            .collect()
    };
    Ok(LagSets {
        acf_lags: sig(&r),
        pacf_lags: sig(&p),
        acf: r,
        pacf: p,
        constant: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dominant {
    /// Cycles per series length, excluding the DC term.
    pub frequency: usize,
    /// `atan2(im, re)` of the dominant coefficient, radians.
    pub phase: f64,
    pub magnitude: f64,
}

/// Dominant Fourier component of the mean-removed series; `None` for a
/// constant series.
pub fn fft_dominant(x: &[f64]) -> Result<Option<Dominant>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooShort { len: n, min: 4 });
    }
    let m = stats::mean(x);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale: f64 = x.iter().map(|v| (v - m).abs()).sum();
    let mut best: Option<Dominant> = None;
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let mag = c.norm();
        if best.is_none_or(|b| mag > b.magnitude) {
            best = Some(Dominant {
                frequency: k,
                phase: c.im.atan2(c.re),
                magnitude: mag,
            });
        }
    }
    Ok(best.filter(|b| scale > 0.0 && b.magnitude > 1e-12 * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn geometric_series_ar1() {
        let x: Vec<f64> = (0..=20).map(|t| 0.9f64.powi(t)).collect();
        assert_abs_diff_eq!(ar1_and_trend(&x).unwrap().ar1_coeff.unwrap(), 0.9, epsilon = 1e-8);
    }

    #[test]
    fn linear_index_slope() {
        let x: Vec<f64> = (1..=30).map(|i| 2.0 * i as f64 + 1.0).collect();
        assert_abs_diff_eq!(ar1_and_trend(&x).unwrap().index_slope, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn white_noise_ar1_small() {
        let t = ar1_and_trend(&noise(1000, 42)).unwrap();
        assert!(t.ar1_coeff.unwrap().abs() < 0.1);
    }

    #[test]
    fn constant_series_flags() {
        assert_eq!(ar1_and_trend(&[3.0; 10]).unwrap().ar1_coeff, None);
        assert!(acf_significant_lags(&[3.0; 10], None).unwrap().constant);
        assert_eq!(fft_dominant(&[3.0; 10]).unwrap(), None);
    }

    #[test]
    fn alternating_series_lag_one() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let l = acf_significant_lags(&x, None).unwrap();
        assert!(l.acf_lags.contains(&1));
        assert!((l.acf[0] + 1.0).abs() < 0.02);
    }

    #[test]
    fn noise_has_few_significant_lags() {
        let l = acf_significant_lags(&noise(2000, 42), Some(40)).unwrap();
        assert!(l.acf_lags.len() <= 3, "{:?}", l.acf_lags);
    }

    #[test]
    fn seasonal_copy_lag_twelve() {
        let base = noise(12, 5);
        let x: Vec<f64> = (0..240).map(|t| base[t % 12]).collect();
        assert!(acf_significant_lags(&x, None).unwrap().acf_lags.contains(&12));
    }

    #[test]
    fn pacf_of_ar1_cuts_off() {
        // theoretical ACF of AR(1): phi^h
        let r: Vec<f64> = (1..=5).map(|h| 0.6f64.powi(h)).collect();
        let p = pacf_from_acf(&r);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-12);
        for v in &p[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_tones() {
        let s: Vec<f64> = (0..64).map(|t| (2.0 * PI * 8.0 * t as f64 / 64.0).sin()).collect();
        assert_eq!(fft_dominant(&s).unwrap().unwrap().frequency, 8);
        let c: Vec<f64> = (0..100).map(|t| (2.0 * PI * 5.0 * t as f64 / 100.0).cos()).collect();
        let d = fft_dominant(&c).unwrap().unwrap();
        assert_eq!(d.frequency, 5);
        assert_abs_diff_eq!(d.phase, 0.0, epsilon = 1e-6);
        let two: Vec<f64> = (0..128)
            .map(|t| {
                let t = t as f64 / 128.0;
                2.0 * (2.0 * PI * 3.0 * t).sin() + (2.0 * PI * 10.0 * t).sin()
            })
            .collect();
        assert_eq!(fft_dominant(&two).unwrap().unwrap().frequency, 3);
    }
}
