use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub minimum: f64,
    pub maximum: f64,
    pub range: f64,
    pub negative_count: usize,
}

pub fn univariate_bounds(x: &[f64]) -> Result<Bounds> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    let minimum = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let maximum = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Bounds {
        minimum,
        maximum,
        range: maximum - minimum,
        negative_count: x.iter().filter(|&&v| v < 0.0).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorNorms {
    pub l0: usize,
    pub l1: f64,
    pub l2: f64,
}

pub fn univariate_norms(x: &[f64]) -> Result<VectorNorms> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(VectorNorms {
        l0: x.iter().filter(|&&v| v != 0.0).count(),
        l1: x.iter().map(|v| v.abs()).sum(),
        l2: x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

/// Moments and quantiles. `None` marks a statistic that is undefined for the
/// input (e.g. skewness of a constant column).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub sd: Option<f64>,
    pub skewness: Option<f64>,
    /// Pearson kurtosis `m4 / m2^2` (3 for a normal distribution).
    pub kurtosis: Option<f64>,
    pub cv: Option<f64>,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mad: f64,
}

pub fn univariate_moments(x: &[f64]) -> Result<Moments> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    let n = x.len() as f64;
    let mean = stats::mean(x);
    let central = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    // relative guard so that round-off on constant columns reads as zero spread
    let degenerate = m2 <= (mean.abs() * 1e-12).powi(2) || m2 == 0.0;
    let sd = (x.len() >= 2).then(|| stats::sample_variance(x).sqrt());
    let skewness = (!degenerate).then(|| m3 / m2.powf(1.5));
    let kurtosis = (!degenerate).then(|| m4 / (m2 * m2));
    let cv = sd.filter(|_| mean.abs() >= 1e-12).map(|s| s / mean.abs());
    let s = stats::sorted(x);
    let median = stats::quantile_sorted(&s, 0.5);
    let dev: Vec<f64> = x.iter().map(|v| (v - median).abs()).collect();
    Ok(Moments {
        mean,
        sd,
        skewness,
        kurtosis,
        cv,
        q1: stats::quantile_sorted(&s, 0.25),
        median,
        q3: stats::quantile_sorted(&s, 0.75),
        mad: stats::median(&dev),
    })
}

/// Shannon entropy (bits) of an equal-width histogram with `bins` bins over
/// `[min, max]`; `None` picks `ceil(sqrt(n))`.
pub fn univariate_entropy(x: &[f64], bins: Option<usize>) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    let bins = bins.unwrap_or_else(|| (x.len() as f64).sqrt().ceil() as usize).max(1);
    let b = univariate_bounds(x)?;
    if b.range <= 0.0 {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; bins];
    for v in x {
        let k = (((v - b.minimum) / b.range) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let n = x.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            q * q.log2()
        })
        .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounds() {
        let b = univariate_bounds(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((b.minimum, b.maximum, b.range, b.negative_count), (1.0, 3.0, 2.0, 0));
        let b = univariate_bounds(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!((b.range, b.negative_count), (2.0, 1));
        assert_eq!(univariate_bounds(&[5.0; 3]).unwrap().range, 0.0);
        assert!(matches!(univariate_bounds(&[]), Err(Error::EmptyVector)));
    }

    #[test]
    fn norms() {
        assert_eq!(univariate_norms(&[0.0, 0.0, 3.0]).unwrap(), VectorNorms { l0: 1, l1: 3.0, l2: 3.0 });
        assert_eq!(univariate_norms(&[3.0, 4.0]).unwrap().l2, 5.0);
        assert_eq!(univariate_norms(&[0.0; 4]).unwrap(), VectorNorms { l0: 0, l1: 0.0, l2: 0.0 });
    }

    #[test]
    fn moments_small() {
        let m = univariate_moments(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.sd, m.median, m.mad), (2.0, Some(1.0), 2.0, 1.0));
        let s = univariate_moments(&[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(s.skewness.unwrap(), 0.0, epsilon = 1e-15);
        // m2 = 2, m4 = 6.8 -> 1.7
        assert_abs_diff_eq!(s.kurtosis.unwrap(), 1.7, epsilon = 1e-12);
        assert_eq!(s.cv, None);
    }

    #[test]
    fn constant_column_sentinels() {
        let m = univariate_moments(&[0.1; 10]).unwrap();
        assert_eq!(m.skewness, None);
        assert_eq!(m.kurtosis, None);
        assert_eq!(m.mad, 0.0);
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(univariate_entropy(&[2.0; 50], None).unwrap(), 0.0);
        let two: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        assert_abs_diff_eq!(univariate_entropy(&two, Some(4)).unwrap(), 1.0, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let h = univariate_entropy(&u, None).unwrap();
        assert!((h - 100f64.log2()).abs() < 0.1, "{h}");
    }
}
