//! PELT change-point detection with Gaussian segment costs and a BIC penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeKind {
    /// Shifts in mean; variance fixed at the global MLE.
    Mean,
    /// Shifts in variance; mean fixed at the global mean.
    Variance,
    /// Joint shifts in mean and variance.
    MeanVariance,
}

impl ChangeKind {
    pub const ALL: [ChangeKind; 3] = [ChangeKind::Mean, ChangeKind::Variance, ChangeKind::MeanVariance];

    pub fn min_segment(self) -> usize {
        match self {
            ChangeKind::Mean | ChangeKind::Variance => 2,
            ChangeKind::MeanVariance => 3,
        }
    }

    /// Free parameters per segment.
    pub fn params(self) -> f64 {
        match self {
            ChangeKind::Mean | ChangeKind::Variance => 1.0,
            ChangeKind::MeanVariance => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSet {
    pub kind: ChangeKind,
    /// Last index (1-based) of every segment but the final one.
    pub boundaries: Vec<usize>,
    pub segment_count: usize,
    /// Optimal penalized cost, with the `-penalty` offset of the recursion
    /// removed: `sum segment costs + penalty * boundaries.len()`.
    pub cost: f64,
}

impl ChangePointSet {
    /// Half-open row ranges of the segments of a series of length `n`.
    pub fn segments(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.segment_count);
        let mut start = 0;
        for &b in self.boundaries.iter().chain(std::iter::once(&n)) {
            out.push((start, b));
            start = b;
        }
        out
    }
}

/// Segment costs from prefix sums of the globally centred series.
pub struct SegmentCost {
    kind: ChangeKind,
    s1: Vec<f64>,
    s2: Vec<f64>,
    global_var: f64,
    floor: f64,
}

impl SegmentCost {
    pub fn new(x: &[f64], kind: ChangeKind) -> Self {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let mut s1 = Vec::with_capacity(x.len() + 1);
        let mut s2 = Vec::with_capacity(x.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for v in x {
            let d = v - mu;
            s1.push(s1.last().unwrap() + d);
            s2.push(s2.last().unwrap() + d * d);
        }
        let global_var = s2[x.len()] / n;
        Self {
            kind,
            s1,
            s2,
            global_var,
            // additive floor keeps log costs finite on flat runs and preserves
            // the subadditivity PELT pruning relies on
            floor: 1e-8 * global_var,
        }
    }

    pub fn global_var(&self) -> f64 {
        self.global_var
    }

    /// Cost of rows `a..b`.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        let len = (b - a) as f64;
        let sum = self.s1[b] - self.s1[a];
        let sq = self.s2[b] - self.s2[a];
        match self.kind {
            ChangeKind::Mean => (sq - sum * sum / len).max(0.0) / self.global_var,
            ChangeKind::Variance => len * (sq / len + self.floor).ln(),
            ChangeKind::MeanVariance => len * ((sq - sum * sum / len).max(0.0) / len + self.floor).ln(),
        }
    }
}

/// BIC penalty per change: the segment parameters plus the change location.
pub fn bic_penalty(n: usize, kind: ChangeKind) -> f64 {
    (kind.params() + 1.0) * (n as f64).ln()
}

/// Exact minimiser of `sum C(segment) + beta * #changes` by PELT.
pub fn pelt_changepoints(x: &[f64], kind: ChangeKind) -> Result<ChangePointSet> {
    let n = x.len();
    let m = kind.min_segment();
    if n < 2 * m {
        return Err(Error::TooShort { len: n, min: 2 * m });
    }
    let cost = SegmentCost::new(x, kind);
    if !(cost.global_var() > 0.0) {
        return Ok(ChangePointSet {
            kind,
            boundaries: Vec::new(),
            segment_count: 1,
            cost: 0.0,
        });
    }
    let beta = bic_penalty(n, kind);
    let mut f = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    f[0] = -beta;
    // (tau, time at which tau first failed the pruning test)
    let mut candidates: Vec<(usize, Option<usize>)> = vec![(0, None)];
    for t in m..=n {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        let mut vals = Vec::with_capacity(candidates.len());
        for &(tau, _) in &candidates {
            if t - tau < m {
                vals.push(None);
                continue;
            }
            let v = f[tau] + cost.cost(tau, t) + beta;
            vals.push(Some(v));
            if v < best {
                best = v;
                arg = tau;
            }
        }
        f[t] = best;
        last[t] = arg;
        // A candidate with F(tau) + C(tau, t) > F(t) loses to t at every
        // s >= t + m; segments (t, s) shorter than m are inadmissible, so it
        // stays eligible until then.
        let mut keep = Vec::with_capacity(candidates.len() + 1);
        for (&(tau, mark), v) in candidates.iter().zip(&vals) {
            let mark = match (mark, v) {
                (None, Some(v)) if v - beta > best => Some(t),
                _ => mark,
            };
            if mark.is_none_or(|p| t + 1 < p + m) {
                keep.push((tau, mark));
            }
        }
        if t + m <= n {
            keep.push((t, None));
        }
        candidates = keep;
    }
    let mut boundaries = Vec::new();
    let mut t = last[n];
    while t > 0 {
        boundaries.push(t);
        t = last[t];
    }
    boundaries.reverse();
    Ok(ChangePointSet {
        kind,
        segment_count: boundaries.len() + 1,
        boundaries,
        cost: f[n] + beta,
    })
}
