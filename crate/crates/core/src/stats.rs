//! Small statistics toolkit used by the estimators and the test suites.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Running mean and variance (Welford). Merging is associative, so
/// per-replica summaries can be folded in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAcc) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            se: self.se(),
            n: self.n,
        }
    }
}

impl FromIterator<f64> for MeanAcc {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAcc::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            se: 0.0,
            n: 0,
        }
    }

    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.se, self.mean + z * self.se)
    }

    pub fn contains(&self, value: f64, z: f64) -> bool {
        (self.mean - value).abs() <= z * self.se
    }
}

/// `sqrt(a.se^2 + b.se^2)`.
pub fn combined_se(a: &Estimate, b: &Estimate) -> f64 {
    a.se.hypot(b.se)
}

/// Two-sided standard normal quantile for confidence `level` (0.95 -> 1.96).
pub fn z_for_level(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + level / 2.0)
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    1.0 - normal.cdf(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    v
}

/// Largest values of `F_a - F_b` and `F_b - F_a` over the pooled sample.
/// Ties are handled by evaluating both ECDFs after every distinct value.
fn ecdf_gaps(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut up, mut down) = (0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let diff = i as f64 / na - j as f64 / nb;
        up = up.max(diff);
        down = down.max(-diff);
    }
    (up, down)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value. For
/// discrete data the test is conservative.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs two nonempty samples");
    let (up, down) = ecdf_gaps(a, b);
    let d = up.max(down);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    let p = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
    KsResult {
        statistic: d,
        p_value: p,
        n1: a.len(),
        n2: b.len(),
    }
}

/// One-sided check that `big` stochastically dominates `small`: the largest
/// excess of `F_big` over `F_small` and the asymptotic one-sided critical
/// value at level `alpha`.
pub fn dominance_gap(small: &[f64], big: &[f64], alpha: f64) -> (f64, f64) {
    let (_, excess) = ecdf_gaps(small, big);
    let (n, m) = (small.len() as f64, big.len() as f64);
    let crit = ((-(alpha.ln()) / 2.0) * (n + m) / (n * m)).sqrt();
    (excess, crit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `observed` counts against probabilities
/// `expected` (which must sum to one). Cells with zero expected mass must
/// have zero observed count.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), expected.len());
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(expected) {
        if p <= 0.0 {
            assert_eq!(o, 0, "observed count in a zero-probability cell");
            continue;
        }
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1).max(1);
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    ChiSquareResult {
        statistic: stat,
        dof,
        p_value: 1.0 - chi.cdf(stat),
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let v = sorted(xs);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Weighted least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    /// Weighted residual sum of squares.
    pub chi2: f64,
    pub points: usize,
}

/// Fit with weights `w_i` (inverse variances). The standard errors are the
/// model-based ones `sqrt((X^T W X)^-1)`.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let swx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let swy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let swxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let swxy: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * x * y)
        .sum();
    let det = sw * swxx - swx * swx;
    if !(det.abs() > 0.0) {
        return None;
    }
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swxx * swy - swx * swxy) / det;
    let chi2 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2))
        .sum();
    Some(LineFit {
        intercept,
        slope,
        intercept_se: (swxx / det).sqrt(),
        slope_se: (sw / det).sqrt(),
        chi2,
        points: n,
    })
}

/// Ordinary least squares (unit weights), with standard errors scaled by the
/// residual variance.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let w = vec![1.0; x.len()];
    let mut fit = weighted_line_fit(x, y, &w)?;
    if fit.points > 2 {
        let s2 = fit.chi2 / (fit.points - 2) as f64;
        fit.intercept_se *= s2.sqrt();
        fit.slope_se *= s2.sqrt();
    }
    Some(fit)
}
