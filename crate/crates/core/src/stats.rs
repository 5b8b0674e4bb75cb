//! Statistical estimators and goodness-of-fit tests used by the
//! verification experiments: mean/stderr summaries, Wilson score intervals
//! for proportions, one-sample Kolmogorov–Smirnov tests (with the standard
//! small-sample correction), and chi-square tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{ensure_finite, Error, Result};

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// A point estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
}

impl EstimateWithCI {
    /// Symmetric 95% confidence interval.
    pub fn ci95(&self) -> (f64, f64) {
        (self.estimate - Z95 * self.stderr, self.estimate + Z95 * self.stderr)
    }

    /// Whether `value` lies within `k` standard errors of the estimate.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.stderr
    }
}

/// Sample mean and standard error of `xs`.
///
/// Empty input yields `estimate = NaN`; one sample yields `stderr = inf`,
/// so downstream `within` checks fail loudly rather than silently pass.
pub fn mean_with_stderr(xs: &[f64]) -> EstimateWithCI {
    let n = xs.len();
    if n == 0 {
        return EstimateWithCI {
            estimate: f64::NAN,
            stderr: f64::INFINITY,
            n: 0,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return EstimateWithCI {
            estimate: mean,
            stderr: f64::INFINITY,
            n: 1,
        };
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    EstimateWithCI {
        estimate: mean,
        stderr: (var / n as f64).sqrt(),
        n: n as u64,
    }
}

/// A binomial proportion with a Wilson score interval.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct BinomialEstimate {
    pub successes: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl BinomialEstimate {
    /// Normal-approximation standard error `√(p̂(1−p̂)/n)`.
    pub fn stderr(&self) -> f64 {
        (self.p_hat * (1.0 - self.p_hat) / self.trials as f64).sqrt()
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
///
/// # Errors
/// `trials == 0`, `successes > trials`, or non-positive `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Result<BinomialEstimate> {
    ensure_finite(z, "z quantile")?;
    if trials == 0 {
        return Err(Error::invalid("Wilson interval needs at least one trial"));
    }
    if successes > trials {
        return Err(Error::invalid(format!(
            "successes ({successes}) exceed trials ({trials})"
        )));
    }
    if z <= 0.0 {
        return Err(Error::invalid(format!("z quantile must be positive, got {z}")));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let margin = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(BinomialEstimate {
        successes,
        trials,
        p_hat: p,
        ci_lo: (centre - margin).max(0.0),
        ci_hi: (centre + margin).min(1.0),
    })
}

/// One-sample Kolmogorov–Smirnov statistic of `sorted` (ascending) against
/// the continuous CDF `cdf`.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "input must be sorted");
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    d
}

/// KS statistic for a weighted empirical measure: `atoms` are `(location,
/// weight)` pairs sorted by location with weights summing to 1.
pub fn ks_statistic_weighted(atoms: &[(f64, f64)], cdf: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(atoms.windows(2).all(|w| w[0].0 <= w[1].0));
    let mut cum = 0.0;
    let mut d: f64 = 0.0;
    for &(x, w) in atoms {
        let f = cdf(x);
        d = d.max((f - cum).abs());
        cum += w;
        d = d.max((cum - f).abs());
    }
    d
}

/// Asymptotic p-value of the one-sample KS statistic `d` at sample size `n`,
/// using the finite-sample effective scaling `λ = d·(√n + 0.12 + 0.11/√n)`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    if n == 0 || !d.is_finite() {
        return f64::NAN;
    }
    if d <= 0.0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = d * (sn + 0.12 + 0.11 / sn);
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += 2.0 * sign * term;
        if term < 1e-14 {
            break;
        }
        sign = -sign;
    }
    p.clamp(0.0, 1.0)
}

/// Result of a chi-square test.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square goodness-of-fit test of observed counts against expected
/// counts (same length, expected all positive). `extra_dof_reduction`
/// subtracts additional degrees of freedom for parameters estimated from
/// the data; the baseline reduction of 1 (fixed total) is always applied.
///
/// # Errors
/// Length mismatch, non-positive expected cells, or fewer than 2 bins of
/// freedom remaining.
pub fn chi_square_gof(
    observed: &[u64],
    expected: &[f64],
    extra_dof_reduction: usize,
) -> Result<ChiSquareReport> {
    if observed.len() != expected.len() {
        return Err(Error::invalid(format!(
            "observed ({}) and expected ({}) lengths differ",
            observed.len(),
            expected.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::invalid("chi-square needs at least two bins"));
    }
    if expected.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("expected counts must be positive and finite"));
    }
    let dof = observed
        .len()
        .checked_sub(1 + extra_dof_reduction)
        .filter(|&d| d >= 1)
        .ok_or_else(|| Error::invalid("no degrees of freedom left after reductions"))?;
    let statistic: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let diff = o as f64 - e;
            diff * diff / e
        })
        .sum();
    Ok(ChiSquareReport {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

/// Chi-square homogeneity test of two count vectors over the same bins.
/// Bins whose combined expected count falls below 5 are merged with their
/// right neighbour (the final bin merges leftwards) before testing.
///
/// # Errors
/// Length mismatch, an empty sample, or fewer than two usable bins.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<ChiSquareReport> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "bin counts differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::invalid("both samples must be nonempty"));
    }
    let frac_a = na as f64 / (na + nb) as f64;

    // Merge bins until each has a combined expected count of at least 5 on
    // the smaller side.
    let min_expected = 5.0;
    let threshold = min_expected / frac_a.min(1.0 - frac_a);
    let mut merged: Vec<(u64, u64)> = Vec::new();
    let mut acc = (0u64, 0u64);
    for (&ai, &bi) in a.iter().zip(b) {
        acc.0 += ai;
        acc.1 += bi;
        if (acc.0 + acc.1) as f64 >= threshold {
            merged.push(acc);
            acc = (0, 0);
        }
    }
    if acc.0 + acc.1 > 0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => merged.push(acc),
        }
    }
    if merged.len() < 2 {
        return Err(Error::invalid(
            "fewer than two populated bins after merging; widen the binning",
        ));
    }

    let mut statistic = 0.0;
    for &(ai, bi) in &merged {
        let tot = (ai + bi) as f64;
        let ea = tot * frac_a;
        let eb = tot * (1.0 - frac_a);
        let da = ai as f64 - ea;
        let db = bi as f64 - eb;
        statistic += da * da / ea + db * db / eb;
    }
    let dof = merged.len() - 1;
    Ok(ChiSquareReport {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

/// Survival function of the chi-square distribution with `dof` degrees of
/// freedom.
pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("dof >= 1");
    (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
}

/// Build equal-probability bin edges for a continuous reference CDF by
/// numerically inverting it on `[lo, hi]`; returns `k−1` interior edges.
pub fn equiprobable_edges(
    cdf: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    k: usize,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid("need at least two bins"));
    }
    if !(cdf(lo) <= 0.5 / k as f64) || !(cdf(hi) >= 1.0 - 0.5 / k as f64) {
        return Err(Error::invalid(
            "bracket [lo, hi] does not cover the reference distribution",
        ));
    }
    let mut edges = Vec::with_capacity(k - 1);
    for i in 1..k {
        let target = i as f64 / k as f64;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if cdf(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        edges.push(0.5 * (a + b));
    }
    Ok(edges)
}

/// Histogram of `values` over the bins defined by interior `edges`
/// (ascending): bin 0 is `(−∞, edges[0])`, bin `k` is `[edges[k−1], ∞)`.
pub fn bin_counts(values: &[f64], edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() + 1];
    for &v in values {
        let idx = edges.partition_point(|&e| e <= v);
        counts[idx] += 1;
    }
    counts
}
