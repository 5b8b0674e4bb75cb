//! Finite particle configurations on the positive half-line and the
//! functionals read off them: particle count, maximum, empirical measures,
//! boundary-weighted sums, the survival-time predictor, shifts, the
//! domination partial order, and the exponential-martingale statistic.

use std::f64::consts::SQRT_2;

use crate::analytic::{curve_constant, y_weight, z_weight};
use crate::{ensure_finite, Error, Result};

/// A finite multiset of particle positions in `(0, ∞)`, stored sorted
/// ascending. Equality is multiset equality (exact floating comparison).
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PointConfiguration {
    positions: Vec<f64>,
}

impl PointConfiguration {
    /// Build a configuration from arbitrary-order positions.
    ///
    /// # Errors
    /// Any position non-finite or `≤ 0`.
    pub fn new(mut positions: Vec<f64>) -> Result<Self> {
        for &x in &positions {
            ensure_finite(x, "particle position")?;
            if x <= 0.0 {
                return Err(Error::invalid(format!(
                    "particle positions must be strictly positive, got {x}"
                )));
            }
        }
        positions.sort_by(f64::total_cmp);
        Ok(PointConfiguration { positions })
    }

    /// Build a configuration whose positions may lie anywhere on the real
    /// line (finite values only).
    ///
    /// The absorbed process never produces non-positive positions, but the
    /// engine's no-absorption diagnostic hook does; functionals that are
    /// well-defined on the whole line (count, maximum, measures, weighted
    /// sums) work unchanged.
    ///
    /// # Errors
    /// Any position non-finite.
    pub fn from_unrestricted(mut positions: Vec<f64>) -> Result<Self> {
        for &x in &positions {
            ensure_finite(x, "particle position")?;
        }
        positions.sort_by(f64::total_cmp);
        Ok(PointConfiguration { positions })
    }

    /// The empty configuration.
    pub fn empty() -> Self {
        PointConfiguration { positions: Vec::new() }
    }

    /// Single-particle configuration.
    ///
    /// # Errors
    /// `x` non-finite or `≤ 0`.
    pub fn single(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    /// Positions in ascending order.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Particle count `N`.
    pub fn count_n(&self) -> usize {
        self.positions.len()
    }

    /// Maximum position `M`.
    ///
    /// # Errors
    /// Empty configuration.
    pub fn max_m(&self) -> Result<f64> {
        self.positions
            .last()
            .copied()
            .ok_or(Error::EmptyConfiguration("the maximum"))
    }

    /// Disjoint union of two configurations.
    pub fn union(&self, other: &PointConfiguration) -> PointConfiguration {
        let mut positions = Vec::with_capacity(self.positions.len() + other.positions.len());
        positions.extend_from_slice(&self.positions);
        positions.extend_from_slice(&other.positions);
        positions.sort_by(f64::total_cmp);
        PointConfiguration { positions }
    }

    /// Uniform empirical measure: weight `1/N` at each position (atoms at
    /// exactly-equal positions merge).
    ///
    /// # Errors
    /// Empty configuration.
    pub fn chi(&self) -> Result<EmpiricalMeasure> {
        if self.is_empty() {
            return Err(Error::EmptyConfiguration("the empirical measure"));
        }
        let w = 1.0 / self.positions.len() as f64;
        Ok(EmpiricalMeasure::from_sorted_atoms(
            self.positions.iter().map(|&x| (x, w)),
        ))
    }

    /// Maximum-relative exponentially weighted measure: weight
    /// `e^{√2·x_i} / Σ_j e^{√2·x_j}` at location `x_i / M`, supported in
    /// `(0, 1]`.
    ///
    /// # Errors
    /// Empty configuration.
    pub fn eta(&self) -> Result<EmpiricalMeasure> {
        let m = self.max_m()?;
        // Normalise by the maximum inside the exponent for overflow safety:
        // e^{√2 x}/Σ e^{√2 x_j} = e^{√2(x−M)}/Σ e^{√2(x_j−M)}.
        let total: f64 = self.positions.iter().map(|&x| (SQRT_2 * (x - m)).exp()).sum();
        Ok(EmpiricalMeasure::from_sorted_atoms(
            self.positions
                .iter()
                .map(|&x| (x / m, (SQRT_2 * (x - m)).exp() / total)),
        ))
    }

    /// Boundary-weighted sum `Σ_i z(x_i, L)`, optionally restricted to
    /// particles with `x_i ≤ cutoff`.
    ///
    /// Particles outside `(0, L)` contribute 0.
    pub fn z_value(&self, l: f64, cutoff: Option<f64>) -> f64 {
        debug_assert!(l > 0.0);
        self.positions
            .iter()
            .filter(|&&x| cutoff.is_none_or(|c| x <= c))
            .map(|&x| z_weight(x, l))
            .sum()
    }

    /// Companion weighted sum `Σ_i (x_i/L)·e^{√2(x_i−L)}`.
    pub fn y_value(&self, l: f64) -> f64 {
        debug_assert!(l > 0.0);
        self.positions.iter().map(|&x| y_weight(x, l)).sum()
    }

    /// The survival-time predictor: the smallest `t` with
    /// `c·t^{1/3} ≥ M + 2` and `Σ_i z(x_i, c·t^{1/3}) ≤ 1/2`.
    ///
    /// Since the weighted sum is strictly decreasing in the boundary height
    /// once every particle sits at least 2 below it, the solution is either
    /// the constraint corner `t = ((M+2)/c)³` or the unique root of
    /// `Σ z = 1/2`, found by doubling-bracket bisection to relative
    /// tolerance `1e-10`.
    ///
    /// # Errors
    /// Empty configuration.
    pub fn t_of_nu(&self) -> Result<f64> {
        let m = self.max_m()?;
        if m <= -2.0 {
            return Err(Error::invalid(format!(
                "survival-time predictor needs a particle above -2, got maximum {m}"
            )));
        }
        let c = curve_constant();
        let z_at = |t: f64| self.z_value(c * t.cbrt(), None);
        let t_min = ((m + 2.0) / c).powi(3);
        if z_at(t_min) <= 0.5 {
            return Ok(t_min);
        }
        let mut lo = t_min;
        let mut hi = 2.0 * t_min;
        while z_at(hi) > 0.5 {
            lo = hi;
            hi *= 2.0;
            debug_assert!(hi < 1e300);
        }
        while hi - lo > 1e-10 * hi {
            let mid = 0.5 * (lo + hi);
            if z_at(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Drop every particle in `(0, Δ]` and translate the remainder by `−Δ`.
    ///
    /// # Errors
    /// `Δ ≤ 0` or non-finite.
    pub fn shift(&self, delta: f64) -> Result<PointConfiguration> {
        ensure_finite(delta, "shift")?;
        if delta <= 0.0 {
            return Err(Error::invalid(format!("shift must be positive, got {delta}")));
        }
        Ok(PointConfiguration {
            positions: self
                .positions
                .iter()
                .filter(|&&x| x > delta)
                .map(|&x| x - delta)
                .collect(),
        })
    }

    /// Domination partial order: `self ≻ other` iff every upper tail of
    /// `self` counts at least as many particles as the same tail of
    /// `other` — equivalently, `N_self ≥ N_other` and the k-th largest of
    /// `self` is ≥ the k-th largest of `other` for every `k ≤ N_other`.
    pub fn dominates(&self, other: &PointConfiguration) -> bool {
        if self.positions.len() < other.positions.len() {
            return false;
        }
        self.positions
            .iter()
            .rev()
            .zip(other.positions.iter().rev())
            .all(|(a, b)| a >= b)
    }

    /// The exponential-martingale statistic
    /// `Σ_i e^{ρ·x_i − (1 − ρ²/2)·t`}.
    pub fn w_stat(&self, rho: f64, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        let drift_term = (1.0 - rho * rho / 2.0) * t;
        self.positions.iter().map(|&x| (rho * x - drift_term).exp()).sum()
    }
}

impl<'a> IntoIterator for &'a PointConfiguration {
    type Item = f64;
    type IntoIter = std::iter::Copied<std::slice::Iter<'a, f64>>;
    fn into_iter(self) -> Self::IntoIter {
        self.positions.iter().copied()
    }
}

/// A finite measure given by weighted atoms, sorted by location.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<(f64, f64)>,
    total_weight: f64,
}

impl EmpiricalMeasure {
    /// Build from `(location, weight)` pairs; atoms at exactly equal
    /// locations merge; weights must be nonnegative.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, w) in &atoms {
            ensure_finite(x, "atom location")?;
            ensure_finite(w, "atom weight")?;
            if w < 0.0 {
                return Err(Error::invalid(format!("atom weight must be nonnegative, got {w}")));
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::from_sorted_atoms(atoms.into_iter()))
    }

    fn from_sorted_atoms(atoms: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        let mut total = 0.0;
        for (x, w) in atoms {
            total += w;
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        EmpiricalMeasure {
            atoms: merged,
            total_weight: total,
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Rescale weights to sum to 1.
    ///
    /// # Errors
    /// Zero total weight.
    pub fn normalized(&self) -> Result<EmpiricalMeasure> {
        if self.total_weight <= 0.0 {
            return Err(Error::invalid("cannot normalise a zero measure"));
        }
        Ok(EmpiricalMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|&(x, w)| (x, w / self.total_weight))
                .collect(),
            total_weight: 1.0,
        })
    }

    /// KS distance of the normalised measure to a reference CDF.
    pub fn ks_distance_to(&self, cdf: impl Fn(f64) -> f64) -> Result<f64> {
        let norm = self.normalized()?;
        Ok(crate::stats::ks_statistic_weighted(&norm.atoms, cdf))
    }

    /// CSV rows `location,weight`, one atom per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("location,weight\n");
        for &(x, w) in &self.atoms {
            out.push_str(&format!("{x:.17e},{w:.17e}\n"));
        }
        out
    }
}
