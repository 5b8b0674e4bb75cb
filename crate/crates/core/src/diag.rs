//! Distributional identities between the plain branching process and its
//! size-biased reweighting, packaged as statistically testable reports.
//!
//! Two constructions of the same laws are compared:
//!
//! 1. **Weight-selection identity** ([`verify_spine_selection`]).  For the
//!    free process with drift `−ρ` (no absorption), the exponential weight
//!    `W_t = Σ_u exp(ρX_t(u) − (1 − ρ²/2)t)` is a mean-`e^{ρx}` martingale,
//!    and reweighting the process by `W_t` is realised dynamically by a
//!    process with one distinguished lineage: the distinguished particle
//!    diffuses with no drift and sheds offspring at twice the branching
//!    rate, each offspring running an ordinary copy of the drifted process.
//!    Bounded statistics of the time-`t` configuration must agree between
//!    `e^{−ρx}·E[W_t·F]` under the plain process and the plain mean of `F`
//!    under the distinguished-lineage process; moreover, conditionally on
//!    the configuration, the distinguished label sits on particle `u` with
//!    probability `exp(ρX_t(u))/Σ_v exp(ρX_t(v))`.
//!
//! 2. **Bridge representation** ([`verify_bridge_representation`]).  For
//!    the absorbed process started at `x > 0`, statistics of the time-`t`
//!    configuration that vanish on extinction can be written as an integral
//!    over the rightmost surviving particle's position `z`: a Bessel(3)
//!    bridge from `z` down to `x` over `[0, t]` (runs backward in time),
//!    carrying birth ages at twice the branching rate, each birth seeding a
//!    forward absorbed run for its age, weighted by
//!    `exp(ρ(x−z))·exp(−(x−z)²/2t)·(1 − exp(−2xz/t))/√(2πt)` and restricted
//!    to realisations with no particle above `z`.
//!
//! Both checks are two-simulator cross-validations: the two sides share no
//! sampling code path beyond the elementary Gaussian draws.

use serde::Serialize;

use crate::configuration::PointConfiguration;
use crate::engine::{simulate_until, SimParams};
use crate::quad::gauss_legendre_on;
use crate::rng::{sample_poisson_times, RandomStream};
use crate::stats::{chi_square_gof, mean_with_stderr, ChiSquareReport, EstimateWithCI};
use crate::{ensure_finite, Error, Result};

/// Parameters shared by the diagnostics in this module.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagParams {
    /// Drift magnitude of the drifted process.
    pub rho: f64,
    /// Branching rate of the plain process (the distinguished lineage sheds
    /// offspring at twice this rate).
    pub branching_rate: f64,
    /// Population cap forwarded to every embedded simulation.
    pub max_population: u64,
    /// Number of quadrature nodes for the bridge-representation integral.
    pub quad_nodes: usize,
    /// Replicas per quadrature node for the bridge representation.
    pub per_node: u64,
}

impl DiagParams {
    /// Drift `rho`, branching rate 1, population cap `10⁷`, 24 quadrature
    /// nodes with `10⁴` replicas each.
    pub fn new(rho: f64) -> Self {
        DiagParams {
            rho,
            branching_rate: 1.0,
            max_population: 10_000_000,
            quad_nodes: 24,
            per_node: 10_000,
        }
    }

    /// Replace the per-node replica count.
    pub fn with_per_node(mut self, n: u64) -> Self {
        self.per_node = n;
        self
    }

    /// Replace the quadrature node count.
    pub fn with_quad_nodes(mut self, nodes: usize) -> Self {
        self.quad_nodes = nodes;
        self
    }

    /// Replace the population cap.
    pub fn with_max_population(mut self, cap: u64) -> Self {
        self.max_population = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure_finite(self.rho, "drift rho")?;
        if self.rho < 0.0 {
            return Err(Error::invalid(format!(
                "drift must be non-negative, got rho={}",
                self.rho
            )));
        }
        ensure_finite(self.branching_rate, "branching rate")?;
        if self.branching_rate <= 0.0 {
            return Err(Error::invalid(format!(
                "branching rate must be positive, got {}",
                self.branching_rate
            )));
        }
        if self.max_population == 0 {
            return Err(Error::invalid("population cap must be at least 1"));
        }
        if self.quad_nodes < 2 {
            return Err(Error::invalid("need at least 2 quadrature nodes"));
        }
        if self.per_node == 0 {
            return Err(Error::invalid("need at least 1 replica per node"));
        }
        Ok(())
    }

    fn free_sim(&self) -> Result<SimParams> {
        Ok(SimParams::new(self.rho)?
            .with_branching_rate(self.branching_rate)
            .with_max_population(self.max_population)
            .without_absorption())
    }

    fn absorbed_sim(&self) -> Result<SimParams> {
        Ok(SimParams::new(self.rho)?
            .with_branching_rate(self.branching_rate)
            .with_max_population(self.max_population))
    }
}

/// One functional of the time-`t` configuration compared across the two
/// constructions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalComparison {
    /// Name of the statistic.
    pub name: &'static str,
    /// Estimate under the first construction.
    pub lhs: EstimateWithCI,
    /// Estimate under the second construction.
    pub rhs: EstimateWithCI,
    /// `(lhs − rhs)` in pooled standard errors.
    pub z: f64,
}

impl FunctionalComparison {
    fn build(name: &'static str, lhs: EstimateWithCI, rhs: EstimateWithCI) -> Self {
        let pooled = (lhs.stderr * lhs.stderr + rhs.stderr * rhs.stderr).sqrt();
        let z = if pooled > 0.0 {
            (lhs.estimate - rhs.estimate) / pooled
        } else if lhs.estimate == rhs.estimate {
            0.0
        } else {
            f64::INFINITY
        };
        FunctionalComparison { name, lhs, rhs, z }
    }
}

/// Outcome of [`verify_spine_selection`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineSelectionReport {
    /// Replicas per side.
    pub n: u64,
    /// Battery of bounded configuration statistics; `lhs` is the
    /// weighted-plain estimate `e^{−ρx}·mean(W_t·F)`, `rhs` the plain mean
    /// of `F` under the distinguished-lineage construction.
    pub battery: Vec<FunctionalComparison>,
    /// Goodness of fit of the distinguished label against the exponential
    /// weight shares, binned by share.
    pub selection: ChiSquareReport,
    /// True when every battery entry is within 3 pooled standard errors and
    /// the selection test's p-value is at least 0.01.
    pub pass: bool,
}

/// The bounded statistics compared by both diagnostics.
///
/// Every entry vanishes on the empty configuration, as the bridge
/// representation requires.
fn battery_values(config: &PointConfiguration) -> [f64; 4] {
    let n = config.count_n();
    let unit = if n == 0 { 0.0 } else { 1.0 };
    let lone = if n == 1 { 1.0 } else { 0.0 };
    let capped = n.min(10) as f64;
    let clipped_max = if n == 0 {
        0.0
    } else {
        config
            .iter()
            .fold(f64::NEG_INFINITY, f64::max)
            .clamp(-5.0, 5.0)
    };
    [unit, lone, capped, clipped_max]
}

const BATTERY_NAMES: [&str; 4] = ["unit", "lone-particle", "count-capped-at-10", "max-clipped-to-5"];

/// Normalised empirical mean of the exponential weight:
/// `e^{−ρx} · mean(W_t)` over `n` free-process replicas started at `x`.
///
/// The weight is a mean-one martingale after the normalisation, so the
/// returned estimate should sit within a few standard errors of 1.
pub fn estimate_normalized_weight(
    params: &DiagParams,
    x: f64,
    t: f64,
    n: u64,
    stream: &mut RandomStream,
) -> Result<EstimateWithCI> {
    params.validate()?;
    ensure_finite(x, "start x")?;
    ensure_finite(t, "horizon t")?;
    if t <= 0.0 {
        return Err(Error::invalid(format!("horizon must be positive, got {t}")));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 replicas"));
    }
    let sim = params.free_sim()?;
    let init = PointConfiguration::from_unrestricted(vec![x])?;
    let scale = (-params.rho * x).exp();
    let mut values = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let config = simulate_until(&sim, &init, t, stream)?;
        values.push(scale * config.w_stat(params.rho, t));
    }
    Ok(mean_with_stderr(&values))
}

/// One replica of the distinguished-lineage process: the distinguished
/// particle diffuses driftless from `x`, shedding offspring at rate
/// `2·branching_rate`; each offspring runs the ordinary drifted process to
/// the horizon.  Returns the positions (distinguished particle first) at
/// time `t`.
fn distinguished_replica(
    params: &DiagParams,
    free: &SimParams,
    x: f64,
    t: f64,
    stream: &mut RandomStream,
) -> Result<Vec<f64>> {
    let birth_rate = 2.0 * params.branching_rate;
    let mut positions: Vec<f64> = vec![f64::NAN]; // distinguished slot, filled last
    let mut pos = x;
    let mut now = 0.0;
    loop {
        let gap = stream.exponential(birth_rate);
        if now + gap >= t {
            pos = stream.gaussian(pos, (t - now).sqrt());
            break;
        }
        now += gap;
        pos = stream.gaussian(pos, gap.sqrt());
        let init = PointConfiguration::from_unrestricted(vec![pos])?;
        let sub = simulate_until(free, &init, t - now, stream)?;
        positions.extend(sub.iter());
        if positions.len() as u64 > params.max_population {
            return Err(Error::Censored(format!(
                "distinguished-lineage replica exceeded {} particles",
                params.max_population
            )));
        }
    }
    positions[0] = pos;
    Ok(positions)
}

/// Exponential weight shares `exp(ρx_u)/Σ_v exp(ρx_v)`, computed stably.
fn weight_shares(rho: f64, positions: &[f64]) -> Vec<f64> {
    let m = positions.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let raw: Vec<f64> = positions.iter().map(|&p| (rho * (p - m)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Merge bins whose expected count is below `min_expected` into their right
/// neighbour (the last bin merges leftward), preserving totals.
fn merge_small_bins(observed: &[u64], expected: &[f64], min_expected: f64) -> (Vec<u64>, Vec<f64>) {
    let mut obs: Vec<u64> = Vec::new();
    let mut exp: Vec<f64> = Vec::new();
    let mut carry_o = 0u64;
    let mut carry_e = 0.0f64;
    for (&o, &e) in observed.iter().zip(expected) {
        carry_o += o;
        carry_e += e;
        if carry_e >= min_expected {
            obs.push(carry_o);
            exp.push(carry_e);
            carry_o = 0;
            carry_e = 0.0;
        }
    }
    if carry_e > 0.0 || carry_o > 0 {
        if let (Some(o), Some(e)) = (obs.last_mut(), exp.last_mut()) {
            *o += carry_o;
            *e += carry_e;
        } else {
            obs.push(carry_o);
            exp.push(carry_e);
        }
    }
    (obs, exp)
}

/// Compare the weighted plain process against the distinguished-lineage
/// construction at time `t`, started from `x`, over `n` replicas per side.
///
/// Checks a battery of bounded configuration statistics (equality within 3
/// pooled standard errors) and the conditional law of the distinguished
/// label given the configuration: across replicas, the label's exponential
/// weight share is binned and tested against the accumulated shares of all
/// particles (Pearson statistic; with heterogeneous per-replica share
/// vectors the statistic is stochastically below the reference chi-square
/// distribution, so the test is conservative).
///
/// # Errors
///
/// Invalid parameters, or a censored embedded simulation.
pub fn verify_spine_selection(
    params: &DiagParams,
    x: f64,
    t: f64,
    n: u64,
    stream: &mut RandomStream,
) -> Result<SpineSelectionReport> {
    params.validate()?;
    ensure_finite(x, "start x")?;
    ensure_finite(t, "horizon t")?;
    if t <= 0.0 {
        return Err(Error::invalid(format!("horizon must be positive, got {t}")));
    }
    if n < 100 {
        return Err(Error::invalid("need at least 100 replicas per side"));
    }
    let rho = params.rho;
    let free = params.free_sim()?;
    let init = PointConfiguration::from_unrestricted(vec![x])?;
    let scale = (-rho * x).exp();

    // Weighted plain side: e^{−ρx}·W_t·F per replica.
    let mut lhs_values: [Vec<f64>; 4] = Default::default();
    for _ in 0..n {
        let config = simulate_until(&free, &init, t, stream)?;
        let w = scale * config.w_stat(rho, t);
        for (acc, f) in lhs_values.iter_mut().zip(battery_values(&config)) {
            acc.push(w * f);
        }
    }

    // Distinguished-lineage side: plain F per replica, plus the label's
    // weight share against everyone's shares.
    const BINS: usize = 10;
    let mut observed = [0u64; BINS];
    let mut expected = [0.0f64; BINS];
    let bin_of = |share: f64| ((share * BINS as f64) as usize).min(BINS - 1);
    let mut rhs_values: [Vec<f64>; 4] = Default::default();
    for _ in 0..n {
        let positions = distinguished_replica(params, &free, x, t, stream)?;
        let config = PointConfiguration::from_unrestricted(positions.clone())?;
        for (acc, f) in rhs_values.iter_mut().zip(battery_values(&config)) {
            acc.push(f);
        }
        let shares = weight_shares(rho, &positions);
        observed[bin_of(shares[0])] += 1;
        for &s in &shares {
            expected[bin_of(s)] += s;
        }
    }

    let battery: Vec<FunctionalComparison> = BATTERY_NAMES
        .iter()
        .zip(lhs_values.iter().zip(&rhs_values))
        .map(|(name, (l, r))| {
            FunctionalComparison::build(name, mean_with_stderr(l), mean_with_stderr(r))
        })
        .collect();

    let (obs, exp) = merge_small_bins(&observed, &expected, 5.0);
    let selection = chi_square_gof(&obs, &exp, 0)?;

    let pass = battery.iter().all(|c| c.z.abs() <= 3.0) && selection.p_value >= 0.01;
    Ok(SpineSelectionReport {
        n,
        battery,
        selection,
        pass,
    })
}

/// The closed-form weight of the bridge representation:
/// `exp(ρ(x−z)) · exp(−(x−z)²/(2t)) · (1 − exp(−2xz/t)) / √(2πt)`.
///
/// As a function of `z` on `(0, ∞)` this is unimodal: a Gaussian bump
/// around `x` tilted left by the exponential factor and pinched to zero at
/// the origin by the positivity factor.  For large `t` the bump flattens
/// and the mass shifts toward the tilt/positivity balance point `1/ρ`.
pub fn bridge_weight(rho: f64, x: f64, t: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let gauss = (-(x - z) * (x - z) / (2.0 * t)).exp();
    let positivity = -(-2.0 * x * z / t).exp_m1();
    (rho * (x - z)).exp() * gauss * positivity / (2.0 * std::f64::consts::PI * t).sqrt()
}

/// Monte Carlo estimate of the inner expectation of the bridge
/// representation at one spine endpoint `z`: statistics of the
/// bridge-with-births configuration restricted to realisations with no
/// particle above `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeNodeEstimate {
    /// Endpoint the bridge starts from (rightmost-particle position).
    pub z: f64,
    /// `E[1{no particle above z}]` (the `unit` statistic under the
    /// restriction).
    pub survival: EstimateWithCI,
    /// `E[(N ∧ 10)·1{no particle above z}]`.
    pub capped_count: EstimateWithCI,
}

/// One bridge-construction replica: a Bessel(3) bridge from `z` (age 0) to
/// `x` (age `t`), realised as the norm of three independent scalar
/// Brownian bridges, carries birth ages at rate `2·branching_rate`; each
/// birth at age `a` seeds an absorbed run of duration `a` from the bridge's
/// height.  Returns the assembled configuration (`z` plus all burst
/// particles).
fn bridge_replica(
    params: &DiagParams,
    absorbed: &SimParams,
    x: f64,
    z: f64,
    t: f64,
    stream: &mut RandomStream,
) -> Result<PointConfiguration> {
    let ages = sample_poisson_times(stream, 2.0 * params.branching_rate, t)?;
    let mut positions = vec![z];
    // Norm-of-three-bridges representation: component 1 runs z → x, the
    // other two run 0 → 0; sampled sequentially at the birth ages.
    let mut comps = [z, 0.0, 0.0];
    let ends = [x, 0.0, 0.0];
    let mut prev = 0.0;
    for &age in &ages {
        let remaining = t - prev;
        let step = age - prev;
        let frac = step / remaining;
        let sd = (step * (t - age) / remaining).sqrt();
        for (c, e) in comps.iter_mut().zip(ends) {
            let mean = *c + frac * (e - *c);
            *c = stream.gaussian(mean, sd);
        }
        prev = age;
        let height = comps.iter().map(|c| c * c).sum::<f64>().sqrt();
        let init = PointConfiguration::single(height)?;
        let burst = simulate_until(absorbed, &init, age, stream)?;
        positions.extend(burst.iter());
        if positions.len() as u64 > params.max_population {
            return Err(Error::Censored(format!(
                "bridge replica exceeded {} particles",
                params.max_population
            )));
        }
    }
    PointConfiguration::new(positions)
}

/// Estimate the restricted statistics at one bridge endpoint `z` from `n`
/// replicas.  Exposed so callers can fan nodes out across threads with one
/// stream per node.
pub fn bridge_node_estimate(
    params: &DiagParams,
    x: f64,
    z: f64,
    t: f64,
    n: u64,
    stream: &mut RandomStream,
) -> Result<BridgeNodeEstimate> {
    params.validate()?;
    ensure_finite(x, "start x")?;
    ensure_finite(z, "endpoint z")?;
    ensure_finite(t, "horizon t")?;
    if x <= 0.0 || z <= 0.0 || t <= 0.0 {
        return Err(Error::invalid(format!(
            "bridge parameters must be positive, got x={x}, z={z}, t={t}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 replicas per node"));
    }
    let absorbed = params.absorbed_sim()?;
    let mut survival = Vec::with_capacity(n as usize);
    let mut capped = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let config = bridge_replica(params, &absorbed, x, z, t, stream)?;
        let clear = config.iter().all(|p| p <= z);
        let keep = if clear { 1.0 } else { 0.0 };
        survival.push(keep);
        capped.push(keep * config.count_n().min(10) as f64);
    }
    Ok(BridgeNodeEstimate {
        z,
        survival: mean_with_stderr(&survival),
        capped_count: mean_with_stderr(&capped),
    })
}

/// Weighted per-node contribution to the bridge-side integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeNodeContribution {
    /// Bridge endpoint.
    pub z: f64,
    /// Contribution of this node to the survival statistic's integral.
    pub contribution: f64,
    /// Monte Carlo standard error of that contribution.
    pub stderr: f64,
}

/// Outcome of [`verify_bridge_representation`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeIdentityReport {
    /// Start of the forward process.
    pub x: f64,
    /// Horizon.
    pub t: f64,
    /// Forward (plain absorbed MC, scaled by `e^{−t(1−ρ²/2)}`) versus
    /// bridge-side quadrature for each statistic.
    pub comparisons: Vec<FunctionalComparison>,
    /// Per-node weighted contributions (survival statistic), in increasing
    /// `z` order.
    pub nodes: Vec<BridgeNodeContribution>,
    /// Set when adjacent significant node contributions jump by more than
    /// 50%, indicating the quadrature grid under-resolves the integrand.
    pub grid_flag: bool,
    /// All comparisons within 3 pooled standard errors and no grid flag.
    pub pass: bool,
}

/// Cross-validate the bridge representation of the absorbed process.
///
/// The forward side runs `n` plain absorbed replicas from `x` and scales
/// the battery means by `e^{−t(1−ρ²/2)}`.  The bridge side integrates the
/// restricted bridge-construction expectations against [`bridge_weight`]
/// over the endpoint `z`, using `params.quad_nodes` Gauss–Legendre nodes
/// placed against the `e^{−ρz}` envelope (substitution `z = −ln(v)/ρ`) with
/// `params.per_node` replicas each.  Statistics compared: survival
/// (`1{configuration non-empty}`) and the count capped at 10 — both vanish
/// on extinction, as the identity requires.
///
/// # Errors
///
/// Invalid parameters (`x ≤ 0`, `t` outside `(0, 6]`), or a censored
/// embedded simulation.
pub fn verify_bridge_representation(
    params: &DiagParams,
    x: f64,
    t: f64,
    n: u64,
    stream: &mut RandomStream,
) -> Result<BridgeIdentityReport> {
    params.validate()?;
    ensure_finite(x, "start x")?;
    ensure_finite(t, "horizon t")?;
    if x <= 0.0 {
        return Err(Error::invalid(format!("start must be positive, got {x}")));
    }
    if !(0.0..=6.0).contains(&t) || t == 0.0 {
        return Err(Error::invalid(format!(
            "bridge comparison is calibrated for horizons in (0, 6], got {t}"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 forward replicas"));
    }
    let rho = params.rho;

    // Forward side: absorbed process, battery scaled by e^{−t(1−ρ²/2)}.
    let absorbed = params.absorbed_sim()?;
    let init = PointConfiguration::single(x)?;
    let scale = (-t * (1.0 - rho * rho / 2.0)).exp();
    let mut survival_values = Vec::with_capacity(n as usize);
    let mut capped_values = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let config = simulate_until(&absorbed, &init, t, stream)?;
        let b = battery_values(&config);
        survival_values.push(scale * b[0]);
        capped_values.push(scale * b[2]);
    }
    let forward = [
        mean_with_stderr(&survival_values),
        mean_with_stderr(&capped_values),
    ];

    // Bridge side: Gauss–Legendre in v = e^{−ρz} on (0, 1), so
    // ∫₀^∞ e^{−ρz}·ψ(z) dz = (1/ρ)·∫₀^1 ψ(−ln v/ρ) dv with the full weight
    // split as  bridge_weight(z) = e^{ρx}·e^{−ρz}·rest(z).
    let (vs, ws) = gauss_legendre_on(params.quad_nodes, 0.0, 1.0)?;
    let mut node_order: Vec<usize> = (0..vs.len()).collect();
    // Increasing z means decreasing v.
    node_order.sort_by(|&a, &b| vs[b].total_cmp(&vs[a]));
    let mut nodes = Vec::with_capacity(vs.len());
    let mut bridge_total = [0.0f64; 2];
    let mut bridge_var = [0.0f64; 2];
    let mut psi_survival = Vec::with_capacity(vs.len());
    for &k in &node_order {
        let z = -vs[k].ln() / rho;
        let est = bridge_node_estimate(params, x, z, t, params.per_node, stream)?;
        // dz = dv/(ρv), and e^{ρz} = 1/v exactly by construction, so the
        // node's coefficient is a_k·weight(z_k)/(ρ·v_k).
        let coeff = ws[k] * bridge_weight(rho, x, t, z) / (rho * vs[k]);
        for (i, e) in [est.survival, est.capped_count].into_iter().enumerate() {
            bridge_total[i] += coeff * e.estimate;
            bridge_var[i] += (coeff * e.stderr).powi(2);
        }
        // The function the quadrature rule actually samples (integrand in
        // the substituted variable, constant factors dropped).
        psi_survival.push(bridge_weight(rho, x, t, z) / vs[k] * est.survival.estimate);
        nodes.push(BridgeNodeContribution {
            z,
            contribution: coeff * est.survival.estimate,
            stderr: coeff * est.survival.stderr,
        });
    }
    let bridge = [
        EstimateWithCI {
            estimate: bridge_total[0],
            stderr: bridge_var[0].sqrt(),
            n: params.per_node * params.quad_nodes as u64,
        },
        EstimateWithCI {
            estimate: bridge_total[1],
            stderr: bridge_var[1].sqrt(),
            n: params.per_node * params.quad_nodes as u64,
        },
    ];

    // Grid diagnostic: among integrand values carrying at least 2% of the
    // peak, adjacent nodes jumping by more than 50% mean the node placement
    // under-resolves the integrand's shape.
    let peak = psi_survival.iter().fold(0.0f64, |a, &b| a.max(b));
    let grid_flag = psi_survival.windows(2).any(|w| {
        let (a, b) = (w[0], w[1]);
        a >= 0.02 * peak && b >= 0.02 * peak && (a - b).abs() > 0.5 * a.max(b)
    });

    let comparisons = vec![
        FunctionalComparison::build("survival", forward[0], bridge[0]),
        FunctionalComparison::build("count-capped-at-10", forward[1], bridge[1]),
    ];
    let pass = comparisons.iter().all(|c| c.z.abs() <= 3.0) && !grid_flag;
    Ok(BridgeIdentityReport {
        x,
        t,
        comparisons,
        nodes,
        grid_flag,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(id: u64) -> RandomStream {
        RandomStream::new(0x5eed_e4e1, id)
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(DiagParams::new(-1.0).validate().is_err());
        assert!(DiagParams::new(f64::NAN).validate().is_err());
        assert!(DiagParams::new(2.0)
            .with_quad_nodes(1)
            .validate()
            .is_err());
        assert!(DiagParams::new(2.0).with_per_node(0).validate().is_err());
        assert!(DiagParams::new(2.0)
            .with_max_population(0)
            .validate()
            .is_err());

        let p = DiagParams::new(2.0);
        let mut s = stream(70);
        assert!(estimate_normalized_weight(&p, 1.0, 0.0, 100, &mut s).is_err());
        assert!(estimate_normalized_weight(&p, f64::NAN, 1.0, 100, &mut s).is_err());
        assert!(verify_spine_selection(&p, 1.0, 1.0, 10, &mut s).is_err());
        assert!(verify_bridge_representation(&p, 0.0, 1.0, 100, &mut s).is_err());
        assert!(verify_bridge_representation(&p, 1.0, 7.0, 100, &mut s).is_err());
        assert!(bridge_node_estimate(&p, 1.0, -0.2, 1.0, 100, &mut s).is_err());
    }

    #[test]
    fn normalized_weight_has_unit_mean() {
        let p = DiagParams::new(2.0);
        for (i, &t) in [0.5, 1.0, 2.0].iter().enumerate() {
            let n = if t < 2.0 { 30_000 } else { 60_000 };
            let mut s = stream(71 + i as u64);
            let est = estimate_normalized_weight(&p, 1.0, t, n, &mut s).unwrap();
            assert!(
                est.within(1.0, 3.0),
                "normalised weight mean at t={t}: {} ± {}",
                est.estimate,
                est.stderr
            );
        }
    }

    #[test]
    fn distinguished_lineage_matches_the_weighted_process() {
        let p = DiagParams::new(2.0);
        let mut s = stream(72);
        let report = verify_spine_selection(&p, 1.0, 0.5, 30_000, &mut s).unwrap();
        assert!(
            report.pass,
            "battery: {:?}\nselection: {:?}",
            report.battery, report.selection
        );
        // The unit functional's rhs is exactly 1 with zero spread.
        let unit = &report.battery[0];
        assert_eq!(unit.rhs.estimate, 1.0);
        assert_eq!(unit.rhs.stderr, 0.0);
        assert!(report.selection.p_value >= 0.01);
    }

    #[test]
    fn selection_shares_follow_the_exponential_weights_at_longer_horizon() {
        let p = DiagParams::new(1.0);
        let mut s = stream(73);
        let report = verify_spine_selection(&p, 0.0, 1.5, 20_000, &mut s).unwrap();
        assert!(
            report.pass,
            "battery: {:?}\nselection: {:?}",
            report.battery, report.selection
        );
    }

    #[test]
    fn bridge_representation_matches_forward_simulation() {
        let p = DiagParams::new(2.0).with_per_node(4_000);
        let mut s = stream(74);
        let report = verify_bridge_representation(&p, 1.0, 2.0, 40_000, &mut s).unwrap();
        assert!(!report.grid_flag, "nodes: {:?}", report.nodes);
        for c in &report.comparisons {
            assert!(
                c.z.abs() <= 3.0,
                "{}: forward {} ± {} vs bridge {} ± {}",
                c.name,
                c.lhs.estimate,
                c.lhs.stderr,
                c.rhs.estimate,
                c.rhs.stderr
            );
        }
        assert!(report.pass);
        // Node contributions must reassemble the bridge estimate.
        let total: f64 = report.nodes.iter().map(|nd| nd.contribution).sum();
        let survival = &report.comparisons[0];
        assert!((total - survival.rhs.estimate).abs() <= 1e-12 * total.abs().max(1.0));
        // Both sides are strictly positive at these parameters.
        assert!(survival.lhs.estimate > 0.0);
        assert!(survival.rhs.estimate > 0.0);
    }

    #[test]
    fn near_barrier_start_sends_both_sides_to_zero() {
        let p = DiagParams::new(2.0).with_per_node(400);
        let mut s = stream(75);
        let report = verify_bridge_representation(&p, 0.05, 2.0, 20_000, &mut s).unwrap();
        let survival = &report.comparisons[0];
        // e^{t}·P(survive to 2 from 0.05) is small, and the bridge side
        // must agree.
        assert!(survival.lhs.estimate < 0.2, "forward: {:?}", survival.lhs);
        assert!(survival.z.abs() <= 3.0);
    }

    #[test]
    fn bridge_weight_is_unimodal_and_mass_shifts_with_horizon() {
        for &(rho, x, t) in &[(2.0, 1.0, 4.0), (2.0, 0.5, 10.0), (2.5, 2.0, 2.0)] {
            let grid: Vec<f64> = (1..4000).map(|i| i as f64 * 0.005).collect();
            let vals: Vec<f64> = grid
                .iter()
                .map(|&z| bridge_weight(rho, x, t, z))
                .collect();
            let mut rises_ended = false;
            for w in vals.windows(2) {
                if w[1] > w[0] {
                    assert!(
                        !rises_ended,
                        "second rise at rho={rho}, x={x}, t={t}"
                    );
                } else if w[1] < w[0] {
                    rises_ended = true;
                }
            }
            // The positivity factor pins the weight to zero at the origin.
            assert_eq!(bridge_weight(rho, x, t, 0.0), 0.0);
        }
        // Short horizons put the peak at the start point; long horizons pull
        // it toward the tilt/positivity balance point 1/ρ.
        let argmax = |rho: f64, x: f64, t: f64| {
            let mut best = (0.0, f64::NEG_INFINITY);
            for i in 1..20_000 {
                let z = i as f64 * 0.001;
                let v = bridge_weight(rho, x, t, z);
                if v > best.1 {
                    best = (z, v);
                }
            }
            best.0
        };
        assert!((argmax(2.0, 1.0, 0.05) - 1.0).abs() < 0.15);
        assert!((argmax(2.0, 1.0, 10_000.0) - 0.5).abs() < 0.1);
    }

    #[test]
    fn reports_are_deterministic() {
        let p = DiagParams::new(2.0).with_per_node(200);
        let run = || {
            let mut s = stream(76);
            let sel = verify_spine_selection(&p, 1.0, 0.5, 500, &mut s).unwrap();
            let bri = verify_bridge_representation(&p, 1.0, 1.0, 500, &mut s).unwrap();
            (
                serde_json::to_string(&sel).unwrap(),
                serde_json::to_string(&bri).unwrap(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn censored_subsimulations_propagate() {
        let p = DiagParams::new(0.0).with_max_population(3);
        let mut s = stream(77);
        match verify_spine_selection(&p, 1.0, 8.0, 100, &mut s) {
            Err(Error::Censored(_)) => {}
            other => panic!("expected a censored run, got {other:?}"),
        }
    }
}
