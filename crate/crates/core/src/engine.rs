//! Event-driven simulation of binary branching Brownian motion with drift
//! `−ρ`, absorbed at 0, optionally killed at a moving upper boundary.
//!
//! With the flat barrier alone the simulation is *exact*: each particle's
//! lifetime is an exponential branching clock, its endpoint a Gaussian, and
//! survival against the barrier a Bernoulli with the exact Brownian-bridge
//! positivity probability (the drift drops out of the bridge law). Death
//! times come from the exact bridge first-hit law, so extinction times carry
//! no discretisation bias.
//!
//! With the moving upper boundary, inter-event intervals are walked on a
//! `crossing_dt` grid: endpoints are exact Gaussians, absorption at 0 uses
//! the exact bridge probability, and crossings of the boundary are tested
//! against the boundary's chord on each sub-step. Treating the two barrier
//! checks sequentially within a sub-step, and the curve as its chord, is the
//! one approximation in this mode; it is second-order in the step and is
//! checked by self-convergence under step halving.
//!
//! Snapshots at requested times never shrink an event interval: each
//! particle's bridge is conditioned on its already-sampled future. Surviving
//! segments draw a rejection-sampled positive bridge midpoint; segments
//! headed to absorption use the three-component representation of the
//! positive path conditioned on its hitting time.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::collections::BinaryHeap;

use crate::analytic::BoundaryCurve;
use crate::configuration::PointConfiguration;
use crate::rng::{bridge_hit_time, bridge_survival_prob, RandomStream};
use crate::{ensure_finite, Error, Result};

/// Upper-boundary mode.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub enum Boundary {
    /// Only the absorbing barrier at 0 (if enabled).
    BarrierOnly,
    /// Additional killing at the moving boundary `L(s) = c(t−s)^{1/3}`
    /// anchored at the given horizon `t`.
    Moving { horizon: f64 },
}

/// Simulation parameters.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SimParams {
    /// Drift magnitude `ρ ≥ 0` (particles drift downward at rate `ρ`).
    pub rho: f64,
    /// Binary branching rate; 1 for the modelled process. Setting 0
    /// suppresses branching (single-particle test hook).
    pub branching_rate: f64,
    /// Absorb at 0 (the modelled process). `false` is a diagnostic hook for
    /// moment checks on the free process; positions may then be any reals.
    pub absorb_at_origin: bool,
    pub boundary: Boundary,
    /// Censor the run once the population exceeds this cap.
    pub max_population: u64,
    /// Censor the run at this time if it is still alive.
    pub max_time: Option<f64>,
    /// Sub-step for boundary-crossing checks (moving boundary only).
    pub crossing_dt: f64,
    /// Times at which to record full configurations (sorted and
    /// deduplicated before use).
    pub snapshot_times: Vec<f64>,
}

impl SimParams {
    /// Parameters with the standard defaults: branching rate 1, absorption
    /// on, flat barrier only, population cap `10⁷`, no time cap, crossing
    /// step `10⁻³`, no snapshots.
    ///
    /// # Errors
    /// `rho` negative or non-finite.
    pub fn new(rho: f64) -> Result<Self> {
        ensure_finite(rho, "drift rho")?;
        if rho < 0.0 {
            return Err(Error::invalid(format!("drift must be non-negative, got rho={rho}")));
        }
        Ok(SimParams {
            rho,
            branching_rate: 1.0,
            absorb_at_origin: true,
            boundary: Boundary::BarrierOnly,
            max_population: 10_000_000,
            max_time: None,
            crossing_dt: 1e-3,
            snapshot_times: Vec::new(),
        })
    }

    pub fn with_branching_rate(mut self, rate: f64) -> Self {
        self.branching_rate = rate;
        self
    }

    pub fn without_absorption(mut self) -> Self {
        self.absorb_at_origin = false;
        self
    }

    pub fn with_moving_boundary(mut self, horizon: f64) -> Self {
        self.boundary = Boundary::Moving { horizon };
        self
    }

    pub fn with_max_population(mut self, cap: u64) -> Self {
        self.max_population = cap;
        self
    }

    pub fn with_max_time(mut self, t: f64) -> Self {
        self.max_time = Some(t);
        self
    }

    pub fn with_crossing_dt(mut self, dt: f64) -> Self {
        self.crossing_dt = dt;
        self
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure_finite(self.rho, "drift rho")?;
        ensure_finite(self.branching_rate, "branching rate")?;
        if self.rho < 0.0 {
            return Err(Error::invalid(format!("drift must be non-negative, got {}", self.rho)));
        }
        if self.branching_rate < 0.0 {
            return Err(Error::invalid(format!(
                "branching rate must be non-negative, got {}",
                self.branching_rate
            )));
        }
        if self.max_population == 0 {
            return Err(Error::invalid("population cap must be at least 1"));
        }
        if let Some(t) = self.max_time {
            ensure_finite(t, "max_time")?;
            if t <= 0.0 {
                return Err(Error::invalid(format!("max_time must be positive, got {t}")));
            }
        }
        if let Boundary::Moving { horizon } = self.boundary {
            ensure_finite(horizon, "boundary horizon")?;
            if horizon <= 0.0 {
                return Err(Error::invalid(format!(
                    "boundary horizon must be positive, got {horizon}"
                )));
            }
            ensure_finite(self.crossing_dt, "crossing_dt")?;
            if self.crossing_dt <= 0.0 {
                return Err(Error::invalid(format!(
                    "crossing_dt must be positive, got {}",
                    self.crossing_dt
                )));
            }
            if !self.absorb_at_origin {
                return Err(Error::invalid(
                    "the moving-boundary mode requires absorption at the origin",
                ));
            }
        }
        for &s in &self.snapshot_times {
            ensure_finite(s, "snapshot time")?;
            if s < 0.0 {
                return Err(Error::invalid(format!(
                    "snapshot times must be non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Why a run was censored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum CensorReason {
    MaxPopulation,
    MaxTime,
}

/// Censoring record: the run stopped at `time` without reaching its natural
/// end.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Censoring {
    pub reason: CensorReason,
    pub time: f64,
}

/// Outcome of a simulation run.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SimOutcome {
    /// Extinction time, if the process died before any cap or horizon.
    pub extinction_time: Option<f64>,
    /// Configuration at `stop_time`: empty at extinction; the live
    /// configuration at a horizon or censor time. Moving-boundary censoring
    /// leaves it empty — the eager walks cannot reconstruct the state there.
    pub final_config: PointConfiguration,
    /// When the run ended: extinction, requested horizon, or censor time.
    pub stop_time: f64,
    pub censored: Option<Censoring>,
    /// Recorded configurations, ascending in time, one per distinct
    /// requested snapshot time the run reached (empty configurations once
    /// extinct).
    pub snapshots: Vec<(f64, PointConfiguration)>,
    /// Particles killed at the moving boundary (0 in flat mode).
    pub boundary_kills: u64,
    /// Particles absorbed at 0.
    pub absorbed_count: u64,
    /// Branch events (each adds one net particle).
    pub branch_events: u64,
    pub initial_count: u64,
}

impl SimOutcome {
    /// Exact census identity: branchings minus removals equals the net
    /// population change. Holds for every run whose final configuration is
    /// available (all flat-mode runs; moving-mode runs unless censored).
    pub fn census_balanced(&self) -> bool {
        let net = self.branch_events as i64
            - self.absorbed_count as i64
            - self.boundary_kills as i64;
        net == self.final_config.count_n() as i64 - self.initial_count as i64
    }
}

/// Run the process from `init`, stopping at extinction, the optional
/// `horizon`, or a cap. This is the general entry point; the `simulate_*`
/// wrappers cover the common calling conventions.
///
/// # Errors
/// Invalid parameters; an initial particle at or below 0 (with absorption)
/// or at/above the moving boundary; an empty `init` with nothing to bound
/// the run. Cap hits are reported via `censored`, not as errors.
pub fn simulate(
    params: &SimParams,
    init: &PointConfiguration,
    horizon: Option<f64>,
    stream: &mut RandomStream,
) -> Result<SimOutcome> {
    params.validate()?;
    if let Some(h) = horizon {
        ensure_finite(h, "horizon")?;
        if h < 0.0 {
            return Err(Error::invalid(format!("horizon must be non-negative, got {h}")));
        }
    }
    if params.absorb_at_origin {
        for x in init.iter() {
            if x <= 0.0 {
                return Err(Error::invalid(format!(
                    "initial particle at {x} is not above the absorbing barrier"
                )));
            }
        }
    }
    match params.boundary {
        Boundary::BarrierOnly => simulate_flat(params, init, horizon, stream),
        Boundary::Moving { horizon: t } => simulate_moving(params, init, horizon, t, stream),
    }
}

/// Run until extinction (or a cap) and return the outcome.
///
/// # Errors
/// Empty `init`; or `rho < √2` on the flat barrier with no `max_time` set
/// (a near- or super-critical run may never end).
pub fn simulate_to_extinction(
    params: &SimParams,
    init: &PointConfiguration,
    stream: &mut RandomStream,
) -> Result<SimOutcome> {
    if init.is_empty() {
        return Err(Error::EmptyConfiguration("simulate_to_extinction"));
    }
    if params.rho < std::f64::consts::SQRT_2
        && params.max_time.is_none()
        && params.branching_rate > 0.0
        && matches!(params.boundary, Boundary::BarrierOnly)
    {
        return Err(Error::invalid(
            "extinction is not almost-sure for rho < sqrt(2): set max_time to bound the run",
        ));
    }
    simulate(params, init, None, stream)
}

/// State of the process at time `s` (empty if extinct by then).
///
/// # Errors
/// Invalid parameters, or a cap censored the run before `s` (the exact law
/// at `s` is then unavailable).
pub fn simulate_until(
    params: &SimParams,
    init: &PointConfiguration,
    s: f64,
    stream: &mut RandomStream,
) -> Result<PointConfiguration> {
    let outcome = simulate(params, init, Some(s), stream)?;
    if let Some(c) = outcome.censored {
        return Err(Error::Censored(format!(
            "run censored ({:?}) at time {} before the requested time {s}",
            c.reason, c.time
        )));
    }
    Ok(outcome.final_config)
}

/// Run the two-barrier (truncated) process up to time `s ≤ horizon`.
///
/// # Errors
/// Parameters without a moving boundary, or `s` outside `[0, horizon]`.
pub fn simulate_truncated(
    params: &SimParams,
    init: &PointConfiguration,
    s: f64,
    stream: &mut RandomStream,
) -> Result<SimOutcome> {
    let Boundary::Moving { horizon } = params.boundary else {
        return Err(Error::invalid(
            "simulate_truncated requires SimParams with a moving boundary",
        ));
    };
    ensure_finite(s, "stop time s")?;
    if !(0.0..=horizon).contains(&s) {
        return Err(Error::invalid(format!("stop time must lie in [0, {horizon}], got {s}")));
    }
    simulate(params, init, Some(s), stream)
}

/// Final state of the absorbed flat-barrier process at time `s`, with an
/// early exit: as soon as one particle is known to end strictly above
/// `level`, the walk stops and `None` comes back with most of the tree
/// unexplored. `Some` carries the complete final configuration, every
/// position at or below `level`.
///
/// The tree is walked one segment at a time in best-first order — the
/// pending particle whose subtree has the largest expected number of final
/// descendants above `level` is extended next — using the same per-segment
/// draws as [`simulate_until`]: exponential lifetime, Gaussian endpoint,
/// bridge-survival check. Exploration order only changes when each part of
/// the already-determined tree is revealed, so the verdict and any returned
/// configuration follow exactly the law of `simulate_until(params, init, s)`
/// post-processed by the same threshold test; only the order and amount of
/// random-number consumption differ. Death times and interior positions are
/// ancillary to the verdict and are never sampled.
///
/// Populations whose final state ends above `level` are usually transient
/// booms, so steering straight to an exceeding lineage removes the
/// exponential cost (and memory) of materializing the boom. This is the
/// intended verdict path for rejection samplers; use [`simulate_until`]
/// when the full configuration is needed unconditionally.
///
/// # Errors
/// Anything other than the absorbed flat barrier without `max_time` or
/// snapshot instrumentation; a non-positive initial position; a negative or
/// non-finite `s` or non-finite `level`; work cap exceeded (counted in
/// segments against `max_population`, reported as censoring).
pub fn simulate_until_or_above(
    params: &SimParams,
    init: &PointConfiguration,
    s: f64,
    level: f64,
    stream: &mut RandomStream,
) -> Result<Option<PointConfiguration>> {
    params.validate()?;
    if !matches!(params.boundary, Boundary::BarrierOnly) || !params.absorb_at_origin {
        return Err(Error::invalid(
            "the exceedance walk covers the absorbed flat-barrier process only",
        ));
    }
    if params.max_time.is_some() || !params.snapshot_times.is_empty() {
        return Err(Error::invalid(
            "the exceedance walk takes no max_time and records no snapshots",
        ));
    }
    ensure_finite(s, "stop time s")?;
    if s < 0.0 {
        return Err(Error::invalid(format!("stop time must be non-negative, got {s}")));
    }
    ensure_finite(level, "exceedance level")?;
    for x in init.iter() {
        if x <= 0.0 {
            return Err(Error::invalid(format!(
                "initial particle at {x} is not above the absorbing barrier"
            )));
        }
    }

    let lambda = params.branching_rate;
    let rho = params.rho;

    // One pending particle, ranked by the expected number of its final
    // descendants above `level` (log scale, image term dropped): remaining
    // time plus the Gaussian log-mass the drifted endpoint puts above the
    // level. Ties break on insertion id so the walk is deterministic.
    struct Pending {
        score: f64,
        id: u64,
        t: f64,
        x: f64,
    }
    impl PartialEq for Pending {
        fn eq(&self, other: &Self) -> bool {
            self.score.total_cmp(&other.score).is_eq() && self.id == other.id
        }
    }
    impl Eq for Pending {}
    impl PartialOrd for Pending {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Pending {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.score.total_cmp(&other.score).then(self.id.cmp(&other.id))
        }
    }

    let score = |t: f64, x: f64| -> f64 {
        let r = s - t;
        if r <= 0.0 {
            return if x > level { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        r + crate::analytic::ln_norm_cdf((x - rho * r - level) / r.sqrt())
    };

    let mut heap: BinaryHeap<Pending> = BinaryHeap::new();
    let mut next_id: u64 = 0;
    for x in init.iter() {
        heap.push(Pending { score: score(0.0, x), id: next_id, t: 0.0, x });
        next_id += 1;
    }
    let mut finals: Vec<f64> = Vec::new();
    let mut segments: u64 = 0;
    while let Some(Pending { t, x, .. }) = heap.pop() {
        segments += 1;
        if segments > params.max_population {
            return Err(Error::Censored(format!(
                "exceedance walk exhausted its work cap of {} segments",
                params.max_population
            )));
        }
        let te = if lambda > 0.0 { t + stream.exponential(lambda) } else { f64::INFINITY };
        let (end, branches) = if te <= s { (te, true) } else { (s, false) };
        let delta = end - t;
        let g = if delta > 0.0 {
            let g = stream.gaussian(x - rho * delta, delta.sqrt());
            let survives = g > 0.0 && {
                let p = bridge_survival_prob(x, g, delta).expect("validated endpoints");
                stream.bernoulli(p)
            };
            if !survives {
                continue; // absorbed: the lineage ends here
            }
            g
        } else {
            x
        };
        if branches {
            let child_score = score(end, g);
            heap.push(Pending { score: child_score, id: next_id, t: end, x: g });
            heap.push(Pending { score: child_score, id: next_id + 1, t: end, x: g });
            next_id += 2;
        } else {
            if g > level {
                return Ok(None);
            }
            finals.push(g);
        }
    }
    Ok(Some(PointConfiguration::new(finals)?))
}

// ---------------------------------------------------------------------------
// Shared event plumbing
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Death { boundary: bool },
    Branch,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    id: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Time order; ties broken by particle id.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.id.cmp(&other.id))
            .then_with(|| self.kind.cmp(&other.kind))
    }
}

#[derive(Default)]
struct Counters {
    branch_events: u64,
    absorbed: u64,
    boundary_kills: u64,
}

fn sorted_snaps(times: &[f64], cap: Option<f64>) -> Vec<f64> {
    let mut snaps: Vec<f64> = times
        .iter()
        .copied()
        .filter(|&t| cap.is_none_or(|s| t <= s))
        .collect();
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();
    snaps
}

// ---------------------------------------------------------------------------
// Flat-barrier mode: fully exact, event-driven
// ---------------------------------------------------------------------------

/// A particle's current inter-event segment. `t_ref` is the refinement
/// front: the latest time at which the position is pinned (by creation or a
/// snapshot), conditioned on everything already sampled about the segment.
#[derive(Clone, Debug)]
struct Segment {
    t_ref: f64,
    kind: SegKind,
}

#[derive(Clone, Debug)]
enum SegKind {
    /// Stays alive through `t_end`, where it sits at `x_end` (and branches
    /// if a branch event is queued for it).
    Surviving { x_ref: f64, t_end: f64, x_end: f64 },
    /// Hits 0 at `t_death`; the conditioned positive path is the norm of a
    /// three-component Brownian bridge ending at the origin.
    Dying { comps: [f64; 3], t_death: f64 },
}

const MIDPOINT_ATTEMPT_CAP: u64 = 10_000_000;

struct FlatSim<'a> {
    params: &'a SimParams,
    stop: Option<f64>,
    registry: BTreeMap<u64, Segment>,
    heap: BinaryHeap<Reverse<Event>>,
    next_id: u64,
    counters: Counters,
}

impl FlatSim<'_> {
    /// Sample a fresh segment from `(t0, x0)` and queue its event.
    fn spawn(&mut self, t0: f64, x0: f64, stream: &mut RandomStream) {
        let id = self.next_id;
        self.next_id += 1;
        let te_raw = if self.params.branching_rate > 0.0 {
            t0 + stream.exponential(self.params.branching_rate)
        } else {
            f64::INFINITY
        };
        let (t_end, branches) = match self.stop {
            Some(stop) if te_raw > stop => (stop, false),
            _ => (te_raw, true),
        };
        debug_assert!(t_end.is_finite(), "unbounded non-branching segment");
        let delta = t_end - t0;

        let seg = if delta > 0.0 {
            let g = stream.gaussian(x0 - self.params.rho * delta, delta.sqrt());
            if self.params.absorb_at_origin {
                let survives = g > 0.0 && {
                    let p = bridge_survival_prob(x0, g, delta).expect("validated endpoints");
                    stream.bernoulli(p)
                };
                if !survives {
                    let tau =
                        t0 + bridge_hit_time(stream, x0, g, delta).expect("validated endpoints");
                    self.heap.push(Reverse(Event {
                        time: tau,
                        id,
                        kind: EventKind::Death { boundary: false },
                    }));
                    self.registry.insert(
                        id,
                        Segment {
                            t_ref: t0,
                            kind: SegKind::Dying { comps: [x0, 0.0, 0.0], t_death: tau },
                        },
                    );
                    return;
                }
            }
            Segment { t_ref: t0, kind: SegKind::Surviving { x_ref: x0, t_end, x_end: g } }
        } else {
            Segment { t_ref: t0, kind: SegKind::Surviving { x_ref: x0, t_end: t0, x_end: x0 } }
        };

        if branches {
            self.heap.push(Reverse(Event { time: t_end, id, kind: EventKind::Branch }));
        }
        self.registry.insert(id, seg);
    }

    /// Position of a live segment at time `s ∈ [t_ref, end]`, advancing the
    /// refinement front. Exact: conditioned on the segment's already-sampled
    /// endpoint or death time.
    fn refine(&mut self, id: u64, s: f64, stream: &mut RandomStream) -> Result<f64> {
        let absorb = self.params.absorb_at_origin;
        let seg = self.registry.get_mut(&id).expect("refining a live segment");
        debug_assert!(s >= seg.t_ref);
        match &mut seg.kind {
            SegKind::Surviving { x_ref, t_end, x_end } => {
                if s <= seg.t_ref {
                    return Ok(*x_ref);
                }
                if s >= *t_end {
                    seg.t_ref = *t_end;
                    *x_ref = *x_end;
                    return Ok(*x_end);
                }
                let d1 = s - seg.t_ref;
                let d2 = *t_end - s;
                let span = *t_end - seg.t_ref;
                let mean = *x_ref + (*x_end - *x_ref) * d1 / span;
                let sd = (d1 * d2 / span).sqrt();
                let m = if absorb {
                    // Rejection: propose the free bridge midpoint, accept
                    // with the probability that both half-bridges stay
                    // positive — exactly the conditioned midpoint law.
                    let mut accepted = None;
                    for _ in 0..MIDPOINT_ATTEMPT_CAP {
                        let m = stream.gaussian(mean, sd);
                        if m <= 0.0 {
                            continue;
                        }
                        let p1 = bridge_survival_prob(*x_ref, m, d1).expect("positive endpoints");
                        let p2 = bridge_survival_prob(m, *x_end, d2).expect("positive endpoints");
                        if stream.bernoulli(p1 * p2) {
                            accepted = Some(m);
                            break;
                        }
                    }
                    accepted.ok_or(Error::AttemptCapExceeded {
                        attempts: MIDPOINT_ATTEMPT_CAP,
                        context: "conditioned bridge midpoint rejection sampling".into(),
                    })?
                } else {
                    stream.gaussian(mean, sd)
                };
                seg.t_ref = s;
                *x_ref = m;
                Ok(m)
            }
            SegKind::Dying { comps, t_death } => {
                debug_assert!(s < *t_death, "refining a segment past its death");
                let d1 = s - seg.t_ref;
                let span = *t_death - seg.t_ref;
                let frac = d1 / span;
                let sd = (d1 * (span - d1) / span).max(0.0).sqrt();
                for c in comps.iter_mut() {
                    // Brownian bridge to 0 in each coordinate.
                    *c = stream.gaussian(*c * (1.0 - frac), sd);
                }
                seg.t_ref = s;
                Ok((comps[0] * comps[0] + comps[1] * comps[1] + comps[2] * comps[2]).sqrt())
            }
        }
    }

    /// Positions of all live particles at time `s`, in creation order.
    fn sync_positions(&mut self, s: f64, stream: &mut RandomStream) -> Result<Vec<f64>> {
        let ids: Vec<u64> = self.registry.keys().copied().collect();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.push(self.refine(id, s, stream)?);
        }
        Ok(out)
    }

    fn make_config(&self, positions: Vec<f64>) -> Result<PointConfiguration> {
        if self.params.absorb_at_origin {
            PointConfiguration::new(positions)
        } else {
            PointConfiguration::from_unrestricted(positions)
        }
    }

    fn apply_death(&mut self, id: u64, boundary: bool) {
        self.registry.remove(&id);
        if boundary {
            self.counters.boundary_kills += 1;
        } else {
            self.counters.absorbed += 1;
        }
    }

    fn apply_branch(&mut self, id: u64, stream: &mut RandomStream) {
        let seg = self.registry.remove(&id).expect("branching segment");
        let SegKind::Surviving { x_end, t_end, .. } = seg.kind else {
            unreachable!("branch event queued on a dying segment")
        };
        self.counters.branch_events += 1;
        self.spawn(t_end, x_end, stream);
        self.spawn(t_end, x_end, stream);
    }
}

fn simulate_flat(
    params: &SimParams,
    init: &PointConfiguration,
    horizon: Option<f64>,
    stream: &mut RandomStream,
) -> Result<SimOutcome> {
    let stop = match (horizon, params.max_time) {
        (Some(h), Some(m)) => Some(h.min(m)),
        (Some(h), None) => Some(h),
        (None, m) => m,
    };
    if stop.is_none() {
        if init.is_empty() {
            return Err(Error::EmptyConfiguration("simulate without a stopping time"));
        }
        if params.branching_rate == 0.0 {
            return Err(Error::invalid(
                "a branching rate of 0 requires a horizon or max_time to bound the run",
            ));
        }
    }
    let mut sim = FlatSim {
        params,
        stop,
        registry: BTreeMap::new(),
        heap: BinaryHeap::new(),
        next_id: 0,
        counters: Counters::default(),
    };
    for x in init.iter() {
        sim.spawn(0.0, x, stream);
    }

    let snaps = sorted_snaps(&params.snapshot_times, stop);
    let mut snapshots: Vec<(f64, PointConfiguration)> = Vec::new();
    let mut snap_idx = 0usize;

    let mut extinction: Option<f64> = None;
    let mut censoring: Option<Censoring> = None;

    loop {
        let next_event = sim.heap.peek().map(|Reverse(e)| *e);
        let next_snap = snaps.get(snap_idx).copied();

        // Events run first at ties so snapshots observe post-event states.
        let event_due = next_event.is_some_and(|e| {
            stop.is_none_or(|s| e.time <= s) && next_snap.is_none_or(|s| e.time <= s)
        });

        if event_due {
            let Reverse(event) = sim.heap.pop().expect("peeked");
            match event.kind {
                EventKind::Death { boundary } => {
                    sim.apply_death(event.id, boundary);
                    if sim.registry.is_empty() {
                        extinction = Some(event.time);
                        break;
                    }
                }
                EventKind::Branch => {
                    sim.apply_branch(event.id, stream);
                    if sim.registry.len() as u64 > params.max_population {
                        // Finish simultaneous events, then freeze the state.
                        while let Some(&Reverse(e)) = sim.heap.peek() {
                            if e.time > event.time {
                                break;
                            }
                            sim.heap.pop();
                            match e.kind {
                                EventKind::Death { boundary } => sim.apply_death(e.id, boundary),
                                EventKind::Branch => sim.apply_branch(e.id, stream),
                            }
                        }
                        censoring = Some(Censoring {
                            reason: CensorReason::MaxPopulation,
                            time: event.time,
                        });
                        break;
                    }
                }
            }
            continue;
        }

        if let Some(s) = next_snap {
            let positions = sim.sync_positions(s, stream)?;
            snapshots.push((s, sim.make_config(positions)?));
            snap_idx += 1;
            continue;
        }
        break;
    }

    // The process outlives none of the remaining snapshot times once
    // extinct: record them as empty.
    if extinction.is_some() {
        while let Some(&s) = snaps.get(snap_idx) {
            snapshots.push((s, PointConfiguration::empty()));
            snap_idx += 1;
        }
    }

    let (stop_time, final_config) = if let Some(zeta) = extinction {
        (zeta, PointConfiguration::empty())
    } else if let Some(c) = censoring {
        let positions = sim.sync_positions(c.time, stream)?;
        (c.time, sim.make_config(positions)?)
    } else {
        let s = stop.expect("a run without a stop time ends only by extinction or censoring");
        if params.max_time == Some(s) && horizon.is_none_or(|h| s < h) {
            censoring = Some(Censoring { reason: CensorReason::MaxTime, time: s });
        }
        let positions = sim.sync_positions(s, stream)?;
        (s, sim.make_config(positions)?)
    };

    Ok(SimOutcome {
        extinction_time: extinction,
        final_config,
        stop_time,
        censored: censoring,
        snapshots,
        boundary_kills: sim.counters.boundary_kills,
        absorbed_count: sim.counters.absorbed,
        branch_events: sim.counters.branch_events,
        initial_count: init.count_n() as u64,
    })
}

// ---------------------------------------------------------------------------
// Moving-boundary mode: sub-stepped walks, eager per-segment sampling
// ---------------------------------------------------------------------------

enum WalkOutcome {
    Died { time: f64, boundary: bool },
    Survived { x_end: f64 },
}

struct MovingSim<'a> {
    params: &'a SimParams,
    curve: BoundaryCurve,
    stop: f64,
    snaps: Vec<f64>,
    /// Rows (snapshot index, particle id, position), written eagerly by
    /// walks as they pass snapshot times.
    snap_rows: Vec<(usize, u64, f64)>,
    final_alive: Vec<(u64, f64)>,
    /// Branch positions, keyed by id, for queued branch events.
    branch_pos: BTreeMap<u64, f64>,
    heap: BinaryHeap<Reverse<Event>>,
    next_id: u64,
    counters: Counters,
    alive: u64,
}

impl MovingSim<'_> {
    /// Walk a fresh particle's whole segment from `(t0, x0)`: exact Gaussian
    /// endpoints on the sub-step grid, exact absorption Bernoullis, chord
    /// crossing Bernoullis against the boundary. Queues the resulting event.
    fn spawn(&mut self, t0: f64, x0: f64, stream: &mut RandomStream) -> Result<()> {
        let id = self.next_id;
        self.next_id += 1;
        self.alive += 1;

        // A snapshot at the birth instant observes the newborn.
        let birth_snap = self.snaps.partition_point(|&s| s < t0);
        if self.snaps.get(birth_snap) == Some(&t0) {
            self.snap_rows.push((birth_snap, id, x0));
        }

        let te_raw = if self.params.branching_rate > 0.0 {
            t0 + stream.exponential(self.params.branching_rate)
        } else {
            f64::INFINITY
        };
        let (te, branches) = if te_raw > self.stop { (self.stop, false) } else { (te_raw, true) };

        match self.walk(t0, x0, te, id, stream)? {
            WalkOutcome::Died { time, boundary } => {
                self.heap.push(Reverse(Event { time, id, kind: EventKind::Death { boundary } }));
            }
            WalkOutcome::Survived { x_end } => {
                if branches {
                    self.branch_pos.insert(id, x_end);
                    self.heap.push(Reverse(Event { time: te, id, kind: EventKind::Branch }));
                } else {
                    self.final_alive.push((id, x_end));
                }
            }
        }
        Ok(())
    }

    fn walk(
        &mut self,
        t0: f64,
        x0: f64,
        te: f64,
        id: u64,
        stream: &mut RandomStream,
    ) -> Result<WalkOutcome> {
        let dt = self.params.crossing_dt;
        let mut u0 = t0;
        let mut x = x0;
        let mut snap_idx = self.snaps.partition_point(|&s| s <= t0);
        let mut grid_k = 1u64;
        while u0 < te {
            // Invariants: u0 < grid_next, and snaps[snap_idx] > u0.
            let grid_next = t0 + grid_k as f64 * dt;
            let mut u1 = grid_next.min(te);
            let mut at_snap = false;
            if let Some(&s) = self.snaps.get(snap_idx) {
                if s < te && s <= u1 {
                    u1 = s;
                    at_snap = true;
                }
            }
            if grid_next <= u1 {
                grid_k += 1;
            }
            let delta = u1 - u0;
            debug_assert!(delta > 0.0);

            let g = stream.gaussian(x - self.params.rho * delta, delta.sqrt());
            if g <= 0.0 {
                let tau = u0 + bridge_hit_time(stream, x, g, delta)?;
                return Ok(WalkOutcome::Died { time: tau, boundary: false });
            }
            let d0 = self.curve.l_of(u0)? - x;
            let d1 = self.curve.l_of(u1)? - g;
            if d1 <= 0.0 {
                let tau = u0 + bridge_hit_time(stream, d0, d1, delta)?;
                return Ok(WalkOutcome::Died { time: tau, boundary: true });
            }
            let p_floor = bridge_survival_prob(x, g, delta)?;
            if !stream.bernoulli(p_floor) {
                let tau = u0 + bridge_hit_time(stream, x, g, delta)?;
                return Ok(WalkOutcome::Died { time: tau, boundary: false });
            }
            let p_cross = 1.0 - bridge_survival_prob(d0, d1, delta)?;
            if stream.bernoulli(p_cross) {
                let tau = u0 + bridge_hit_time(stream, d0, d1, delta)?;
                return Ok(WalkOutcome::Died { time: tau, boundary: true });
            }
            if at_snap {
                self.snap_rows.push((snap_idx, id, g));
                snap_idx += 1;
            }
            u0 = u1;
            x = g;
        }
        Ok(WalkOutcome::Survived { x_end: x })
    }
}

fn simulate_moving(
    params: &SimParams,
    init: &PointConfiguration,
    horizon: Option<f64>,
    curve_horizon: f64,
    stream: &mut RandomStream,
) -> Result<SimOutcome> {
    let curve = BoundaryCurve::new(curve_horizon)?;
    let l0 = curve.l_of(0.0)?;
    for x in init.iter() {
        if x >= l0 {
            return Err(Error::invalid(format!(
                "initial particle at {x} is not below the boundary start {l0}"
            )));
        }
    }
    let mut stop = horizon.unwrap_or(curve_horizon).min(curve_horizon);
    let mut stop_by_time_cap = false;
    if let Some(m) = params.max_time {
        if m < stop {
            stop = m;
            stop_by_time_cap = true;
        }
    }

    let mut sim = MovingSim {
        params,
        curve,
        stop,
        snaps: sorted_snaps(&params.snapshot_times, Some(stop)),
        snap_rows: Vec::new(),
        final_alive: Vec::new(),
        branch_pos: BTreeMap::new(),
        heap: BinaryHeap::new(),
        next_id: 0,
        counters: Counters::default(),
        alive: 0,
    };
    for x in init.iter() {
        sim.spawn(0.0, x, stream)?;
    }

    let mut extinction: Option<f64> = None;
    let mut censoring: Option<Censoring> = None;

    while let Some(Reverse(event)) = sim.heap.pop() {
        match event.kind {
            EventKind::Death { boundary } => {
                sim.alive -= 1;
                if boundary {
                    sim.counters.boundary_kills += 1;
                } else {
                    sim.counters.absorbed += 1;
                }
                if sim.alive == 0 {
                    extinction = Some(event.time);
                    break;
                }
            }
            EventKind::Branch => {
                let x = sim.branch_pos.remove(&event.id).expect("recorded at spawn");
                sim.alive -= 1;
                sim.counters.branch_events += 1;
                sim.spawn(event.time, x, stream)?;
                sim.spawn(event.time, x, stream)?;
                if sim.alive > params.max_population {
                    censoring =
                        Some(Censoring { reason: CensorReason::MaxPopulation, time: event.time });
                    break;
                }
            }
        }
    }

    if extinction.is_none() && censoring.is_none() && stop_by_time_cap {
        censoring = Some(Censoring { reason: CensorReason::MaxTime, time: stop });
    }

    // Assemble snapshots from the walk rows. Times at or past a censor are
    // dropped (walks past it are incomplete); a snapshot exactly at a
    // reached natural stop is the final configuration.
    let reached = censoring.map_or(f64::INFINITY, |c| c.time);
    let mut snapshots: Vec<(f64, PointConfiguration)> = Vec::new();
    for (idx, &s) in sim.snaps.iter().enumerate() {
        if s >= reached {
            break;
        }
        let mut rows: Vec<(u64, f64)> = if s == stop && extinction.is_none() {
            sim.final_alive.clone()
        } else {
            sim.snap_rows
                .iter()
                .filter(|&&(i, _, _)| i == idx)
                .map(|&(_, id, x)| (id, x))
                .collect()
        };
        rows.sort_by_key(|&(id, _)| id);
        snapshots
            .push((s, PointConfiguration::new(rows.into_iter().map(|(_, x)| x).collect())?));
    }

    let (stop_time, final_config) = if let Some(zeta) = extinction {
        (zeta, PointConfiguration::empty())
    } else if let Some(c) = censoring {
        // Eager walks cannot reconstruct live positions at the censor time;
        // the censored flag tells callers the state is unavailable.
        (c.time, PointConfiguration::empty())
    } else {
        let mut alive = std::mem::take(&mut sim.final_alive);
        alive.sort_by_key(|&(id, _)| id);
        (stop, PointConfiguration::new(alive.into_iter().map(|(_, x)| x).collect())?)
    };

    Ok(SimOutcome {
        extinction_time: extinction,
        final_config,
        stop_time,
        censored: censoring,
        snapshots,
        boundary_kills: sim.counters.boundary_kills,
        absorbed_count: sim.counters.absorbed,
        branch_events: sim.counters.branch_events,
        initial_count: init.count_n() as u64,
    })
}
