//! Three drift readings of a single branching driver, with exact
//! monotonicity checks.
//!
//! One driftless binary branching Brownian motion (the *driver*) is
//! simulated once; three absorbed processes are read off it by subtracting
//! a line from every path and killing a lineage the first time it touches
//! that line:
//!
//! - the **middle** process subtracts `ρ·t` (drift `−ρ`, started from the
//!   given configuration),
//! - the **upper** process subtracts `√2·t` (critical drift, same start),
//! - the **lower** process subtracts `Δ + √2·t` (critical drift, started
//!   from the configuration shifted down by `Δ`, dropping what lands at or
//!   below the barrier).
//!
//! Because all three are functionals of the same paths, the readings are
//! ordered pathwise: the upper process dominates the middle one at every
//! time, and the middle one dominates the lower one up to the crossing
//! time `s* = Δ/(ρ − √2)` of their two absorption lines.  Extinction times
//! inherit the same ordering.  [`run_coupled`] realises one such triple and
//! [`check_domination_trace`] verifies every ordering exactly, particle by
//! particle, using shared lineage ids rather than order statistics alone.
//!
//! Within a time segment on which the three lines do not cross, the three
//! survival events of one lineage are nested, so their joint law is fully
//! determined by the marginal no-crossing probabilities.  The simulation
//! therefore draws a single uniform per segment and compares it against the
//! three bridge no-crossing probabilities: this comonotone rule reproduces
//! the exact joint law while guaranteeing the nesting holds bit-for-bit in
//! the output.  A global checkpoint at `s*` keeps every segment on one side
//! of the only line crossing.

use std::collections::{BinaryHeap, HashMap};

use serde::Serialize;

use crate::configuration::PointConfiguration;
use crate::rng::{bridge_survival_prob, RandomStream};
use crate::{ensure_finite, Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Parameters for [`run_coupled`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingParams {
    /// Drift magnitude of the middle process; must exceed `√2` so the
    /// comparison gap `ε = ρ − √2` is positive.
    pub rho: f64,
    /// Binary branching rate of the shared driver (each of the three
    /// readings branches at this rate as well).
    pub branching_rate: f64,
    /// Simulation horizon: lineages are evolved to this time and extinction
    /// after it is reported as censored.
    pub horizon: f64,
    /// Cap on concurrently tracked driver lineages; exceeding it aborts the
    /// replica with [`Error::Censored`].
    pub max_population: u64,
}

impl CouplingParams {
    /// Middle-process drift `rho`, driver branching rate 1, horizon as
    /// given, population cap `10⁶`.
    pub fn new(rho: f64, horizon: f64) -> Self {
        CouplingParams {
            rho,
            branching_rate: 1.0,
            horizon,
            max_population: 1_000_000,
        }
    }

    /// Replace the driver branching rate.
    pub fn with_branching_rate(mut self, rate: f64) -> Self {
        self.branching_rate = rate;
        self
    }

    /// Replace the lineage cap.
    pub fn with_max_population(mut self, cap: u64) -> Self {
        self.max_population = cap;
        self
    }

    /// Drift gap `ε = ρ − √2` between the middle and the two outer
    /// processes.
    pub fn epsilon(&self) -> f64 {
        self.rho - SQRT_2
    }

    /// Check the documented domain.
    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.rho, "drift rho")?;
        if self.rho <= SQRT_2 {
            return Err(Error::invalid(format!(
                "coupled comparison needs rho > sqrt(2), got {}",
                self.rho
            )));
        }
        ensure_finite(self.branching_rate, "branching rate")?;
        if self.branching_rate < 0.0 {
            return Err(Error::invalid(format!(
                "branching rate must be non-negative, got {}",
                self.branching_rate
            )));
        }
        ensure_finite(self.horizon, "horizon")?;
        if self.horizon <= 0.0 {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.max_population == 0 {
            return Err(Error::invalid("population cap must be at least 1"));
        }
        Ok(())
    }
}

/// One particle of one process reading at a snapshot time, tagged with the
/// id of the driver lineage it was read from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaggedParticle {
    /// Driver lineage id, shared across the three process readings.
    pub id: u64,
    /// Position in the coordinates of the process the particle belongs to
    /// (driver position minus that process's absorption line).
    pub position: f64,
}

/// The three process readings at one requested time, each sorted by
/// lineage id.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoupledSnapshot {
    /// Snapshot time.
    pub time: f64,
    /// Middle process (drift `−ρ`).
    pub middle: Vec<TaggedParticle>,
    /// Upper process (drift `−√2`, same initial configuration).
    pub upper: Vec<TaggedParticle>,
    /// Lower process (drift `−√2`, initial configuration shifted down
    /// by `Δ`).
    pub lower: Vec<TaggedParticle>,
}

/// Extinction times of the three readings; `None` means the process was
/// still alive at the horizon (censored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionRecord {
    /// Middle process (drift `−ρ`).
    pub middle: Option<f64>,
    /// Upper process (drift `−√2`).
    pub upper: Option<f64>,
    /// Lower process (shifted start).
    pub lower: Option<f64>,
}

/// One realisation of the three coupled readings of a shared driver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledTriple {
    /// `(root_seed, stream_id)` of the stream that drove the replica.
    pub driver_stream: (u64, u64),
    /// Downward shift of the lower process's starting configuration.
    pub delta: f64,
    /// Drift gap `ρ − √2`.
    pub epsilon: f64,
    /// Simulation horizon.
    pub horizon: f64,
    /// Requested snapshots in increasing time order.
    pub snapshots: Vec<CoupledSnapshot>,
    /// Extinction times, censored at the horizon.
    pub extinction: ExtinctionRecord,
}

impl CoupledTriple {
    /// Time `s* = Δ/ε` up to which the middle process dominates the lower
    /// one.
    pub fn comparison_window(&self) -> f64 {
        self.delta / self.epsilon
    }

    /// Snapshot rows as CSV with columns `replica_id,time,position,process`
    /// where `process ∈ {X, XU, XLD}` labels the middle, upper, and lower
    /// readings.
    pub fn snapshots_csv(&self, replica_id: u64) -> String {
        let mut out = String::from("replica_id,time,position,process\n");
        for snap in &self.snapshots {
            for (label, list) in [
                ("X", &snap.middle),
                ("XU", &snap.upper),
                ("XLD", &snap.lower),
            ] {
                for p in list {
                    out.push_str(&format!(
                        "{replica_id},{time},{pos},{label}\n",
                        time = snap.time,
                        pos = p.position,
                    ));
                }
            }
        }
        out
    }
}

/// Which of the coupled-order families a violation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationFamily {
    /// The upper process failed to dominate the middle one at a snapshot.
    UpperDomination,
    /// The middle process failed to dominate the lower one at a snapshot
    /// inside the comparison window.
    LowerDomination,
    /// A lineage id present in a dominated reading was missing from the
    /// dominating one, or a shared lineage's positions were not offset by
    /// the drift gap.
    LineageCorrespondence,
    /// The extinction times violated
    /// `min(Δ/ε, ζ_lower) ≤ ζ_middle ≤ ζ_upper`.
    ExtinctionOrder,
}

/// First counterexample found for one violated family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationViolation {
    /// Violated family.
    pub family: ViolationFamily,
    /// Snapshot time at which the counterexample lives (extinction-order
    /// violations report the offending finite extinction time).
    pub time: f64,
    /// Offending level: the position whose tail count (or offset) breaks
    /// the ordering.
    pub level: f64,
    /// Human-readable account of the counterexample.
    pub detail: String,
}

/// Outcome of [`check_domination_trace`]: pass/fail plus the first
/// counterexample found in each violated family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    /// True when every ordering held exactly.
    pub pass: bool,
    /// At most one entry per family, the first counterexample encountered.
    pub violations: Vec<DominationViolation>,
}

/// Tolerance for the floating-point identity `upper − middle = ε·t` on
/// shared lineages.  The id bookkeeping is exact; the offsets are computed
/// through rounded subtractions, so they match only up to rounding error.
const OFFSET_TOLERANCE: f64 = 1e-9;

/// Simulate one triple of coupled readings from a single driftless driver.
///
/// `init` seeds the middle and upper processes directly; the lower process
/// starts from `init` shifted down by `delta` with positions at or below
/// the barrier dropped.  `snapshot_times` (each in `[0, horizon]`, any
/// order, duplicates ignored) select when the three readings are recorded.
/// Extinction times are tracked on the event skeleton: a lineage's death is
/// dated to the end of the segment in which its path first touched the
/// absorption line, which is consistent across the three readings because
/// they share every segment.
///
/// # Errors
///
/// [`Error::InvalidParameter`] for out-of-domain parameters, and
/// [`Error::Censored`] when the number of concurrently tracked lineages
/// exceeds `params.max_population`.
pub fn run_coupled(
    params: &CouplingParams,
    init: &PointConfiguration,
    delta: f64,
    snapshot_times: &[f64],
    stream: &mut RandomStream,
) -> Result<CoupledTriple> {
    params.validate()?;
    ensure_finite(delta, "shift delta")?;
    if delta <= 0.0 {
        return Err(Error::invalid(format!(
            "shift must be positive, got {delta}"
        )));
    }
    for &t in snapshot_times {
        ensure_finite(t, "snapshot time")?;
        if !(0.0..=params.horizon).contains(&t) {
            return Err(Error::invalid(format!(
                "snapshot time {t} is outside [0, {}]",
                params.horizon
            )));
        }
    }

    let rho = params.rho;
    let epsilon = params.epsilon();
    let lambda = params.branching_rate;
    let s_star = delta / epsilon;

    // Requested snapshot times, sorted and deduplicated.
    let mut wanted: Vec<f64> = snapshot_times.to_vec();
    wanted.sort_by(f64::total_cmp);
    wanted.dedup();

    // Global checkpoints: every requested positive time, the line-crossing
    // time s* (so no segment straddles the only change in the ordering of
    // the three lines), and the horizon.  Time 0 is handled before the
    // event loop.
    let mut checkpoints: Vec<f64> = wanted.iter().copied().filter(|&t| t > 0.0).collect();
    if s_star < params.horizon {
        checkpoints.push(s_star);
    }
    checkpoints.push(params.horizon);
    checkpoints.sort_by(f64::total_cmp);
    checkpoints.dedup();

    let mut snapshots: Vec<CoupledSnapshot> = wanted
        .iter()
        .map(|&time| CoupledSnapshot {
            time,
            ..CoupledSnapshot::default()
        })
        .collect();
    // For each checkpoint, the index of the snapshot recorded there.
    let snapshot_at: Vec<Option<usize>> = checkpoints
        .iter()
        .map(|&c| wanted.iter().position(|&w| w == c))
        .collect();

    let line_middle = |t: f64| rho * t;
    let line_upper = |t: f64| SQRT_2 * t;
    let line_lower = |t: f64| delta + SQRT_2 * t;

    struct Lineage {
        /// Segment end time this entry is queued for.
        end: f64,
        /// Queue tie-break and lineage identity.
        id: u64,
        /// Segment start time.
        t: f64,
        /// Driver position at `t`.
        d: f64,
        /// Absolute branch time of this lineage (may exceed `end`).
        branch_at: f64,
        /// Index into `checkpoints` of the next checkpoint after `t`.
        next_cp: usize,
        alive_middle: bool,
        alive_upper: bool,
        alive_lower: bool,
    }

    impl PartialEq for Lineage {
        fn eq(&self, other: &Self) -> bool {
            self.end == other.end && self.id == other.id
        }
    }
    impl Eq for Lineage {}
    impl PartialOrd for Lineage {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Lineage {
        // Earliest segment end first; ties broken by smallest id so the pop
        // order, and with it the draw order, is deterministic.
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other
                .end
                .total_cmp(&self.end)
                .then_with(|| other.id.cmp(&self.id))
        }
    }

    let mut heap: BinaryHeap<Lineage> = BinaryHeap::new();
    let mut next_id: u64 = 0;
    let mut count_middle: u64 = 0;
    let mut count_upper: u64 = 0;
    let mut count_lower: u64 = 0;

    let time_zero_snapshot = wanted.iter().position(|&w| w == 0.0);
    for x in init.iter() {
        let alive_middle = x > 0.0;
        let alive_upper = x > 0.0;
        let alive_lower = x > delta;
        if let Some(idx) = time_zero_snapshot {
            if alive_middle {
                snapshots[idx].middle.push(TaggedParticle {
                    id: next_id,
                    position: x,
                });
            }
            if alive_upper {
                snapshots[idx].upper.push(TaggedParticle {
                    id: next_id,
                    position: x,
                });
            }
            if alive_lower {
                snapshots[idx].lower.push(TaggedParticle {
                    id: next_id,
                    position: x - delta,
                });
            }
        }
        count_middle += u64::from(alive_middle);
        count_upper += u64::from(alive_upper);
        count_lower += u64::from(alive_lower);
        if alive_upper {
            // The upper line is the lowest of the three, so a lineage dead
            // for the upper reading is dead for all three and need not be
            // tracked.
            let branch_at = if lambda > 0.0 {
                stream.exponential(lambda)
            } else {
                f64::INFINITY
            };
            heap.push(Lineage {
                end: branch_at.min(checkpoints[0]),
                id: next_id,
                t: 0.0,
                d: x,
                branch_at,
                next_cp: 0,
                alive_middle,
                alive_upper,
                alive_lower,
            });
        }
        next_id += 1;
    }

    let mut extinction = ExtinctionRecord {
        middle: (count_middle == 0).then_some(0.0),
        upper: (count_upper == 0).then_some(0.0),
        lower: (count_lower == 0).then_some(0.0),
    };

    while let Some(seg) = heap.pop() {
        let Lineage {
            end,
            id,
            t,
            d,
            branch_at,
            next_cp,
            mut alive_middle,
            mut alive_upper,
            mut alive_lower,
        } = seg;
        let width = end - t;

        let d_end = if width > 0.0 {
            stream.gaussian(d, width.sqrt())
        } else {
            d
        };

        if width > 0.0 {
            // End-of-segment clearance above each line: non-positive
            // clearance is certain death; positive clearance survives with
            // the exact bridge no-crossing probability (a linear barrier
            // subtracts away into a flat one).  One shared uniform realises
            // the three events comonotonically — their true joint law,
            // since within a segment the lines are totally ordered and the
            // survival events therefore nested.
            let mut p_middle = 0.0;
            let mut p_upper = 0.0;
            let mut p_lower = 0.0;
            let mut need_draw = false;
            if alive_middle {
                let d1 = d_end - line_middle(end);
                if d1 > 0.0 {
                    p_middle = bridge_survival_prob(d - line_middle(t), d1, width)?;
                    need_draw = true;
                }
            }
            if alive_upper {
                let d1 = d_end - line_upper(end);
                if d1 > 0.0 {
                    p_upper = bridge_survival_prob(d - line_upper(t), d1, width)?;
                    need_draw = true;
                }
            }
            if alive_lower {
                let d1 = d_end - line_lower(end);
                if d1 > 0.0 {
                    p_lower = bridge_survival_prob(d - line_lower(t), d1, width)?;
                    need_draw = true;
                }
            }
            let u = if need_draw { stream.uniform() } else { 1.0 };
            if alive_middle && u >= p_middle {
                alive_middle = false;
                count_middle -= 1;
                if count_middle == 0 && extinction.middle.is_none() {
                    extinction.middle = Some(end);
                }
            }
            if alive_upper && u >= p_upper {
                alive_upper = false;
                count_upper -= 1;
                if count_upper == 0 && extinction.upper.is_none() {
                    extinction.upper = Some(end);
                }
            }
            if alive_lower && u >= p_lower {
                alive_lower = false;
                count_lower -= 1;
                if count_lower == 0 && extinction.lower.is_none() {
                    extinction.lower = Some(end);
                }
            }
        }

        debug_assert!(
            alive_upper || (!alive_middle && !alive_lower),
            "a lineage dead for the most permissive line survived a stricter one"
        );
        if !alive_upper {
            // Dead for all three readings; descendants can never revive.
            continue;
        }

        if branch_at < checkpoints[next_cp] {
            // Branch event: two fresh lineages, each with its own lifetime,
            // inheriting the driver position and the survival flags.
            if heap.len() + 2 > params.max_population as usize {
                return Err(Error::Censored(format!(
                    "coupled driver exceeded its cap of {} concurrent lineages",
                    params.max_population
                )));
            }
            count_middle += u64::from(alive_middle);
            count_upper += 1;
            count_lower += u64::from(alive_lower);
            for _ in 0..2 {
                let child_branch = end + stream.exponential(lambda);
                heap.push(Lineage {
                    end: child_branch.min(checkpoints[next_cp]),
                    id: next_id,
                    t: end,
                    d: d_end,
                    branch_at: child_branch,
                    next_cp,
                    alive_middle,
                    alive_upper,
                    alive_lower,
                });
                next_id += 1;
            }
        } else {
            // Checkpoint: record the snapshot if one was requested here and
            // continue the same lineage unless this was the horizon.
            if let Some(idx) = snapshot_at[next_cp] {
                let ts = checkpoints[next_cp];
                if alive_middle {
                    snapshots[idx].middle.push(TaggedParticle {
                        id,
                        position: d_end - line_middle(ts),
                    });
                }
                snapshots[idx].upper.push(TaggedParticle {
                    id,
                    position: d_end - line_upper(ts),
                });
                if alive_lower {
                    snapshots[idx].lower.push(TaggedParticle {
                        id,
                        position: d_end - line_lower(ts),
                    });
                }
            }
            if next_cp + 1 < checkpoints.len() {
                heap.push(Lineage {
                    end: branch_at.min(checkpoints[next_cp + 1]),
                    id,
                    t: end,
                    d: d_end,
                    branch_at,
                    next_cp: next_cp + 1,
                    alive_middle,
                    alive_upper,
                    alive_lower,
                });
            }
        }
    }

    Ok(CoupledTriple {
        driver_stream: (stream.root_seed(), stream.stream_id()),
        delta,
        epsilon,
        horizon: params.horizon,
        snapshots,
        extinction,
    })
}

/// First level at which `stronger` fails to dominate `weaker` (tail count
/// of `stronger` below that of `weaker`), or `None` when domination holds.
///
/// Uses the order-statistic characterisation: domination holds iff for
/// every `k`, the `k`-th largest position of `stronger` exists and is at
/// least the `k`-th largest of `weaker`.
fn domination_counterexample(stronger: &[TaggedParticle], weaker: &[TaggedParticle]) -> Option<f64> {
    let mut s: Vec<f64> = stronger.iter().map(|p| p.position).collect();
    let mut w: Vec<f64> = weaker.iter().map(|p| p.position).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    w.sort_by(|a, b| b.total_cmp(a));
    for (k, &wk) in w.iter().enumerate() {
        if k >= s.len() || s[k] < wk {
            return Some(wk);
        }
    }
    None
}

fn family_reported(violations: &[DominationViolation], family: ViolationFamily) -> bool {
    violations.iter().any(|v| v.family == family)
}

/// Id-level check of one snapshot: every middle lineage must appear in the
/// upper reading offset by `+ε·t`, and (inside the comparison window) every
/// lower lineage must appear in the middle reading offset by `+Δ − ε·t`.
fn lineage_counterexample(
    snap: &CoupledSnapshot,
    s_star: f64,
    epsilon: f64,
    delta: f64,
) -> Option<DominationViolation> {
    let upper: HashMap<u64, f64> = snap.upper.iter().map(|p| (p.id, p.position)).collect();
    for p in &snap.middle {
        match upper.get(&p.id) {
            None => {
                return Some(DominationViolation {
                    family: ViolationFamily::LineageCorrespondence,
                    time: snap.time,
                    level: p.position,
                    detail: format!(
                        "middle lineage {} at {} has no upper partner at time {}",
                        p.id, p.position, snap.time
                    ),
                });
            }
            Some(&pu) => {
                let want = epsilon * snap.time;
                if ((pu - p.position) - want).abs() > OFFSET_TOLERANCE {
                    return Some(DominationViolation {
                        family: ViolationFamily::LineageCorrespondence,
                        time: snap.time,
                        level: p.position,
                        detail: format!(
                            "lineage {}: upper−middle offset {} differs from ε·t = {want}",
                            p.id,
                            pu - p.position
                        ),
                    });
                }
            }
        }
    }
    if snap.time <= s_star {
        let middle: HashMap<u64, f64> = snap.middle.iter().map(|p| (p.id, p.position)).collect();
        for p in &snap.lower {
            match middle.get(&p.id) {
                None => {
                    return Some(DominationViolation {
                        family: ViolationFamily::LineageCorrespondence,
                        time: snap.time,
                        level: p.position,
                        detail: format!(
                            "lower lineage {} at {} has no middle partner at time {}",
                            p.id, p.position, snap.time
                        ),
                    });
                }
                Some(&pm) => {
                    let want = delta - epsilon * snap.time;
                    if ((pm - p.position) - want).abs() > OFFSET_TOLERANCE {
                        return Some(DominationViolation {
                            family: ViolationFamily::LineageCorrespondence,
                            time: snap.time,
                            level: p.position,
                            detail: format!(
                                "lineage {}: middle−lower offset {} differs from Δ − ε·t = {want}",
                                p.id,
                                pm - p.position
                            ),
                        });
                    }
                }
            }
        }
    }
    None
}

/// Verify every coupled-order family on a realised triple.
///
/// Checks, per snapshot: tail-count domination of the middle reading by the
/// upper one; tail-count domination of the lower reading by the middle one
/// for times inside the comparison window `[0, Δ/ε]`; and the id-level
/// lineage correspondence with its exact position offsets.  Checks once:
/// the extinction-time ordering `min(Δ/ε, ζ_lower) ≤ ζ_middle ≤ ζ_upper`,
/// with censored times treated as larger than any finite time.  The report
/// carries the first counterexample found in each violated family.
pub fn check_domination_trace(triple: &CoupledTriple) -> DominationReport {
    let mut violations: Vec<DominationViolation> = Vec::new();
    let s_star = triple.comparison_window();

    for snap in &triple.snapshots {
        if !family_reported(&violations, ViolationFamily::UpperDomination) {
            if let Some(level) = domination_counterexample(&snap.upper, &snap.middle) {
                violations.push(DominationViolation {
                    family: ViolationFamily::UpperDomination,
                    time: snap.time,
                    level,
                    detail: format!(
                        "upper tail count at level {level} falls below the middle reading's at time {}",
                        snap.time
                    ),
                });
            }
        }
        if snap.time <= s_star
            && !family_reported(&violations, ViolationFamily::LowerDomination)
        {
            if let Some(level) = domination_counterexample(&snap.middle, &snap.lower) {
                violations.push(DominationViolation {
                    family: ViolationFamily::LowerDomination,
                    time: snap.time,
                    level,
                    detail: format!(
                        "middle tail count at level {level} falls below the lower reading's at time {}",
                        snap.time
                    ),
                });
            }
        }
        if !family_reported(&violations, ViolationFamily::LineageCorrespondence) {
            if let Some(v) = lineage_counterexample(snap, s_star, triple.epsilon, triple.delta) {
                violations.push(v);
            }
        }
    }

    let inf = f64::INFINITY;
    let z_middle = triple.extinction.middle.unwrap_or(inf);
    let z_upper = triple.extinction.upper.unwrap_or(inf);
    let z_lower = triple.extinction.lower.unwrap_or(inf);
    if z_middle > z_upper {
        violations.push(DominationViolation {
            family: ViolationFamily::ExtinctionOrder,
            time: z_upper,
            level: z_middle,
            detail: format!(
                "middle extinction {z_middle} exceeds upper extinction {z_upper}"
            ),
        });
    }
    if s_star.min(z_lower) > z_middle {
        violations.push(DominationViolation {
            family: ViolationFamily::ExtinctionOrder,
            time: z_middle,
            level: s_star.min(z_lower),
            detail: format!(
                "middle extinction {z_middle} precedes min(Δ/ε, lower extinction) = {}",
                s_star.min(z_lower)
            ),
        });
    }

    DominationReport {
        pass: violations.is_empty(),
        violations,
    }
}
