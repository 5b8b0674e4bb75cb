//! Deterministic random streams and exact stochastic primitives.
//!
//! Every stochastic routine in this crate draws from a [`RandomStream`]: a
//! counter-based generator identified by `(root_seed, stream_id)`. Replicas
//! of an experiment get distinct `stream_id`s, which makes parallel runs
//! reproducible bit-for-bit regardless of thread scheduling — results depend
//! only on which stream produced them, never on when it ran.
//!
//! The sampling primitives here are *exact* (no discretisation error):
//! Brownian increments, bridge positivity probabilities, bridge first-hit
//! times via the inverse-Gaussian transform, Bessel(3) paths as norms of
//! three-dimensional Brownian motion, Poisson clocks, and Gamma(2, ρ) draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, InverseGaussian, StandardNormal};

use crate::{ensure_finite, Error, Result};

/// A deterministic random stream identified by `(root_seed, stream_id)`.
///
/// Streams with distinct identifiers are statistically independent; the same
/// identifier always replays the same sequence. A stream is value-like: move
/// it between threads freely, but do not share one concurrently.
#[derive(Clone, Debug)]
pub struct RandomStream {
    root_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Create the stream for `(root_seed, stream_id)`.
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(stream_id);
        RandomStream {
            root_seed,
            stream_id,
            rng,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Normal draw with the given mean and standard deviation (`sd ≥ 0`).
    #[inline]
    pub fn gaussian(&mut self, mean: f64, sd: f64) -> f64 {
        debug_assert!(sd >= 0.0);
        mean + sd * self.standard_normal()
    }

    /// Exponential draw with the given rate (`rate > 0`).
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0 && rate.is_finite());
        Exp::new(rate).expect("validated rate").sample(&mut self.rng)
    }

    /// Bernoulli draw. `p` is clamped to `[0, 1]`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Inverse-Gaussian draw with mean `mu > 0` and shape `lambda > 0`.
    #[inline]
    pub fn inverse_gaussian(&mut self, mu: f64, lambda: f64) -> f64 {
        debug_assert!(mu > 0.0 && lambda > 0.0);
        InverseGaussian::new(mu, lambda)
            .expect("validated inverse-Gaussian parameters")
            .sample(&mut self.rng)
    }

}

/// A positive path sampled on a time grid: the norm of a three-dimensional
/// Brownian motion started at `(start, 0, 0)`, exact at the grid points.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BesselPath {
    pub start: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BesselPath {
    /// Path value at the last grid point.
    pub fn end_value(&self) -> f64 {
        *self.values.last().expect("paths have at least one point")
    }
}

/// Probability that a Brownian bridge from `x` to `z` over duration `t`
/// stays strictly positive, namely `1 − exp(−2xz/t)`.
///
/// The value does not depend on any drift: conditioning a drifted Brownian
/// motion on its endpoint removes the drift from the bridge law.
///
/// # Errors
/// Non-finite or negative `x`/`z`, or `t ≤ 0`.
pub fn bridge_survival_prob(x: f64, z: f64, t: f64) -> Result<f64> {
    ensure_finite(x, "bridge start x")?;
    ensure_finite(z, "bridge end z")?;
    ensure_finite(t, "bridge duration t")?;
    if x < 0.0 || z < 0.0 {
        return Err(Error::invalid(format!(
            "bridge endpoints must be non-negative, got x={x}, z={z}"
        )));
    }
    if t <= 0.0 {
        return Err(Error::invalid(format!("bridge duration must be positive, got t={t}")));
    }
    Ok(-(-2.0 * x * z / t).exp_m1())
}

/// First time a Brownian bridge from `x ≥ 0` to `g` over `[0, duration]`
/// hits 0, sampled exactly.
///
/// - `g < 0`: the bridge straddles the barrier and hits it almost surely;
///   the draw follows the unconditioned first-hit law.
/// - `g > 0`: the draw is conditioned on the bridge hitting 0 (an event of
///   probability `exp(−2xg/duration)`); the caller is responsible for having
///   decided that the hit occurs.
/// - `g = 0`: returns `duration` (the hit happens at the endpoint).
///
/// The law is simulated through the substitution `τ = duration·W/(1+W)` with
/// `W` inverse-Gaussian of mean `x/|g|` and shape `x²/duration`, which is
/// exact for both signs of `g` (only `g²` enters the first-hit density).
///
/// # Errors
/// Non-finite inputs, `x < 0`, or `duration ≤ 0`.
pub fn bridge_hit_time(
    stream: &mut RandomStream,
    x: f64,
    g: f64,
    duration: f64,
) -> Result<f64> {
    ensure_finite(x, "bridge start x")?;
    ensure_finite(g, "bridge end g")?;
    ensure_finite(duration, "bridge duration")?;
    if x < 0.0 {
        return Err(Error::invalid(format!("bridge start must be non-negative, got x={x}")));
    }
    if duration <= 0.0 {
        return Err(Error::invalid(format!(
            "bridge duration must be positive, got {duration}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if g == 0.0 {
        return Ok(duration);
    }
    let lambda = x * x / duration;
    let mu = x / g.abs();
    // For extreme mean the inverse-Gaussian law degenerates to the one-sided
    // stable law W = lambda / Z²; switch over before the sampler's internal
    // arithmetic can overflow.
    let w = if mu > 1e8 {
        let z = stream.standard_normal();
        lambda / (z * z).max(f64::MIN_POSITIVE)
    } else {
        stream.inverse_gaussian(mu, lambda)
    };
    // Map W ∈ (0, ∞) to τ ∈ (0, duration) monotonically; the form below is
    // stable for both tiny and huge W.
    let tau = duration / (1.0 + 1.0 / w);
    Ok(tau.clamp(0.0, duration))
}

/// Sample a Bessel(3) path from `z > 0` on the grid `{0, dt, 2dt, …}` up to
/// `horizon`, appending `horizon` itself when it is not a grid multiple.
///
/// The path is the norm of a three-dimensional standard Brownian motion
/// started at `(z, 0, 0)`: marginals are exact at every grid point and the
/// path never touches 0.
///
/// # Errors
/// `z ≤ 0`, `dt ≤ 0`, or `horizon < dt`.
pub fn sample_bessel3(
    stream: &mut RandomStream,
    z: f64,
    horizon: f64,
    dt: f64,
) -> Result<BesselPath> {
    ensure_finite(z, "start z")?;
    ensure_finite(horizon, "horizon")?;
    ensure_finite(dt, "dt")?;
    if z <= 0.0 {
        return Err(Error::invalid(format!("start must be positive, got z={z}")));
    }
    if dt <= 0.0 {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if horizon < dt {
        return Err(Error::invalid(format!(
            "horizon must be at least dt, got horizon={horizon}, dt={dt}"
        )));
    }
    let n_full = (horizon / dt + 1e-12).floor() as usize;
    let mut times = Vec::with_capacity(n_full + 2);
    times.push(0.0);
    for k in 1..=n_full {
        times.push(k as f64 * dt);
    }
    let last = *times.last().expect("nonempty");
    if horizon - last > 1e-12 * dt {
        times.push(horizon);
    }

    let mut w = [z, 0.0, 0.0];
    let mut values = Vec::with_capacity(times.len());
    values.push(z);
    for i in 1..times.len() {
        let sd = (times[i] - times[i - 1]).sqrt();
        for c in w.iter_mut() {
            *c += sd * stream.standard_normal();
        }
        values.push((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt());
    }
    Ok(BesselPath {
        start: z,
        times,
        values,
    })
}

/// Atom times of a homogeneous Poisson process with the given rate on
/// `[0, horizon]`, via cumulative exponential gaps.
///
/// # Errors
/// `rate ≤ 0` or `horizon < 0`.
pub fn sample_poisson_times(
    stream: &mut RandomStream,
    rate: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    ensure_finite(rate, "rate")?;
    ensure_finite(horizon, "horizon")?;
    if rate <= 0.0 {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    if horizon < 0.0 {
        return Err(Error::invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += stream.exponential(rate);
        if t > horizon {
            break;
        }
        times.push(t);
    }
    Ok(times)
}

/// Draw from the density `rate² · z · e^{−rate·z}` on `(0, ∞)`, i.e. a
/// Gamma(2, rate) variable, sampled exactly as a sum of two independent
/// exponentials.
///
/// # Errors
/// `rate ≤ 0`.
pub fn sample_gamma2(stream: &mut RandomStream, rate: f64) -> Result<f64> {
    ensure_finite(rate, "rate")?;
    if rate <= 0.0 {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    Ok(stream.exponential(rate) + stream.exponential(rate))
}
