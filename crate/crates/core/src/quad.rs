//! Numerical quadrature: an adaptive 15-point Gauss–Kronrod integrator and
//! Gauss–Legendre node generation for fixed-order rules.
//!
//! These are used for deterministic cross-checks of closed-form quantities
//! (normalisation constants, curve integrals) and as independent oracles in
//! tests. The adaptive integrator either certifies the requested tolerance
//! or returns an error; it never silently returns an unconverged value.

use crate::{ensure_finite, Error, Result};

/// Kronrod abscissae for the 15-point rule (non-negative half, descending).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// Weights of the embedded 7-point Gauss rule (nodes `XGK[1], XGK[3], XGK[5], XGK[7]`).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss–Kronrod 15 panel on `[a, b]`: returns `(kronrod, |kronrod − gauss|)`.
fn gk15_panel(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate().take(7) {
        let dx = half * x;
        let fsum = f(mid - dx) + f(mid + dx);
        kronrod += wk * fsum;
        if i % 2 == 1 {
            gauss += WG[i / 2] * fsum;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

/// Integrate `f` over `[a, b]` by adaptive bisection of Gauss–Kronrod 15
/// panels until the accumulated error estimate is below `tol` (absolute,
/// inflated by the integral's own scale for large values).
///
/// # Errors
/// Invalid bounds/tolerance, or failure to converge within the panel budget
/// ([`Error::ToleranceUnreachable`]).
pub fn integrate_adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64> {
    ensure_finite(a, "lower bound")?;
    ensure_finite(b, "upper bound")?;
    ensure_finite(tol, "tolerance")?;
    if tol <= 0.0 {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return Err(Error::invalid(format!("bounds must satisfy a <= b, got a={a}, b={b}")));
    }

    const MAX_PANELS: usize = 1 << 17;
    // Worklist of panels with their error estimates; refine the worst one.
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new(); // (a, b, value, err)
    let (v, e) = gk15_panel(&mut f, a, b);
    panels.push((a, b, v, e));
    total += v;
    total_err += e;

    let mut evals = 1usize;
    loop {
        let scale = total.abs().max(1.0);
        if total_err <= tol * scale {
            return Ok(total);
        }
        if evals >= MAX_PANELS {
            return Err(Error::ToleranceUnreachable(format!(
                "quadrature on [{a}, {b}] stalled at error estimate {total_err:.3e} \
                 (target {tol:.3e} × scale {scale:.3e}) after {evals} panels"
            )));
        }
        // Split the panel with the largest error estimate.
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty panel list");
        let (pa, pb, pv, pe) = panels.swap_remove(idx);
        let width = pb - pa;
        if width < f64::EPSILON * (pb.abs() + pa.abs()).max(1e-300) {
            return Err(Error::ToleranceUnreachable(format!(
                "quadrature on [{a}, {b}] hit floating-point resolution near {pa} \
                 with error estimate {pe:.3e}"
            )));
        }
        let mid = pa + 0.5 * width;
        let (v1, e1) = gk15_panel(&mut f, pa, mid);
        let (v2, e2) = gk15_panel(&mut f, mid, pb);
        total += v1 + v2 - pv;
        total_err += e1 + e2 - pe;
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
        evals += 2;
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[−1, 1]`,
/// computed by Newton iteration on the Legendre recurrence. Nodes ascend.
///
/// # Errors
/// `n == 0`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("Gauss–Legendre order must be positive"));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// Gauss–Legendre nodes and weights affinely mapped to `[a, b]`.
///
/// # Errors
/// `n == 0` or `a ≥ b`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_finite(a, "lower bound")?;
    ensure_finite(b, "upper bound")?;
    if a >= b {
        return Err(Error::invalid(format!("bounds must satisfy a < b, got a={a}, b={b}")));
    }
    let (xs, ws) = gauss_legendre(n)?;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok((
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| half * w).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adaptive_integrates_polynomials_to_machine_precision() {
        // Kronrod-15 is exact through degree 22, so a single panel suffices.
        let v = integrate_adaptive(|x| x.powi(13), 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0 / 14.0, max_relative = 1e-14);
        let v = integrate_adaptive(|x| 3.0 * x * x, -2.0, 5.0, 1e-12).unwrap();
        assert_relative_eq!(v, 125.0 + 8.0, max_relative = 1e-13);
    }

    #[test]
    fn adaptive_integrates_transcendentals() {
        let v = integrate_adaptive(f64::sin, 0.0, std::f64::consts::PI, 1e-13).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-12);
        let v = integrate_adaptive(f64::exp, 0.0, 1.0, 1e-13).unwrap();
        assert_relative_eq!(v, std::f64::consts::E - 1.0, max_relative = 1e-12);
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = integrate_adaptive(phi, -8.0, 8.0, 1e-13).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_oscillation_and_scale() {
        let v = integrate_adaptive(|x| (40.0 * x).sin().powi(2), 0.0, 2.0, 1e-11).unwrap();
        // ∫ sin²(kx) dx = x/2 − sin(2kx)/(4k)
        let exact = 1.0 - (160.0f64).sin() / 160.0;
        assert_relative_eq!(v, exact, max_relative = 1e-10);
    }

    #[test]
    fn adaptive_rejects_bad_arguments() {
        assert!(integrate_adaptive(|x| x, 1.0, 0.0, 1e-8).is_err());
        assert!(integrate_adaptive(|x| x, 0.0, 1.0, 0.0).is_err());
        assert_eq!(integrate_adaptive(|x| x, 2.0, 2.0, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two_and_nodes_are_symmetric() {
        for n in [1, 2, 5, 24, 64] {
            let (xs, ws) = gauss_legendre(n).unwrap();
            assert_eq!(xs.len(), n);
            let sum: f64 = ws.iter().sum();
            assert_relative_eq!(sum, 2.0, max_relative = 1e-14);
            for i in 0..n {
                assert_relative_eq!(xs[i], -xs[n - 1 - i], epsilon = 1e-14);
                assert_relative_eq!(ws[i], ws[n - 1 - i], max_relative = 1e-13);
            }
            assert!(xs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn gauss_legendre_is_exact_up_to_degree_2n_minus_1() {
        let (xs, ws) = gauss_legendre(24).unwrap();
        let approx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(46)).sum();
        assert_relative_eq!(approx, 2.0 / 47.0, max_relative = 1e-13);

        let (xs, ws) = gauss_legendre_on(5, 0.0, 3.0).unwrap();
        let approx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(9)).sum();
        assert_relative_eq!(approx, 3.0f64.powi(10) / 10.0, max_relative = 1e-13);
    }

    #[test]
    fn gauss_legendre_matches_adaptive_on_a_smooth_integrand() {
        let f = |x: f64| (x * x + 0.5).ln() * (-x).exp();
        let (xs, ws) = gauss_legendre_on(64, 0.0, 6.0).unwrap();
        let fixed: f64 = xs.iter().zip(&ws).map(|(x, w)| w * f(*x)).sum();
        let adaptive = integrate_adaptive(f, 0.0, 6.0, 1e-13).unwrap();
        assert_relative_eq!(fixed, adaptive, max_relative = 1e-11);
    }
}
