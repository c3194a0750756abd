//! Fixed piecewise-polynomial profiles. All are C^2.

/// Quintic smoothstep `6t^5 - 15t^4 + 10t^3`, clamped to [0, 1].
#[inline]
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

/// `1 - S(|y|)` on `|y| < 1`; integer translates sum to one.
#[inline]
pub fn bump_pu(y: f64) -> f64 {
    let a = y.abs();
    if a >= 1.0 {
        0.0
    } else {
        1.0 - smoothstep(a)
    }
}

/// Cubic B-spline on [-2, 2]; integer translates sum to one.
#[inline]
pub fn bspline3(y: f64) -> f64 {
    let a = y.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    }
}

/// Annulus cutoff: 1 on [3/4, 3/2], 0 outside (1/2, 2).
#[inline]
pub fn annulus_cutoff(rho: f64) -> f64 {
    if rho <= 0.5 || rho >= 2.0 {
        0.0
    } else if rho < 0.75 {
        smoothstep((rho - 0.5) / 0.25)
    } else if rho <= 1.5 {
        1.0
    } else {
        1.0 - smoothstep((rho - 1.5) / 0.5)
    }
}

/// Low-pass profile: 1 on [0, 1/2], 0 on [1, inf).
#[inline]
pub fn low_pass(rho: f64) -> f64 {
    1.0 - smoothstep((rho - 0.5) / 0.5)
}

/// Dyadic piece `low_pass(rho/2) - low_pass(rho)`, supported in (1/2, 2).
/// Pieces at `lambda = 1, 2, .., 2^k` sum to one on `[1, 2^k]`.
#[inline]
pub fn dyadic_piece(rho: f64) -> f64 {
    low_pass(rho / 2.0) - low_pass(rho)
}
