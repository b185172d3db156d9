//! Standard-normal CDF, quantile, and log-CDF shared by every module.
//!
//! Boundary solving, Bayes-factor evaluation, and spending functions all
//! depend on these values being bit-identical across the crate, so the
//! implementation lives here rather than behind an external special-function
//! crate.  The error function is evaluated through the regularized incomplete
//! gamma function: a positive-term series for small arguments and a Lentz
//! continued fraction for the tail, both of which avoid cancellation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const SQRT_PI: f64 = 1.772453850905516027298;
/// sqrt(2*pi)
pub const SQRT_TWO_PI: f64 = 2.506628274631000502416;

const MAX_ITER: usize = 300;
const EPS: f64 = 1e-17;

/// Standard-normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_TWO_PI
}

/// erf(x) for |x| <= ~1.22 via the regularized lower incomplete gamma
/// series P(1/2, x^2).  All terms are positive, so no cancellation occurs.
fn erf_series(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let z = x * x;
    let a = 0.5;
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= z / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    // P(1/2, z) = z^(1/2) e^(-z) * sum / Gamma(1/2); erf(x) = sign(x) P(1/2, x^2)
    let p = x.abs() * (-z).exp() * sum / SQRT_PI;
    p.copysign(x)
}

/// Continued-fraction value CF(z) with a = 1/2, via modified Lentz, such that
/// Q(1/2, z) = e^(-z) z^(1/2) CF(z) / Gamma(1/2).  Accurate for z >= ~1.5.
fn upper_gamma_cf(z: f64) -> f64 {
    let a = 0.5;
    let tiny = 1e-300;
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

const ERF_SPLIT: f64 = 1.25;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < ERF_SPLIT {
        1.0 - erf_series(ax)
    } else {
        (-ax * ax).exp() * ax * upper_gamma_cf(ax * ax) / SQRT_PI
    };
    if x >= 0.0 {
        v
    } else {
        2.0 - v
    }
}

/// Scaled complementary error function e^(x^2) erfc(x); stable for large x.
pub fn erfcx(x: f64) -> f64 {
    if x >= ERF_SPLIT {
        x * upper_gamma_cf(x * x) / SQRT_PI
    } else {
        (x * x).exp() * erfc(x)
    }
}

/// Standard-normal CDF.
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Natural log of the standard-normal CDF, stable far into the lower tail.
pub fn ln_cdf(z: f64) -> f64 {
    if z > -6.0 {
        cdf(z).ln()
    } else {
        let x = -z * FRAC_1_SQRT_2;
        (0.5 * erfcx(x)).ln() - x * x
    }
}

/// Mills ratio Phi(z)/phi(z), stable for very negative z.
fn mills_ratio(z: f64) -> f64 {
    if z > 0.0 {
        cdf(z) / pdf(z)
    } else {
        (PI / 2.0).sqrt() * erfcx(-z * FRAC_1_SQRT_2)
    }
}

/// Standard-normal quantile: the z with CDF(z) = p.
///
/// A coarse tail-expansion guess is polished by Newton iterations on the
/// log-CDF,
/// which converge quadratically and inherit the CDF's own accuracy.
pub fn quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0 && p.is_finite(),
        "quantile requires p in (0,1), got {p}"
    );
    if p == 0.5 {
        return 0.0;
    }
    // Work in the lower half for tail stability.
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    let ln_p = p.ln();
    // Initial guess: asymptotic tail expansion, adequate to a few percent.
    let u = -2.0 * ln_p;
    let mut z = -(u - u.ln() - (2.0 * PI).ln()).max(0.25).sqrt();
    for _ in 0..6 {
        let f = ln_cdf(z) - ln_p;
        let step = f * mills_ratio(z);
        z -= step;
        if step.abs() < 1e-14 * z.abs().max(1.0) {
            break;
        }
    }
    z
}
