//! Standard normal density, distribution function and quantile.
//!
//! The distribution function goes through `erfc` so both tails keep full
//! relative precision.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite for all finite `x`.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else {
        // Mills ratio expansion; erfc underflows below about -37.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Inverse of [`cdf`].
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

// Newton on ln Φ(x) = ln q, q <= 1/2.
fn lower_quantile(q: f64) -> f64 {
    let target = q.ln();
    let mut x = if q > 0.1 {
        (q - 0.5) * (2.0 * PI).sqrt()
    } else {
        -(-2.0 * target).sqrt()
    };
    for _ in 0..100 {
        let lc = ln_cdf(x);
        // d/dx ln Φ = φ/Φ
        let slope = (ln_pdf(x) - lc).exp();
        let step = (lc - target) / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}
