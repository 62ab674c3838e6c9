//! GEV margins: distribution function, quantiles, the GEV to unit-Fréchet
//! bijection with its Jacobian, and univariate maximum likelihood fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Below this |shape| the Gumbel-limit formulas are used.
pub const SMALL_SHAPE: f64 = 1e-6;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub loc: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GevParams {
    pub const UNIT_FRECHET: GevParams = GevParams {
        loc: 1.0,
        scale: 1.0,
        shape: 1.0,
    };

    pub fn new(loc: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !loc.is_finite() || !shape.is_finite() || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "GEV parameters must be finite with scale > 0 (got {loc}, {scale}, {shape})"
            )));
        }
        Ok(Self { loc, scale, shape })
    }

    #[inline]
    pub fn is_gumbel(&self) -> bool {
        self.shape.abs() < SMALL_SHAPE
    }

    /// `1 + ξ(y−μ)/λ`, the quantity whose positivity defines the support.
    #[inline]
    pub fn support_margin(&self, y: f64) -> f64 {
        if self.is_gumbel() {
            1.0
        } else {
            1.0 + self.shape * (y - self.loc) / self.scale
        }
    }
}

/// Link functions relating linear predictors to GEV parameters: identity for
/// location and shape, exponential for scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkSpec;

impl LinkSpec {
    #[inline]
    pub fn params(&self, eta_loc: f64, eta_scale: f64, eta_shape: f64) -> GevParams {
        GevParams {
            loc: eta_loc,
            scale: eta_scale.exp(),
            shape: eta_shape,
        }
    }

    #[inline]
    pub fn predictors(&self, p: &GevParams) -> (f64, f64, f64) {
        (p.loc, p.scale.ln(), p.shape)
    }
}

pub fn cdf(y: f64, p: &GevParams) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite observation {y}")));
    }
    if p.is_gumbel() {
        return Ok((-(-(y - p.loc) / p.scale).exp()).exp());
    }
    let t = p.support_margin(y);
    if t <= 0.0 {
        // below the lower endpoint (ξ > 0) or above the upper one (ξ < 0)
        return Ok(if p.shape > 0.0 { 0.0 } else { 1.0 });
    }
    Ok((-t.powf(-1.0 / p.shape)).exp())
}

/// Maps `y ~ GEV(p)` to the unit-Fréchet scale.
pub fn to_frechet(y: f64, p: &GevParams) -> Result<f64> {
    if p.is_gumbel() {
        return Ok(((y - p.loc) / p.scale).exp());
    }
    let t = p.support_margin(y);
    if !(t > 0.0) {
        return Err(Error::SupportViolation(t));
    }
    Ok(t.powf(1.0 / p.shape))
}

/// Inverse of [`to_frechet`].
pub fn from_frechet(z: f64, p: &GevParams) -> f64 {
    if p.is_gumbel() {
        p.loc + p.scale * z.ln()
    } else {
        p.loc + p.scale * (z.powf(p.shape) - 1.0) / p.shape
    }
}

/// `log dz/dy` for one site: `−log λ + (1/ξ − 1) log{1 + ξ(y−μ)/λ}`.
pub fn log_jacobian(y: f64, p: &GevParams) -> Result<f64> {
    if p.is_gumbel() {
        return Ok(-p.scale.ln() + (y - p.loc) / p.scale);
    }
    let t = p.support_margin(y);
    if !(t > 0.0) {
        return Err(Error::SupportViolation(t));
    }
    Ok(-p.scale.ln() + (1.0 / p.shape - 1.0) * t.ln())
}

pub fn pair_log_jacobian(y_i: f64, y_j: f64, p_i: &GevParams, p_j: &GevParams) -> Result<f64> {
    Ok(log_jacobian(y_i, p_i)? + log_jacobian(y_j, p_j)?)
}

/// The `1 − 1/T` quantile.
pub fn return_level(p: &GevParams, period: f64) -> Result<f64> {
    if !(period > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "return period must exceed 1 (got {period})"
        )));
    }
    let yp = -(1.0 - 1.0 / period).ln();
    if p.is_gumbel() {
        Ok(p.loc - p.scale * yp.ln())
    } else {
        Ok(p.loc + p.scale / p.shape * (yp.powf(-p.shape) - 1.0))
    }
}

/// GEV log density, `-inf` outside the support.
pub fn log_density(y: f64, p: &GevParams) -> f64 {
    if p.is_gumbel() {
        let s = (y - p.loc) / p.scale;
        return -p.scale.ln() - s - (-s).exp();
    }
    let t = p.support_margin(y);
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lt = t.ln();
    -p.scale.ln() - (1.0 + 1.0 / p.shape) * lt - (-lt / p.shape).exp()
}

/// Maximum likelihood GEV fit by Nelder–Mead from Gumbel moment estimates.
///
/// The sample is standardized by its mean and standard deviation before
/// optimizing, so the estimates are location and scale equivariant.
pub fn fit_univariate(sample: &[f64]) -> Result<GevParams> {
    if sample.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 observations for a GEV fit (got {})",
            sample.len()
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sample contains non-finite values".into()));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = (sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::InvalidArgument("degenerate sample with zero variance".into()));
    }
    let std: Vec<f64> = sample.iter().map(|v| (v - mean) / sd).collect();

    let scale0 = 6.0_f64.sqrt() / std::f64::consts::PI;
    let loc0 = -EULER_GAMMA * scale0;
    let nll = |x: &[f64]| {
        let p = GevParams {
            loc: x[0],
            scale: x[1].exp(),
            shape: x[2],
        };
        -std.iter().map(|&y| log_density(y, &p)).sum::<f64>()
    };
    let opts = NelderMeadOptions {
        max_iterations: 2000,
        f_tol: 1e-12,
    };
    let mut best = nelder_mead(nll, &[loc0, scale0.ln(), 0.1], &[0.2, 0.2, 0.1], &opts);
    // restart once from the optimum to escape early simplex collapse
    let again = nelder_mead(nll, &best.x, &[0.05, 0.05, 0.05], &opts);
    if again.f < best.f {
        best = again;
    }
    if !best.f.is_finite() {
        return Err(Error::InvalidArgument("GEV likelihood is not finite".into()));
    }
    GevParams::new(mean + sd * best.x[0], sd * best.x[1].exp(), best.x[2])
}
