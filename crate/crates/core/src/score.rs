//! Analytic derivatives of one pairwise log-likelihood term
//! `log f(z_i, z_j; a) + log|dz_i/dy_i| + log|dz_j/dy_j|` with respect to the
//! dependence matrix and the GEV regression coefficients.
//!
//! Everything is chained through per-site derivatives of `z` and of the log
//! Jacobian with respect to the three linear predictors, so each site is
//! differentiated once per year regardless of how many pairs it enters.

use crate::design::Block;
use crate::error::{Error, Result};
use crate::gev::GevParams;
use crate::smith::{self, CovMatrix, LogDensityParts, A_DEPENDENT};

/// Fréchet value of one observation, its log Jacobian, and their derivatives
/// with respect to the location, log-scale and shape predictors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteDerivatives {
    pub z: f64,
    pub log_jac: f64,
    pub dz: [f64; 3],
    pub dlog_jac: [f64; 3],
}

impl SiteDerivatives {
    /// Observation already on the unit-Fréchet scale.
    pub fn frechet(y: f64) -> Result<Self> {
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::SupportViolation(y));
        }
        Ok(Self {
            z: y,
            log_jac: 0.0,
            dz: [0.0; 3],
            dlog_jac: [0.0; 3],
        })
    }

    pub fn gev(y: f64, p: &GevParams) -> Result<Self> {
        let lambda = p.scale;
        let s = (y - p.loc) / lambda;
        if p.is_gumbel() {
            let z = s.exp();
            return Ok(Self {
                z,
                log_jac: -lambda.ln() + s,
                dz: [-z / lambda, -z * s, -0.5 * z * s * s],
                dlog_jac: [-1.0 / lambda, -1.0 - s, -s - 0.5 * s * s],
            });
        }
        let xi = p.shape;
        let t = 1.0 + xi * s;
        if !(t > 0.0) {
            return Err(Error::SupportViolation(t));
        }
        let lt = t.ln();
        let z = (lt / xi).exp();
        Ok(Self {
            z,
            log_jac: -lambda.ln() + (1.0 / xi - 1.0) * lt,
            dz: [
                -z / (t * lambda),
                -z * s / t,
                z * (s / (xi * t) - lt / (xi * xi)),
            ],
            dlog_jac: [
                (xi - 1.0) / (lambda * t),
                -1.0 + (xi - 1.0) * s / t,
                -lt / (xi * xi) + (1.0 / xi - 1.0) * s / t,
            ],
        })
    }
}

/// Design rows of one site for the three GEV parameters. Empty when margins
/// are not modelled.
#[derive(Debug, Clone, Copy, Default)]
pub struct DesignRows<'a> {
    pub loc: &'a [f64],
    pub scale: &'a [f64],
    pub shape: &'a [f64],
}

impl<'a> DesignRows<'a> {
    #[inline]
    pub fn block(&self, b: Block) -> &'a [f64] {
        match b {
            Block::Location => self.loc,
            Block::Scale => self.scale,
            Block::Shape => self.shape,
        }
    }

    fn len(&self) -> usize {
        self.loc.len() + self.scale.len() + self.shape.len()
    }
}

/// Everything needed to evaluate one pair term and its gradient.
#[derive(Debug, Clone, Copy)]
pub struct PairScoreContext<'a> {
    pub site_i: SiteDerivatives,
    pub site_j: SiteDerivatives,
    pub a: f64,
    pub w: f64,
    pub v: f64,
    /// `∂a/∂(s11, s12, s22)`.
    pub da_dsigma: [f64; 3],
    pub rows_i: DesignRows<'a>,
    pub rows_j: DesignRows<'a>,
    parts: LogDensityParts,
}

impl<'a> PairScoreContext<'a> {
    pub fn new(
        site_i: SiteDerivatives,
        site_j: SiteDerivatives,
        h: [f64; 2],
        sigma: &CovMatrix,
        rows_i: DesignRows<'a>,
        rows_j: DesignRows<'a>,
    ) -> Result<Self> {
        let a = smith::mahalanobis_a(h, sigma)?;
        if !(a >= A_DEPENDENT) {
            return Err(Error::DegenerateDependence(a));
        }
        let da = smith::da_dsigma(h, sigma, a);
        Ok(Self::with_geometry(site_i, site_j, a, da, rows_i, rows_j))
    }

    /// As [`PairScoreContext::new`] with `a` and `∂a/∂Σ` precomputed; `a`
    /// must be at least [`A_DEPENDENT`].
    pub fn with_geometry(
        site_i: SiteDerivatives,
        site_j: SiteDerivatives,
        a: f64,
        da_dsigma: [f64; 3],
        rows_i: DesignRows<'a>,
        rows_j: DesignRows<'a>,
    ) -> Self {
        let w = 0.5 * a + (site_j.z / site_i.z).ln() / a;
        Self {
            site_i,
            site_j,
            a,
            w,
            v: a - w,
            da_dsigma,
            rows_i,
            rows_j,
            parts: smith::log_density_parts(site_i.z, site_j.z, a),
        }
    }

    /// The pair's log-likelihood contribution on the data scale.
    #[inline]
    pub fn log_term(&self) -> f64 {
        self.parts.value + self.site_i.log_jac + self.site_j.log_jac
    }

    #[inline]
    fn d_predictor(&self, b: Block) -> (f64, f64) {
        let k = b.index();
        let di = self.parts.d_zi * self.site_i.dz[k] + self.site_i.dlog_jac[k];
        let dj = self.parts.d_zj * self.site_j.dz[k] + self.site_j.dlog_jac[k];
        (di, dj)
    }
}

/// `∂/∂(s11, s12, s22)` of the pair log term.
pub fn score_sigma(ctx: &PairScoreContext) -> [f64; 3] {
    let d = ctx.parts.d_a;
    [d * ctx.da_dsigma[0], d * ctx.da_dsigma[1], d * ctx.da_dsigma[2]]
}

/// Gradient with respect to one block of regression coefficients.
pub fn score_beta(ctx: &PairScoreContext, which: Block) -> Vec<f64> {
    let (di, dj) = ctx.d_predictor(which);
    let (xi, xj) = (ctx.rows_i.block(which), ctx.rows_j.block(which));
    xi.iter().zip(xj).map(|(a, b)| di * a + dj * b).collect()
}

/// Full gradient in ψ order.
pub fn pair_score(ctx: &PairScoreContext) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + ctx.rows_i.len());
    out.extend_from_slice(&score_sigma(ctx));
    for b in Block::ALL {
        out.extend(score_beta(ctx, b));
    }
    out
}

/// Adds `scale · pair_score(ctx)` into `out` without allocating.
pub(crate) fn accumulate_pair_score(ctx: &PairScoreContext, scale: f64, out: &mut [f64]) {
    let s = score_sigma(ctx);
    for (o, v) in out.iter_mut().zip(s) {
        *o += scale * v;
    }
    let mut offset = 3;
    for b in Block::ALL {
        let (di, dj) = ctx.d_predictor(b);
        let (xi, xj) = (ctx.rows_i.block(b), ctx.rows_j.block(b));
        for (c, (a, bb)) in xi.iter().zip(xj).enumerate() {
            out[offset + c] += scale * (di * a + dj * bb);
        }
        offset += xi.len();
    }
}
