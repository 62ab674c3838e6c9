//! Pairwise composite negative log-likelihood over a panel of block maxima.
//!
//! Parameters are packed as `ψ = (s11, s12, s22, β_loc, β_scale, β_shape)`
//! with the regression coefficients acting on the standardized design.
//! Year/pair terms are evaluated concurrently over years and summed in year
//! order, so results do not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::DataSet;
use crate::design::{Block, Design, ModelSpec};
use crate::error::{Error, Result};
use crate::gev::{GevParams, LinkSpec};
use crate::score::{accumulate_pair_score, DesignRows, PairScoreContext, SiteDerivatives};
use crate::smith::{self, CovMatrix, A_DEPENDENT};

/// Per-term cost of an observation outside the GEV support.
pub const SUPPORT_PENALTY: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMethod {
    #[default]
    Analytic,
    #[serde(rename = "fd")]
    FiniteDifference,
}

/// How pair scores are grouped into the variability matrix `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JGrouping {
    /// One outer product per (year, pair) term.
    PerPair,
    /// One outer product per year of the summed pair scores.
    #[default]
    PerYear,
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    i: usize,
    j: usize,
    h: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
enum SiteState {
    Missing,
    Inside(SiteDerivatives),
    // support margin t <= 0 with dt/dη
    Outside { t: f64, dt: [f64; 3] },
}

// Per-pair (a, ∂a/∂Σ) and per-site margins at ψ.
type Prepared = (Vec<(f64, [f64; 3])>, Vec<GevParams>);

pub struct PairwiseLikelihood<'a> {
    data: &'a DataSet,
    design: &'a Design,
    pairs: Vec<Pair>,
}

impl<'a> PairwiseLikelihood<'a> {
    pub fn new(data: &'a DataSet, design: &'a Design) -> Result<Self> {
        let k = data.n_sites();
        if let Some(m) = &design.margins {
            for b in Block::ALL {
                if m.block(b).nrows() != k {
                    return Err(Error::InvalidArgument(format!(
                        "design has {} rows for {} sites",
                        m.block(b).nrows(),
                        k
                    )));
                }
            }
        } else {
            for n in 0..data.n_years() {
                if let Some(v) = data.row(n).iter().find(|v| !v.is_nan() && **v <= 0.0) {
                    return Err(Error::Data(format!(
                        "unit-Fréchet margins need positive maxima (got {v} in year {})",
                        data.years()[n]
                    )));
                }
            }
        }
        let sites = data.sites();
        let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                let h = [sites[j].lon - sites[i].lon, sites[j].lat - sites[i].lat];
                if h == [0.0, 0.0] {
                    return Err(Error::Data(format!(
                        "sites `{}` and `{}` share coordinates",
                        sites[i].id, sites[j].id
                    )));
                }
                pairs.push(Pair { i, j, h });
            }
        }
        Ok(Self { data, design, pairs })
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    pub fn data(&self) -> &DataSet {
        self.data
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Unpacks `Σ`, `None` when not positive definite.
    pub fn sigma(psi: &[f64]) -> Option<CovMatrix> {
        let s = CovMatrix {
            s11: psi[0],
            s12: psi[1],
            s22: psi[2],
        };
        s.is_positive_definite().then_some(s)
    }

    /// GEV parameters at every site; unit Fréchet when margins are not modelled.
    pub fn site_params(&self, psi: &[f64]) -> Vec<GevParams> {
        let k = self.data.n_sites();
        let Some(m) = &self.design.margins else {
            return vec![GevParams::UNIT_FRECHET; k];
        };
        let beta = |b: Block| &psi[self.design.block_range(b)];
        (0..k)
            .map(|s| {
                LinkSpec.params(
                    m.loc.predictor(s, beta(Block::Location)),
                    m.scale.predictor(s, beta(Block::Scale)),
                    m.shape.predictor(s, beta(Block::Shape)),
                )
            })
            .collect()
    }

    fn rows(&self, k: usize) -> DesignRows<'_> {
        match &self.design.margins {
            None => DesignRows::default(),
            Some(m) => DesignRows {
                loc: m.loc.row(k),
                scale: m.scale.row(k),
                shape: m.shape.row(k),
            },
        }
    }

    fn geometry(&self, sigma: &CovMatrix) -> Option<Vec<(f64, [f64; 3])>> {
        self.pairs
            .iter()
            .map(|p| {
                let a = smith::mahalanobis_unchecked(p.h, sigma);
                (a >= A_DEPENDENT && a.is_finite()).then(|| (a, smith::da_dsigma(p.h, sigma, a)))
            })
            .collect()
    }

    fn site_states(&self, n: usize, params: &[GevParams]) -> Vec<SiteState> {
        let modelled = self.design.margins.is_some();
        self.data
            .row(n)
            .iter()
            .zip(params)
            .map(|(&y, p)| {
                if y.is_nan() {
                    return SiteState::Missing;
                }
                if !modelled {
                    return SiteState::Inside(SiteDerivatives::frechet(y).expect("checked at construction"));
                }
                match SiteDerivatives::gev(y, p) {
                    Ok(d) => SiteState::Inside(d),
                    Err(_) => {
                        let s = (y - p.loc) / p.scale;
                        SiteState::Outside {
                            t: 1.0 + p.shape * s,
                            dt: [-p.shape / p.scale, -p.shape * s, s],
                        }
                    }
                }
            })
            .collect()
    }

    // Adds d(penalty)/dψ for a site outside the support.
    fn penalty_gradient(&self, site: usize, t: f64, dt: &[f64; 3], scale: f64, out: &mut [f64]) {
        let rows = self.rows(site);
        for b in Block::ALL {
            let r = self.design.block_range(b);
            let d = 2.0 * SUPPORT_PENALTY * t * dt[b.index()];
            for (o, x) in out[r].iter_mut().zip(rows.block(b)) {
                *o += scale * d * x;
            }
        }
    }

    /// Visits every present pair term of year `n`, passing its negative log
    /// contribution and, when requested, its gradient scaled by `scale`.
    fn year_terms(
        &self,
        n: usize,
        geom: &[(f64, [f64; 3])],
        params: &[GevParams],
        mut visit: impl FnMut(f64, Option<&dyn Fn(f64, &mut [f64])>),
        want_grad: bool,
    ) {
        let states = self.site_states(n, params);
        for (p, &(a, da)) in self.pairs.iter().zip(geom) {
            match (&states[p.i], &states[p.j]) {
                (SiteState::Missing, _) | (_, SiteState::Missing) => {}
                (SiteState::Inside(si), SiteState::Inside(sj)) => {
                    let ctx = PairScoreContext::with_geometry(*si, *sj, a, da, self.rows(p.i), self.rows(p.j));
                    if want_grad {
                        let g = |scale: f64, out: &mut [f64]| accumulate_pair_score(&ctx, -scale, out);
                        visit(-ctx.log_term(), Some(&g));
                    } else {
                        visit(-ctx.log_term(), None);
                    }
                }
                (x, y) => {
                    let mut value = SUPPORT_PENALTY;
                    for st in [x, y] {
                        if let SiteState::Outside { t, .. } = st {
                            value += SUPPORT_PENALTY * t * t;
                        }
                    }
                    if want_grad {
                        let g = |scale: f64, out: &mut [f64]| {
                            for (site, st) in [(p.i, x), (p.j, y)] {
                                if let SiteState::Outside { t, dt } = st {
                                    self.penalty_gradient(site, *t, dt, scale, out);
                                }
                            }
                        };
                        visit(value, Some(&g));
                    } else {
                        visit(value, None);
                    }
                }
            }
        }
    }

    fn prepare(&self, psi: &[f64]) -> Option<Prepared> {
        assert_eq!(psi.len(), self.dim(), "parameter vector has the wrong length");
        if psi.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let sigma = Self::sigma(psi)?;
        let geom = self.geometry(&sigma)?;
        Some((geom, self.site_params(psi)))
    }

    /// Negative pairwise log-likelihood; `+inf` when `Σ` is not positive definite.
    pub fn nll(&self, psi: &[f64]) -> f64 {
        let Some((geom, params)) = self.prepare(psi) else {
            return f64::INFINITY;
        };
        let per_year: Vec<f64> = (0..self.data.n_years())
            .into_par_iter()
            .map(|n| {
                let mut acc = 0.0;
                self.year_terms(n, &geom, &params, |v, _| acc += v, false);
                acc
            })
            .collect();
        per_year.iter().sum()
    }

    /// Negative log-likelihood with its analytic gradient.
    pub fn nll_and_gradient(&self, psi: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        let Some((geom, params)) = self.prepare(psi) else {
            return (f64::INFINITY, vec![f64::NAN; d]);
        };
        let per_year: Vec<(f64, Vec<f64>)> = (0..self.data.n_years())
            .into_par_iter()
            .map(|n| {
                let mut acc = 0.0;
                let mut g = vec![0.0; d];
                self.year_terms(
                    n,
                    &geom,
                    &params,
                    |v, grad| {
                        acc += v;
                        if let Some(grad) = grad {
                            grad(1.0, &mut g);
                        }
                    },
                    true,
                );
                (acc, g)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; d];
        for (v, g) in per_year {
            total += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        (total, grad)
    }

    /// Central differences with step `ε^{1/3} · max(1, |ψ_k|)`.
    pub fn fd_gradient(&self, psi: &[f64]) -> Vec<f64> {
        central_gradient(|x| self.nll(x), psi)
    }

    pub fn gradient(&self, psi: &[f64], method: GradientMethod) -> Vec<f64> {
        match method {
            GradientMethod::Analytic => self.nll_and_gradient(psi).1,
            GradientMethod::FiniteDifference => self.fd_gradient(psi),
        }
    }

    /// Per-pair log-likelihood scores of one year, in lexicographic pair order.
    pub fn year_pair_scores(&self, psi: &[f64], year: usize) -> Result<Vec<Vec<f64>>> {
        let (geom, params) = self
            .prepare(psi)
            .ok_or_else(|| Error::InvalidArgument("parameters do not give a valid model".into()))?;
        let d = self.dim();
        let mut out = Vec::new();
        self.year_terms(
            year,
            &geom,
            &params,
            |_, grad| {
                let mut s = vec![0.0; d];
                if let Some(grad) = grad {
                    // gradient of the negative term, flipped to a score
                    grad(-1.0, &mut s);
                }
                out.push(s);
            },
            true,
        );
        Ok(out)
    }

    /// Variability matrix `J` from outer products of scores.
    pub fn estimate_j(&self, psi: &[f64], grouping: JGrouping) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let per_year: Vec<Result<DMatrix<f64>>> = (0..self.data.n_years())
            .into_par_iter()
            .map(|n| {
                let scores = self.year_pair_scores(psi, n)?;
                let mut j = DMatrix::zeros(d, d);
                match grouping {
                    JGrouping::PerPair => {
                        for s in &scores {
                            add_outer(&mut j, s);
                        }
                    }
                    JGrouping::PerYear => {
                        let mut total = vec![0.0; d];
                        for s in &scores {
                            for (t, v) in total.iter_mut().zip(s) {
                                *t += v;
                            }
                        }
                        add_outer(&mut j, &total);
                    }
                }
                Ok(j)
            })
            .collect();
        let mut j = DMatrix::zeros(d, d);
        for m in per_year {
            j += m?;
        }
        Ok(j)
    }
}

fn add_outer(m: &mut DMatrix<f64>, s: &[f64]) {
    let d = s.len();
    for r in 0..d {
        for c in 0..d {
            m[(r, c)] += s[r] * s[c];
        }
    }
}

/// Central-difference gradient with step `ε^{1/3} · max(1, |x_k|)`.
pub fn central_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h0 = f64::EPSILON.cbrt();
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = h0 * x[k].abs().max(1.0);
            xs[k] = x[k] + h;
            let up = f(&xs);
            xs[k] = x[k] - h;
            let dn = f(&xs);
            xs[k] = x[k];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Pairwise negative log-likelihood with `psi` on the reported coefficient scale.
pub fn pairwise_nll(psi: &[f64], data: &DataSet, model: &ModelSpec) -> Result<f64> {
    let design = Design::build(model, data.sites())?;
    check_len(psi, &design)?;
    let lik = PairwiseLikelihood::new(data, &design)?;
    Ok(lik.nll(&design.from_original(psi)))
}

/// Gradient of [`pairwise_nll`] with respect to `psi` on the reported scale.
pub fn pairwise_gradient(
    psi: &[f64],
    data: &DataSet,
    model: &ModelSpec,
    method: GradientMethod,
) -> Result<Vec<f64>> {
    let design = Design::build(model, data.sites())?;
    check_len(psi, &design)?;
    let lik = PairwiseLikelihood::new(data, &design)?;
    let g = lik.gradient(&design.from_original(psi), method);
    // ψ_orig = T ψ_int, so ∇_orig = T⁻ᵀ ∇_int
    let t = design.to_original_matrix();
    let tinv_t = t
        .try_inverse()
        .ok_or(Error::Singular(f64::INFINITY))?
        .transpose();
    Ok((tinv_t * nalgebra::DVector::from_vec(g)).iter().copied().collect())
}

fn check_len(psi: &[f64], design: &Design) -> Result<()> {
    if psi.len() != design.dim() {
        return Err(Error::InvalidArgument(format!(
            "expected {} parameters ({}), got {}",
            design.dim(),
            design.param_names().join(", "),
            psi.len()
        )));
    }
    Ok(())
}
