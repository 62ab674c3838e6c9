//! Maximum pairwise likelihood fitting, sandwich uncertainty, CLIC and
//! composite likelihood ratio tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::DataSet;
use crate::design::{Block, Design, ModelSpec};
use crate::error::{Error, Result};
use crate::gev::{self, GevParams, LinkSpec};
use crate::likelihood::{GradientMethod, JGrouping, PairwiseLikelihood};
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};
use crate::simulate::naive_theta;
use crate::smith::{self, CovMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Quasi-Newton iteration budget; 0 skips optimization entirely.
    pub max_iterations: usize,
    /// Nelder–Mead pre-search budget.
    pub nm_iterations: usize,
    pub gradient: GradientMethod,
    pub j_grouping: JGrouping,
    /// Compare the analytic gradient with finite differences at the start and
    /// fall back to finite differences when they disagree.
    pub self_check: bool,
    /// Starting point in internal coordinates, overriding the automatic one.
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            nm_iterations: 500,
            gradient: GradientMethod::Analytic,
            j_grouping: JGrouping::PerYear,
            self_check: true,
            start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeKind {
    #[default]
    Godambe,
    Hessian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Max-norm of the gradient in ψ at the estimate.
    pub grad_max: f64,
    pub gradient: GradientMethod,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    /// Estimate in internal coordinates (standardized covariates).
    pub psi_hat: Vec<f64>,
    /// Indices held fixed, with their internal values.
    pub fixed: Vec<(usize, f64)>,
    pub nll: f64,
    /// Numeric Hessian of the negative log-likelihood over all of ψ.
    pub hessian: DMatrix<f64>,
    pub j: DMatrix<f64>,
    /// `H J⁻¹ H` over all of ψ; `None` when `J` is singular.
    pub godambe: Option<DMatrix<f64>>,
    /// Godambe standard errors in internal coordinates; `None` for fixed entries.
    pub se: Vec<Option<f64>>,
    pub clic: Option<f64>,
    pub convergence: Convergence,
    /// Map from internal ψ to reported coefficients.
    pub to_original: DMatrix<f64>,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.psi_hat.len()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        free_indices(self.dim(), &self.fixed)
    }

    pub fn sigma(&self) -> CovMatrix {
        CovMatrix {
            s11: self.psi_hat[0],
            s12: self.psi_hat[1],
            s22: self.psi_hat[2],
        }
    }

    /// Estimates on the reported (original covariate) scale.
    pub fn estimates(&self) -> Vec<f64> {
        (&self.to_original * DVector::from_column_slice(&self.psi_hat))
            .iter()
            .copied()
            .collect()
    }

    /// Covariance of the free parameters in internal coordinates, embedded in
    /// a full-size matrix with zero rows for fixed entries.
    pub fn covariance(&self, kind: SeKind) -> Option<DMatrix<f64>> {
        let free = self.free_indices();
        let h = submatrix(&self.hessian, &free);
        let hinv = invert_spd(&h).ok()?;
        let v = match kind {
            SeKind::Hessian => hinv,
            SeKind::Godambe => &hinv * submatrix(&self.j, &free) * &hinv,
        };
        let d = self.dim();
        let mut full = DMatrix::zeros(d, d);
        for (a, &r) in free.iter().enumerate() {
            for (b, &c) in free.iter().enumerate() {
                full[(r, c)] = v[(a, b)];
            }
        }
        Some(full)
    }

    /// Standard errors on the reported scale, `T V Tᵀ`.
    pub fn standard_errors(&self, kind: SeKind) -> Vec<Option<f64>> {
        let fixed: Vec<usize> = self.fixed.iter().map(|f| f.0).collect();
        match self.covariance(kind) {
            None => vec![None; self.dim()],
            Some(v) => {
                let vo = &self.to_original * v * self.to_original.transpose();
                (0..self.dim())
                    .map(|k| {
                        let x = vo[(k, k)];
                        (!fixed.contains(&k) && x >= 0.0).then(|| x.sqrt())
                    })
                    .collect()
            }
        }
    }

    /// Replaces `J` and recomputes everything derived from it.
    pub fn with_j(mut self, j: DMatrix<f64>) -> Self {
        self.j = j;
        self.refresh_derived();
        self
    }

    fn refresh_derived(&mut self) {
        self.godambe = godambe(&self.hessian, &self.j).ok();
        let free = self.free_indices();
        let cov = self.covariance(SeKind::Godambe);
        self.se = (0..self.dim())
            .map(|k| {
                let c = cov.as_ref()?;
                (free.contains(&k) && c[(k, k)] >= 0.0).then(|| c[(k, k)].sqrt())
            })
            .collect();
        self.clic = clic(self).ok();
    }
}

fn free_indices(d: usize, fixed: &[(usize, f64)]) -> Vec<usize> {
    (0..d).filter(|k| !fixed.iter().any(|f| f.0 == *k)).collect()
}

fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    // nalgebra's SVD does not terminate on NaN input
    if !m.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let min = sv.min();
    if min > 0.0 {
        sv.max() / min
    } else {
        f64::INFINITY
    }
}

/// Inverse of a symmetric matrix, by Cholesky when positive definite and LU
/// otherwise; singular matrices are reported with their condition number.
fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let cond = condition_number(m);
    if !(cond < 1e14) {
        return Err(Error::Singular(cond));
    }
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.inverse());
    }
    m.clone().try_inverse().ok_or(Error::Singular(cond))
}

/// `H J⁻¹ H`.
pub fn godambe(h: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let jinv = invert_spd(j)?;
    let g = h * jinv * h;
    Ok((&g + g.transpose()) * 0.5)
}

/// `−2{ℓ_C(ψ̂) − tr(J H⁻¹)}` over the free parameters.
pub fn clic(fit: &FitResult) -> Result<f64> {
    let free = fit.free_indices();
    let hinv = invert_spd(&submatrix(&fit.hessian, &free))?;
    let penalty = (submatrix(&fit.j, &free) * hinv).trace();
    Ok(2.0 * fit.nll + 2.0 * penalty)
}

/// Central second differences with step `ε^{1/4} · max(1, |x_k|)`, symmetrized.
pub fn numeric_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h0 = f64::EPSILON.powf(0.25);
    let mut steps: Vec<f64> = x.iter().map(|v| h0 * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut xs = x.to_vec();
    let mut eval = |moves: &[(usize, f64)]| {
        for &(k, s) in moves {
            xs[k] = x[k] + s;
        }
        let v = f(&xs);
        for &(k, _) in moves {
            xs[k] = x[k];
        }
        v
    };
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        // near a support boundary shrink the step until both probes are inside
        let mut hk = steps[k];
        let mut v = f64::NAN;
        for _ in 0..12 {
            v = (eval(&[(k, hk)]) - 2.0 * f0 + eval(&[(k, -hk)])) / (hk * hk);
            if v.is_finite() {
                break;
            }
            hk *= 0.25;
        }
        steps[k] = hk;
        m[(k, k)] = v;
        for l in 0..k {
            let (mut hk, mut hl) = (steps[k], steps[l]);
            for _ in 0..6 {
                v = (eval(&[(k, hk), (l, hl)]) - eval(&[(k, hk), (l, -hl)]) - eval(&[(k, -hk), (l, hl)])
                    + eval(&[(k, -hk), (l, -hl)]))
                    / (4.0 * hk * hl);
                if v.is_finite() {
                    break;
                }
                hk *= 0.25;
                hl *= 0.25;
            }
            m[(k, l)] = v;
            m[(l, k)] = v;
        }
    }
    (&m + m.transpose()) * 0.5
}

/// Maps between ψ and the unconstrained coordinates seen by the optimizers.
/// `Σ` goes through its Cholesky factor `(log L11, L21, log L22)` unless one
/// of its entries is fixed, in which case natural coordinates are used and
/// non-positive-definite values are rejected by the likelihood.
struct Reparam {
    dim: usize,
    fixed: Vec<(usize, f64)>,
    free: Vec<usize>,
    chol: bool,
}

impl Reparam {
    fn new(dim: usize, fixed: &[(usize, f64)]) -> Self {
        let free = free_indices(dim, fixed);
        let chol = (0..3).all(|k| free.contains(&k));
        Self {
            dim,
            fixed: fixed.to_vec(),
            free,
            chol,
        }
    }

    fn to_theta(&self, psi: &[f64]) -> Vec<f64> {
        let mut v = psi.to_vec();
        if self.chol {
            let l11 = psi[0].sqrt();
            let l21 = psi[1] / l11;
            let l22 = (psi[2] - l21 * l21).sqrt();
            v[0] = l11.ln();
            v[1] = l21;
            v[2] = l22.ln();
        }
        self.free.iter().map(|&k| v[k]).collect()
    }

    fn to_psi(&self, theta: &[f64]) -> Vec<f64> {
        let mut psi = vec![0.0; self.dim];
        for (&k, &t) in self.free.iter().zip(theta) {
            psi[k] = t;
        }
        for &(k, v) in &self.fixed {
            psi[k] = v;
        }
        if self.chol {
            let (l11, l21, l22) = (psi[0].exp(), psi[1], psi[2].exp());
            psi[0] = l11 * l11;
            psi[1] = l11 * l21;
            psi[2] = l21 * l21 + l22 * l22;
        }
        psi
    }

    fn grad_theta(&self, theta: &[f64], g_psi: &[f64]) -> Vec<f64> {
        let mut g = g_psi.to_vec();
        if self.chol {
            let psi_free = |k: usize| theta[self.free.iter().position(|&f| f == k).unwrap()];
            let (l11, l21, l22) = (psi_free(0).exp(), psi_free(1), psi_free(2).exp());
            let [a, b, c] = [g_psi[0], g_psi[1], g_psi[2]];
            g[0] = a * 2.0 * l11 * l11 + b * l11 * l21;
            g[1] = b * l11 + c * 2.0 * l21;
            g[2] = c * 2.0 * l22 * l22;
        }
        self.free.iter().map(|&k| g[k]).collect()
    }

    fn nm_steps(&self, theta: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .zip(theta)
            .map(|(&k, t)| {
                if self.chol && (k == 0 || k == 2) {
                    0.2
                } else {
                    0.1 * t.abs().max(1.0)
                }
            })
            .collect()
    }
}

/// Automatic starting point in internal coordinates.
pub fn start_values(lik: &PairwiseLikelihood, sigma_init: Option<CovMatrix>) -> Vec<f64> {
    let data = lik.data();
    let design = lik.design();
    let mut psi = vec![0.0; design.dim()];
    let mut site_margins = vec![GevParams::UNIT_FRECHET; data.n_sites()];

    if let Some(m) = &design.margins {
        let fits: Vec<Option<GevParams>> =
            (0..data.n_sites()).map(|k| gev::fit_univariate(&data.column(k)).ok()).collect();
        let pooled = || {
            let all: Vec<f64> = (0..data.n_sites()).flat_map(|k| data.column(k)).collect();
            gev::fit_univariate(&all).ok()
        };
        let fallback = pooled().unwrap_or(GevParams {
            loc: 0.0,
            scale: 1.0,
            shape: 0.1,
        });
        for b in Block::ALL {
            let dm = m.block(b);
            let pred = |p: &GevParams| {
                let (l, s, x) = LinkSpec.predictors(p);
                match b {
                    Block::Location => l,
                    Block::Scale => s,
                    Block::Shape => x.clamp(-0.4, 0.4),
                }
            };
            let rows: Vec<usize> = (0..data.n_sites()).filter(|&k| fits[k].is_some()).collect();
            let p = dm.ncols();
            let mut beta = vec![0.0; p];
            beta[0] = pred(&fallback);
            if rows.len() > p {
                let x = DMatrix::from_fn(rows.len(), p, |r, c| dm.row(rows[r])[c]);
                let y = DVector::from_fn(rows.len(), |r, _| pred(fits[rows[r]].as_ref().unwrap()));
                if let Ok(sol) = x.clone().svd(true, true).solve(&y, 1e-10) {
                    if sol.iter().all(|v| v.is_finite()) {
                        beta = sol.iter().copied().collect();
                    }
                }
            }
            psi[design.block_range(b)].copy_from_slice(&beta);
        }
        // pull the shape towards zero until every observation is in the support
        for _ in 0..30 {
            let params = lik.site_params(&psi);
            let inside = (0..data.n_years()).all(|n| {
                data.row(n)
                    .iter()
                    .zip(&params)
                    .all(|(&y, p)| y.is_nan() || gev::to_frechet(y, p).is_ok())
            });
            if inside {
                break;
            }
            for k in design.block_range(Block::Shape) {
                psi[k] *= 0.5;
            }
        }
        site_margins = lik.site_params(&psi);
    }

    let sigma = sigma_init.unwrap_or_else(|| sigma_from_theta(data, &site_margins));
    psi[0] = sigma.s11;
    psi[1] = sigma.s12;
    psi[2] = sigma.s22;
    psi
}

// Least squares for Σ⁻¹ from a(h)² = hᵀ Σ⁻¹ h with a from naive pairwise θ.
fn sigma_from_theta(data: &DataSet, margins: &[GevParams]) -> CovMatrix {
    let sites = data.sites();
    let lons = sites.iter().map(|s| s.lon);
    let lats = sites.iter().map(|s| s.lat);
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    };
    let size = span(&mut lons.clone()).max(span(&mut lats.clone())).max(1e-6);
    let fallback = CovMatrix {
        s11: size * size / 10.0,
        s12: 0.0,
        s22: size * size / 10.0,
    };

    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    let mut used = 0;
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let (mut zi, mut zj) = (Vec::new(), Vec::new());
            for n in 0..data.n_years() {
                if let (Some(a), Some(b)) = (data.value(n, i), data.value(n, j)) {
                    if let (Ok(a), Ok(b)) = (gev::to_frechet(a, &margins[i]), gev::to_frechet(b, &margins[j])) {
                        zi.push(a);
                        zj.push(b);
                    }
                }
            }
            if zi.len() < 5 {
                continue;
            }
            let Ok(theta) = naive_theta(&zi, &zj) else { continue };
            if theta > 1.9 {
                continue;
            }
            let Some(a) = smith::dependence_from_theta(theta) else { continue };
            let h = [sites[j].lon - sites[i].lon, sites[j].lat - sites[i].lat];
            let row = nalgebra::Vector3::new(h[0] * h[0], 2.0 * h[0] * h[1], h[1] * h[1]);
            ata += row * row.transpose();
            atb += row * (a * a);
            used += 1;
        }
    }
    if used < 3 {
        return fallback;
    }
    let Some(p) = ata.try_inverse().map(|inv| inv * atb) else {
        return fallback;
    };
    let prec = CovMatrix {
        s11: p[0],
        s12: p[1],
        s22: p[2],
    };
    if !prec.is_positive_definite() {
        return fallback;
    }
    let det = prec.det();
    let s = CovMatrix {
        s11: prec.s22 / det,
        s12: -prec.s12 / det,
        s22: prec.s11 / det,
    };
    if s.is_positive_definite() && s.as_array().iter().all(|v| v.is_finite()) {
        s
    } else {
        fallback
    }
}

fn gradient_agrees(analytic: &[f64], fd: &[f64]) -> bool {
    let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(fd)
        .all(|(a, f)| (a - f).abs() <= 1e-4 * f.abs().max(1e-3 * scale).max(1e-8))
}

/// Fits a model specification to a panel.
pub fn fit(data: &DataSet, model: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let design = Design::build(model, data.sites())?;
    let fixed = design.resolve_fixed(&model.fixed)?;
    let lik = PairwiseLikelihood::new(data, &design)?;
    fit_likelihood(&lik, &fixed, model.sigma_init, options)
}

// Fixed Σ entries can make the automatic start indefinite; move only the
// free entries back inside the cone.
fn repair_sigma_start(psi: &mut [f64], start: [f64; 3], fixed: &[(usize, f64)]) {
    let is_free = |k: usize| !fixed.iter().any(|f| f.0 == k);
    if is_free(1) {
        let rho = (start[1] / (start[0] * start[2]).sqrt()).clamp(-0.95, 0.95);
        psi[1] = if rho.is_finite() { rho * (psi[0] * psi[2]).sqrt() } else { 0.0 };
        return;
    }
    let need = psi[1] * psi[1] / 0.9;
    if is_free(2) && psi[0] > 0.0 {
        psi[2] = psi[2].max(need / psi[0]);
    } else if is_free(0) && psi[2] > 0.0 {
        psi[0] = psi[0].max(need / psi[2]);
    }
}

/// Fits with an explicit likelihood and fixed set (internal coordinates).
pub fn fit_likelihood(
    lik: &PairwiseLikelihood,
    fixed: &[(usize, f64)],
    sigma_init: Option<CovMatrix>,
    options: &FitOptions,
) -> Result<FitResult> {
    let d = lik.dim();
    let mut psi0 = match &options.start {
        Some(s) if s.len() == d => s.clone(),
        Some(s) => {
            return Err(Error::InvalidArgument(format!(
                "start vector has {} entries, model has {d}",
                s.len()
            )))
        }
        None => start_values(lik, sigma_init),
    };
    let start_sigma = [psi0[0], psi0[1], psi0[2]];
    for &(k, v) in fixed {
        psi0[k] = v;
    }
    if PairwiseLikelihood::sigma(&psi0).is_none() {
        repair_sigma_start(&mut psi0, start_sigma, fixed);
    }
    if PairwiseLikelihood::sigma(&psi0).is_none() {
        return Err(Error::NotPositiveDefinite {
            s11: psi0[0],
            s12: psi0[1],
            s22: psi0[2],
        });
    }

    let mut method = options.gradient;
    if method == GradientMethod::Analytic && options.self_check {
        let (f, g) = lik.nll_and_gradient(&psi0);
        if f.is_finite() {
            let fd = lik.fd_gradient(&psi0);
            if !gradient_agrees(&g, &fd) {
                log::warn!("analytic gradient disagrees with finite differences at the start; using finite differences");
                method = GradientMethod::FiniteDifference;
            }
        }
    }
    let fg = |psi: &[f64]| -> (f64, Vec<f64>) {
        match method {
            GradientMethod::Analytic => lik.nll_and_gradient(psi),
            GradientMethod::FiniteDifference => (lik.nll(psi), lik.fd_gradient(psi)),
        }
    };

    let rp = Reparam::new(d, fixed);
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut psi_hat = psi0.clone();
    if options.max_iterations > 0 && !rp.free.is_empty() {
        let theta0 = rp.to_theta(&psi0);
        let nm = nelder_mead(
            |t| lik.nll(&rp.to_psi(t)),
            &theta0,
            &rp.nm_steps(&theta0),
            &NelderMeadOptions {
                max_iterations: options.nm_iterations,
                f_tol: 1e-10,
            },
        );
        iterations += nm.iterations;
        evaluations += nm.evaluations;
        let mut theta = nm.x;
        let opts = BfgsOptions {
            max_iterations: options.max_iterations,
            ..BfgsOptions::default()
        };
        // restarts drop curvature information gathered far from the optimum
        for _ in 0..3 {
            let m = bfgs(
                |t| {
                    let psi = rp.to_psi(t);
                    let (f, g) = fg(&psi);
                    (f, rp.grad_theta(t, &g))
                },
                &theta,
                &opts,
            );
            iterations += m.iterations;
            evaluations += m.evaluations;
            theta = m.x;
            if m.converged {
                break;
            }
        }
        psi_hat = rp.to_psi(&theta);
    }

    let (nll, g) = fg(&psi_hat);
    let g_free: Vec<f64> = rp.free.iter().map(|&k| g[k]).collect();
    let grad_max = g_free.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let theta_hat = rp.to_theta(&psi_hat);
    let g_theta = rp.grad_theta(&theta_hat, &g);
    let theta_max = g_theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let converged = nll.is_finite() && theta_max.min(grad_max) < 1e-5 * (1.0 + nll.abs());

    let hessian = numeric_hessian(|x| lik.nll(x), &psi_hat);
    let j = lik.estimate_j(&psi_hat, options.j_grouping)?;
    let mut result = FitResult {
        names: lik.design().param_names(),
        psi_hat,
        fixed: fixed.to_vec(),
        nll,
        hessian,
        j,
        godambe: None,
        se: vec![None; d],
        clic: None,
        convergence: Convergence {
            converged,
            iterations,
            evaluations,
            grad_max,
            gradient: method,
        },
        to_original: lik.design().to_original_matrix(),
    };
    result.refresh_derived();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClrtResult {
    pub restricted: Vec<String>,
    pub w: f64,
    /// Eigenvalues, largest first.
    pub nu: Vec<f64>,
    pub p_rj: f64,
    pub w_cb_chol: f64,
    pub p_cb_chol: f64,
    pub w_cb_svd: f64,
    pub p_cb_svd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRoot {
    Cholesky,
    Svd,
}

/// `M` with `Mᵀ M = A`.
fn matrix_root(a: &DMatrix<f64>, how: MatrixRoot) -> Result<DMatrix<f64>> {
    match how {
        MatrixRoot::Cholesky => a
            .clone()
            .cholesky()
            .map(|c| c.l().transpose())
            .ok_or_else(|| Error::Singular(condition_number(a))),
        MatrixRoot::Svd => {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::Singular(f64::INFINITY));
            }
            let svd = a.clone().svd(true, true);
            let u = svd.u.ok_or(Error::Singular(f64::INFINITY))?;
            if svd.singular_values.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Singular(condition_number(a)));
            }
            let root = DMatrix::from_diagonal(&svd.singular_values.map(f64::sqrt));
            Ok(root * u.transpose())
        }
    }
}

/// Composite likelihood ratio test of `null` (a restricted fit) against `full`.
///
/// `restricted` lists the ψ indices fixed under the null but free in the full
/// model. The eigenvalue weights use `H` and `J` of the null fit over the full
/// model's free parameters.
pub fn clrt(
    lik: &PairwiseLikelihood,
    full: &FitResult,
    null: &FitResult,
    restricted: &[usize],
) -> Result<ClrtResult> {
    check_nested(full, null, restricted)?;
    let free = full.free_indices();
    let pos: Vec<usize> = restricted
        .iter()
        .map(|r| free.iter().position(|f| f == r).unwrap())
        .collect();
    let w = 2.0 * (null.nll - full.nll);

    // ν from the null fit
    let h0 = submatrix(&null.hessian, &free);
    let j0 = submatrix(&null.j, &free);
    let h0inv = invert_spd(&h0)?;
    let ginv = &h0inv * &j0 * &h0inv;
    let hb = submatrix(&h0inv, &pos);
    let gb = submatrix(&ginv, &pos);
    let nu = generalized_eigenvalues(&gb, &hb)?;
    let p_rj = weighted_chisq_pvalue(w.max(0.0), &nu);

    // Chandler–Bate adjustment at the full fit
    let hf = submatrix(&full.hessian, &free);
    let gf = godambe(&hf, &submatrix(&full.j, &free))?;
    let q = restricted.len();
    let chi = ChiSquared::new(q as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut adjusted = [0.0; 2];
    for (slot, how) in [MatrixRoot::Cholesky, MatrixRoot::Svd].into_iter().enumerate() {
        let m = matrix_root(&hf, how)?;
        let ma = matrix_root(&gf, how)?;
        let minv = m.clone().try_inverse().ok_or_else(|| Error::Singular(condition_number(&m)))?;
        let c = minv * ma;
        adjusted[slot] = adjusted_statistic(lik, full, null, &free, &pos, &c, w)?;
    }
    let pval = |x: f64| if x <= 0.0 { 1.0 } else { chi.sf(x) };
    Ok(ClrtResult {
        restricted: restricted.iter().map(|&k| full.names[k].clone()).collect(),
        w,
        nu,
        p_rj,
        w_cb_chol: adjusted[0],
        p_cb_chol: pval(adjusted[0]),
        w_cb_svd: adjusted[1],
        p_cb_svd: pval(adjusted[1]),
    })
}

fn check_nested(full: &FitResult, null: &FitResult, restricted: &[usize]) -> Result<()> {
    if full.names != null.names {
        return Err(Error::NotNested("fits have different parameters".into()));
    }
    if restricted.is_empty() {
        return Err(Error::NotNested("no restricted parameters".into()));
    }
    let null_fixed = |k: usize| null.fixed.iter().find(|f| f.0 == k).map(|f| f.1);
    for &r in restricted {
        if null_fixed(r).is_none() || full.fixed.iter().any(|f| f.0 == r) {
            return Err(Error::NotNested(format!(
                "`{}` must be fixed in the null fit and free in the full fit",
                full.names.get(r).map_or("?", |s| s.as_str())
            )));
        }
    }
    for &(k, v) in &full.fixed {
        if null_fixed(k).is_none_or(|nv| (nv - v).abs() > 1e-12 * v.abs().max(1.0)) {
            return Err(Error::NotNested(format!("`{}` is fixed differently", full.names[k])));
        }
    }
    if null.fixed.len() != full.fixed.len() + restricted.len() {
        return Err(Error::NotNested("restricted set does not match the fixed parameters".into()));
    }
    Ok(())
}

// Eigenvalues of B⁻¹A for symmetric A and positive definite B, largest first.
fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(condition_number(b)))?
        .l();
    let linv = l.try_inverse().ok_or(Error::Singular(f64::INFINITY))?;
    let s = &linv * a * linv.transpose();
    let s = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

// W_adj = 2{min over H0 of nll(ψ̂ + C(ψ − ψ̂)) − nll(ψ̂)}.
fn adjusted_statistic(
    lik: &PairwiseLikelihood,
    full: &FitResult,
    null: &FitResult,
    free: &[usize],
    pos: &[usize],
    c: &DMatrix<f64>,
    w: f64,
) -> Result<f64> {
    let f = free.len();
    if (c - DMatrix::<f64>::identity(f, f)).amax() < 1e-12 {
        return Ok(w);
    }
    let hat = DVector::from_fn(f, |r, _| full.psi_hat[free[r]]);
    let embed = |x: &DVector<f64>| {
        let y = &hat + c * (x - &hat);
        let mut psi = full.psi_hat.clone();
        for (r, &k) in free.iter().enumerate() {
            psi[k] = y[r];
        }
        psi
    };
    let null_x = DVector::from_fn(f, |r, _| null.psi_hat[free[r]]);
    let cinv = c.clone().try_inverse().ok_or_else(|| Error::Singular(condition_number(c)))?;
    let mut x0 = &hat + cinv * (&null_x - &hat);
    for &p in pos {
        x0[p] = null_x[p];
    }
    let rest: Vec<usize> = (0..f).filter(|r| !pos.contains(r)).collect();
    let assemble = |t: &[f64]| {
        let mut x = x0.clone();
        for (&r, &v) in rest.iter().zip(t) {
            x[r] = v;
        }
        x
    };
    let t0: Vec<f64> = rest.iter().map(|&r| x0[r]).collect();
    let objective = |t: &[f64]| lik.nll(&embed(&assemble(t)));
    let mut best_t = t0.clone();
    let mut best = objective(&t0);
    // also try the unadjusted null optimum as a start
    let t1: Vec<f64> = rest.iter().map(|&r| null_x[r]).collect();
    let f1 = objective(&t1);
    if f1 < best {
        best = f1;
        best_t = t1;
    }
    if !rest.is_empty() {
        let steps: Vec<f64> = best_t.iter().map(|v| 0.05 * v.abs().max(1.0)).collect();
        let nm = nelder_mead(objective, &best_t, &steps, &NelderMeadOptions { max_iterations: 300, f_tol: 1e-12 });
        let m = bfgs(
            |t| {
                let x = assemble(t);
                let (v, g) = lik.nll_and_gradient(&embed(&x));
                let gf = DVector::from_fn(f, |r, _| g[free[r]]);
                let gx = c.transpose() * gf;
                (v, rest.iter().map(|&r| gx[r]).collect())
            },
            &nm.x,
            &BfgsOptions::default(),
        );
        best = best.min(nm.f).min(m.f);
    }
    Ok((2.0 * (best - full.nll)).max(0.0))
}

/// `Pr(Σ ν_i χ²_1 > w)`. Equal weights use the exact scaled χ²_q law;
/// otherwise 10⁶ fixed-seed Monte Carlo draws.
pub fn weighted_chisq_pvalue(w: f64, nu: &[f64]) -> f64 {
    if nu.is_empty() {
        return if w > 0.0 { 0.0 } else { 1.0 };
    }
    if w <= 0.0 {
        return 1.0;
    }
    let first = nu[0];
    if nu.iter().all(|v| (v - first).abs() <= 1e-12 * first.abs()) && first > 0.0 {
        let chi = ChiSquared::new(nu.len() as f64).expect("positive degrees of freedom");
        return chi.sf(w / first);
    }
    const DRAWS: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_C12E);
    let mut exceed = 0usize;
    for _ in 0..DRAWS {
        let s: f64 = nu
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v * z * z
            })
            .sum();
        if s > w {
            exceed += 1;
        }
    }
    exceed as f64 / DRAWS as f64
}
