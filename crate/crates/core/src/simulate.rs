//! Simulation of the Smith max-stable process from its storm-profile
//! representation `Z(t) = max_k U_k f(X_k − t)` with Gaussian `f`.
//!
//! Storm magnitudes come from a unit-rate Poisson process on the reversed
//! scale, `U_k = |S| / Γ_k` with `Γ_k` partial sums of standard exponentials,
//! and centres uniform on a window `S` around the sites. Generation stops once
//! no remaining storm can exceed the current minimum over the sites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Site};
use crate::error::{Error, Result};
use crate::gev::{self, GevParams, LinkSpec};
use crate::smith::CovMatrix;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Region {
    pub fn square(lo: f64, hi: f64) -> Self {
        Self {
            lon_min: lo,
            lon_max: hi,
            lat_min: lo,
            lat_max: hi,
        }
    }

    pub fn bounding(points: &[[f64; 2]]) -> Self {
        let mut r = Self {
            lon_min: f64::INFINITY,
            lon_max: f64::NEG_INFINITY,
            lat_min: f64::INFINITY,
            lat_max: f64::NEG_INFINITY,
        };
        for p in points {
            r.lon_min = r.lon_min.min(p[0]);
            r.lon_max = r.lon_max.max(p[0]);
            r.lat_min = r.lat_min.min(p[1]);
            r.lat_max = r.lat_max.max(p[1]);
        }
        r
    }

    /// Uniform random sites in the box, in a fixed order given `seed`.
    pub fn random_sites(&self, k: usize, seed: u64) -> Vec<Site> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|i| {
                let lon = rng.gen_range(self.lon_min..self.lon_max);
                let lat = rng.gen_range(self.lat_min..self.lat_max);
                Site::new(format!("S{}", i + 1), lon, lat, 0.0)
            })
            .collect()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.lon_min && p[0] <= self.lon_max && p[1] >= self.lat_min && p[1] <= self.lat_max
    }

    fn grow(&self, by: f64) -> Self {
        Self {
            lon_min: self.lon_min - by,
            lon_max: self.lon_max + by,
            lat_min: self.lat_min - by,
            lat_max: self.lat_max + by,
        }
    }

    fn area(&self) -> f64 {
        (self.lon_max - self.lon_min) * (self.lat_max - self.lat_min)
    }
}

/// Marginal distributions applied to simulated unit-Fréchet fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginSurface {
    #[default]
    Frechet,
    Constant { loc: f64, scale: f64, shape: f64 },
    /// Linear predictors over `(1, lon, lat, alt)`; the scale predictor is on
    /// the log scale.
    Linear { loc: [f64; 4], scale: [f64; 4], shape: [f64; 4] },
}

impl MarginSurface {
    pub fn params_at(&self, site: &Site) -> GevParams {
        match self {
            MarginSurface::Frechet => GevParams::UNIT_FRECHET,
            MarginSurface::Constant { loc, scale, shape } => GevParams {
                loc: *loc,
                scale: *scale,
                shape: *shape,
            },
            MarginSurface::Linear { loc, scale, shape } => {
                let x = [1.0, site.lon, site.lat, site.alt];
                let eta = |b: &[f64; 4]| b.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
                LinkSpec.params(eta(loc), eta(scale), eta(shape))
            }
        }
    }
}

fn default_enlargement() -> f64 {
    4.0
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sigma: CovMatrix,
    pub sites: Vec<Site>,
    /// Window for storm centres before enlargement; defaults to `[0, 40]²`,
    /// widened to cover any site outside it.
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub margins: MarginSurface,
    pub n_years: usize,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Window enlargement in units of `max(σ₁, σ₂)`.
    #[serde(default = "default_enlargement")]
    pub enlargement: f64,
}

impl SimConfig {
    pub fn new(sigma: CovMatrix, sites: Vec<Site>, n_years: usize, seed: u64) -> Self {
        Self {
            sigma,
            sites,
            region: None,
            margins: MarginSurface::Frechet,
            n_years,
            replicates: 1,
            seed,
            enlargement: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_positive_definite() {
            return Err(Error::NotPositiveDefinite {
                s11: self.sigma.s11,
                s12: self.sigma.s12,
                s22: self.sigma.s22,
            });
        }
        if self.sites.is_empty() {
            return Err(Error::InvalidArgument("no sites to simulate".into()));
        }
        if self.n_years == 0 || self.replicates == 0 {
            return Err(Error::InvalidArgument("years and replicates must be at least 1".into()));
        }
        if !(self.enlargement >= 0.0) {
            return Err(Error::InvalidArgument("enlargement must be nonnegative".into()));
        }
        if let Some(r) = &self.region {
            if let Some(s) = self.sites.iter().find(|s| !r.contains(s.coords())) {
                return Err(Error::InvalidArgument(format!("site `{}` lies outside the region", s.id)));
            }
        }
        Ok(())
    }

    fn simulator(&self) -> SmithSimulator {
        let coords: Vec<[f64; 2]> = self.sites.iter().map(|s| s.coords()).collect();
        let region = self.region.unwrap_or_else(|| {
            let mut pts = coords.clone();
            pts.extend([[0.0, 0.0], [40.0, 40.0]]);
            Region::bounding(&pts)
        });
        SmithSimulator::new(self.sigma, coords, region, self.enlargement)
    }
}

/// Precomputed storm geometry for repeated draws at fixed sites.
#[derive(Debug, Clone)]
pub struct SmithSimulator {
    sites: Vec<[f64; 2]>,
    window: Region,
    area: f64,
    // Σ⁻¹ entries
    p11: f64,
    p12: f64,
    p22: f64,
    f_max: f64,
}

impl SmithSimulator {
    pub fn new(sigma: CovMatrix, sites: Vec<[f64; 2]>, region: Region, enlargement: f64) -> Self {
        let det = sigma.det();
        let window = region.grow(enlargement * sigma.s11.max(sigma.s22).sqrt());
        Self {
            sites,
            area: window.area(),
            window,
            p11: sigma.s22 / det,
            p12: -sigma.s12 / det,
            p22: sigma.s11 / det,
            f_max: 1.0 / (2.0 * std::f64::consts::PI * det.sqrt()),
        }
    }

    /// One realization at the sites, on the unit-Fréchet scale.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut z = vec![0.0_f64; self.sites.len()];
        let mut gamma = 0.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            gamma += e;
            let u = self.area / gamma;
            let z_min = z.iter().copied().fold(f64::INFINITY, f64::min);
            if u * self.f_max < z_min {
                break;
            }
            let x = [
                rng.gen_range(self.window.lon_min..self.window.lon_max),
                rng.gen_range(self.window.lat_min..self.window.lat_max),
            ];
            for (zk, t) in z.iter_mut().zip(&self.sites) {
                let (d0, d1) = (x[0] - t[0], x[1] - t[1]);
                let q = self.p11 * d0 * d0 + 2.0 * self.p12 * d0 * d1 + self.p22 * d1 * d1;
                let v = u * self.f_max * (-0.5 * q).exp();
                if v > *zk {
                    *zk = v;
                }
            }
        }
        z
    }
}

/// One field at `sites` from a seeded generator.
pub fn simulate_smith_field(sigma: CovMatrix, sites: &[[f64; 2]], seed: u64) -> Result<Vec<f64>> {
    if !sigma.is_positive_definite() {
        return Err(Error::NotPositiveDefinite {
            s11: sigma.s11,
            s12: sigma.s12,
            s22: sigma.s22,
        });
    }
    let sim = SmithSimulator::new(sigma, sites.to_vec(), Region::bounding(sites), 4.0);
    Ok(sim.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Generator for replicate `replicate` of a configuration: the seed selects
/// the key and the replicate index the stream, so replicates are independent
/// of evaluation order.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Unit-Fréchet fields for `n` years, row-major.
pub fn simulate_fields(config: &SimConfig, replicate: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let sim = config.simulator();
    let mut rng = replicate_rng(config.seed, replicate);
    let mut out = Vec::with_capacity(config.n_years * config.sites.len());
    for _ in 0..config.n_years {
        out.extend(sim.draw(&mut rng));
    }
    Ok(out)
}

/// Panel of block maxima with the configured margins.
pub fn simulate_panel(config: &SimConfig, replicate: usize) -> Result<DataSet> {
    let z = simulate_fields(config, replicate)?;
    let k = config.sites.len();
    let params: Vec<GevParams> = config.sites.iter().map(|s| config.margins.params_at(s)).collect();
    let maxima = match config.margins {
        MarginSurface::Frechet => z,
        _ => z
            .iter()
            .enumerate()
            .map(|(idx, &v)| gev::from_frechet(v, &params[idx % k]))
            .collect(),
    };
    DataSet::new(config.sites.clone(), (1..=config.n_years as i64).collect(), maxima)
}

/// Moment estimator of the pairwise extremal coefficient from unit-Fréchet
/// series, `N / Σ 1/max(z_i, z_j)`, clamped to `[1, 2]`.
pub fn naive_theta(z_i: &[f64], z_j: &[f64]) -> Result<f64> {
    if z_i.len() != z_j.len() || z_i.is_empty() {
        return Err(Error::InvalidArgument("series must be non-empty and of equal length".into()));
    }
    let mut s = 0.0;
    for (&a, &b) in z_i.iter().zip(z_j) {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Fréchet-scale values must be positive (got {a}, {b})"
            )));
        }
        s += 1.0 / a.max(b);
    }
    Ok((z_i.len() as f64 / s).clamp(1.0, 2.0))
}
