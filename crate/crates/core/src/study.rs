//! Replication studies: repeated simulate-and-fit runs summarised as
//! parameter tables, extremal-coefficient accuracy and sample-size sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Site;
use crate::design::{Design, Margins, ModelSpec};
use crate::error::{Error, Result};
use crate::gev;
use crate::inference::{fit_likelihood, FitOptions, FitResult, SeKind};
use crate::likelihood::PairwiseLikelihood;
use crate::simulate::{naive_theta, simulate_panel, MarginSurface, Region, SimConfig};
use crate::smith::{self, CovMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteLayout {
    /// `K` sites uniform on the region, drawn once from the study seed.
    Random { random: usize },
    Explicit(Vec<Site>),
}

fn default_model() -> String {
    "margins = frechet".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sigma: CovMatrix,
    pub sites: SiteLayout,
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub margins: MarginSurface,
    /// Years per panel; several values give a sample-size sweep.
    pub n_years: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fitted model in the model-file syntax.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub fit: FitOptions,
}

impl StudyConfig {
    pub fn sites(&self) -> Vec<Site> {
        match &self.sites {
            SiteLayout::Explicit(s) => s.clone(),
            SiteLayout::Random { random } => self
                .region
                .unwrap_or(Region::square(0.0, 40.0))
                .random_sites(*random, self.seed ^ 0x5173_5173),
        }
    }

    fn sim_config(&self, sites: Vec<Site>, n_years: usize) -> SimConfig {
        SimConfig {
            sigma: self.sigma,
            sites,
            region: self.region,
            margins: self.margins.clone(),
            n_years,
            replicates: self.replicates,
            seed: self.seed,
            enlargement: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: Option<f64>,
    pub mean: f64,
    /// Mean Godambe standard error.
    pub mean_se: Option<f64>,
    /// Standard deviation across replicates; absent with fewer than two.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n_years: usize,
    pub n_used: usize,
    /// Replicates whose fit errored or did not converge.
    pub n_failed: usize,
    pub parameters: Vec<ParamSummary>,
    /// Normalised mean squared error of θ̂ over all pairs and replicates.
    pub nmse_composite: f64,
    pub nmse_naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub sites: Vec<Site>,
    pub samples: Vec<SampleSummary>,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub fit: FitResult,
    /// Per pair `(θ, θ̂_composite, θ̂_naive)`.
    pub thetas: Vec<(f64, f64, f64)>,
}

/// Simulates replicate `r` of `sim` and fits `model` to it.
pub fn run_replicate(sim: &SimConfig, model: &ModelSpec, fit: &FitOptions, r: usize) -> Result<ReplicateOutcome> {
    let data = simulate_panel(sim, r)?;
    let design = Design::build(model, data.sites())?;
    let fixed = design.resolve_fixed(&model.fixed)?;
    let lik = PairwiseLikelihood::new(&data, &design)?;
    let result = fit_likelihood(&lik, &fixed, model.sigma_init, fit)?;

    let params = lik.site_params(&result.psi_hat);
    let frechet: Vec<Vec<f64>> = (0..data.n_sites())
        .map(|k| {
            data.column(k)
                .iter()
                .map(|&y| if model.margins == Margins::Frechet { y } else { gev::to_frechet(y, &params[k]).unwrap_or(f64::NAN) })
                .collect()
        })
        .collect();
    let sigma_hat = result.sigma();
    let mut thetas = Vec::new();
    for i in 0..data.n_sites() {
        for j in i + 1..data.n_sites() {
            let (si, sj) = (&data.sites()[i], &data.sites()[j]);
            let h = [sj.lon - si.lon, sj.lat - si.lat];
            let truth = smith::extremal_coefficient(smith::mahalanobis_a(h, &sim.sigma)?);
            let fitted = smith::extremal_coefficient(smith::mahalanobis_a(h, &sigma_hat)?);
            let (zi, zj): (Vec<f64>, Vec<f64>) = frechet[i]
                .iter()
                .zip(&frechet[j])
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(a, b)| (*a, *b))
                .unzip();
            thetas.push((truth, fitted, naive_theta(&zi, &zj)?));
        }
    }
    Ok(ReplicateOutcome { fit: result, thetas })
}

fn truth_for(name: &str, sigma: &CovMatrix, margins: &MarginSurface) -> Option<f64> {
    match name {
        "s11" => return Some(sigma.s11),
        "s12" => return Some(sigma.s12),
        "s22" => return Some(sigma.s22),
        _ => {}
    }
    let (param, term) = name.split_once('.')?;
    let col = ["1", "lon", "lat", "alt"].iter().position(|t| *t == term)?;
    match margins {
        MarginSurface::Frechet => None,
        MarginSurface::Constant { loc, scale, shape } => {
            let v = match param {
                "loc" => *loc,
                "scale" => scale.ln(),
                "shape" => *shape,
                _ => return None,
            };
            Some(if col == 0 { v } else { 0.0 })
        }
        MarginSurface::Linear { loc, scale, shape } => match param {
            "loc" => Some(loc[col]),
            "scale" => Some(scale[col]),
            "shape" => Some(shape[col]),
            _ => None,
        },
    }
}

pub fn summarize(n_years: usize, outcomes: &[Result<ReplicateOutcome>], sim: &SimConfig) -> SampleSummary {
    let used: Vec<&ReplicateOutcome> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .filter(|o| o.fit.convergence.converged)
        .collect();
    let n = used.len();
    let names = used.first().map(|o| o.fit.names.clone()).unwrap_or_default();
    let estimates: Vec<Vec<f64>> = used.iter().map(|o| o.fit.estimates()).collect();
    let ses: Vec<Vec<Option<f64>>> = used.iter().map(|o| o.fit.standard_errors(SeKind::Godambe)).collect();
    let parameters = names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let xs: Vec<f64> = estimates.iter().map(|e| e[p]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (n > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
            let se: Vec<f64> = ses.iter().filter_map(|s| s[p]).collect();
            let mean_se = (!se.is_empty()).then(|| se.iter().sum::<f64>() / se.len() as f64);
            ParamSummary {
                name: name.clone(),
                truth: truth_for(name, &sim.sigma, &sim.margins),
                mean,
                mean_se,
                sd,
            }
        })
        .collect();
    let (mut sc, mut sn, mut m) = (0.0, 0.0, 0usize);
    for o in &used {
        for &(t, c, v) in &o.thetas {
            sc += ((c - t) / t).powi(2);
            sn += ((v - t) / t).powi(2);
            m += 1;
        }
    }
    SampleSummary {
        n_years,
        n_used: n,
        n_failed: outcomes.len() - n,
        parameters,
        nmse_composite: sc / m as f64,
        nmse_naive: sn / m as f64,
    }
}

/// Runs the study. Replicates run in parallel; results are reduced in
/// replicate order so the report does not depend on scheduling.
pub fn replication_study(config: &StudyConfig) -> Result<StudyReport> {
    if config.n_years.is_empty() || config.replicates == 0 {
        return Err(Error::InvalidArgument("a study needs at least one sample size and one replicate".into()));
    }
    let model = ModelSpec::parse(&config.model)?;
    let sites = config.sites();
    let mut samples = Vec::new();
    for &n in &config.n_years {
        let sim = config.sim_config(sites.clone(), n);
        sim.validate()?;
        let outcomes: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(&sim, &model, &config.fit, r))
            .collect();
        for (r, o) in outcomes.iter().enumerate() {
            match o {
                Err(e) => log::warn!("N={n} replicate {r}: {e}"),
                Ok(o) if !o.fit.convergence.converged => log::warn!("N={n} replicate {r}: fit did not converge"),
                _ => {}
            }
        }
        samples.push(summarize(n, &outcomes, &sim));
    }
    Ok(StudyReport { sites, samples })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// `n_years,parameter,truth,mean,mean_se,sd,n_used,n_failed`
pub fn write_estimates_csv(report: &StudyReport, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_years", "parameter", "truth", "mean", "mean_se", "sd", "n_used", "n_failed"])?;
    for s in &report.samples {
        for p in &s.parameters {
            w.write_record([
                s.n_years.to_string(),
                p.name.clone(),
                opt(p.truth),
                p.mean.to_string(),
                opt(p.mean_se),
                opt(p.sd),
                s.n_used.to_string(),
                s.n_failed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// `n_years,nmse_composite,nmse_naive,n_used`
pub fn write_extremal_csv(report: &StudyReport, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_years", "nmse_composite", "nmse_naive", "n_used"])?;
    for s in &report.samples {
        w.write_record([
            s.n_years.to_string(),
            s.nmse_composite.to_string(),
            s.nmse_naive.to_string(),
            s.n_used.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Writes `estimates.csv`, `extremal.csv` and `study.json` into `dir`.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map_err(|e| Error::io(&p, e))
    };
    write_estimates_csv(report, &mut create("estimates.csv")?)?;
    write_extremal_csv(report, &mut create("extremal.csv")?)?;
    let json = serde_json::to_string_pretty(report)?;
    let p = dir.join("study.json");
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}
