//! Model specification and regression design matrices for the GEV parameters.
//!
//! Model files hold one assignment per line:
//!
//! ```text
//! loc = 1 + lat + alt
//! scale = 1 + lat
//! shape = 1
//! sigma.init = 200, 150, 300
//! fix s11 = 200
//! ```
//!
//! `margins = frechet` declares the data to be on the unit-Fréchet scale
//! already, leaving only the dependence parameters to estimate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Site;
use crate::error::{Error, Result};
use crate::smith::CovMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariate {
    Lon,
    Lat,
    Alt,
}

impl Covariate {
    pub fn value(&self, site: &Site) -> f64 {
        match self {
            Covariate::Lon => site.lon,
            Covariate::Lat => site.lat,
            Covariate::Alt => site.alt,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Covariate::Lon => "lon",
            Covariate::Lat => "lat",
            Covariate::Alt => "alt",
        }
    }
}

impl FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lon" => Ok(Covariate::Lon),
            "lat" => Ok(Covariate::Lat),
            "alt" => Ok(Covariate::Alt),
            _ => Err(Error::UnknownCovariate(s.trim().to_string())),
        }
    }
}

/// Linear predictor `1 + x_1 + ...`; the intercept is always present.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Formula {
    pub covariates: Vec<Covariate>,
}

impl Formula {
    pub fn intercept() -> Self {
        Self::default()
    }

    pub fn new(covariates: Vec<Covariate>) -> Self {
        Self { covariates }
    }

    pub fn n_coef(&self) -> usize {
        1 + self.covariates.len()
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('~');
        let mut covariates = Vec::new();
        for term in body.split('+') {
            let term = term.trim();
            match term {
                "" => return Err(Error::parse("formula", format!("empty term in `{s}`"))),
                "1" => {}
                _ => covariates.push(term.parse()?),
            }
        }
        Ok(Self { covariates })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1")?;
        for c in &self.covariates {
            write!(f, " + {}", c.name())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Margins {
    /// GEV margins with regression-linked parameters.
    #[default]
    Gev,
    /// Data already on the unit-Fréchet scale.
    Frechet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    pub loc: Formula,
    pub scale: Formula,
    pub shape: Formula,
    pub margins: Margins,
    pub sigma_init: Option<CovMatrix>,
    /// Parameters held fixed, by name (see [`Design::param_names`]).
    pub fixed: Vec<(String, f64)>,
}

impl ModelSpec {
    pub fn frechet() -> Self {
        Self {
            margins: Margins::Frechet,
            ..Self::default()
        }
    }

    pub fn with_fixed(mut self, name: &str, value: f64) -> Self {
        self.fixed.push((name.to_string(), value));
        self
    }

    /// Parses the line-oriented model file format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("line {}", lineno + 1);
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&loc, format!("expected `name = value`, got `{line}`")))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            if let Some(name) = lhs.strip_prefix("fix ") {
                let value: f64 = rhs
                    .parse()
                    .map_err(|_| Error::parse(&loc, format!("bad number `{rhs}`")))?;
                spec.fixed.push((name.trim().to_string(), value));
                continue;
            }
            match lhs {
                "loc" => spec.loc = rhs.parse().map_err(|e| located(e, &loc))?,
                "scale" => spec.scale = rhs.parse().map_err(|e| located(e, &loc))?,
                "shape" => spec.shape = rhs.parse().map_err(|e| located(e, &loc))?,
                "margins" => {
                    spec.margins = match rhs.to_ascii_lowercase().as_str() {
                        "gev" => Margins::Gev,
                        "frechet" => Margins::Frechet,
                        _ => return Err(Error::parse(&loc, format!("unknown margins `{rhs}`"))),
                    }
                }
                "sigma.init" => {
                    let v: Vec<f64> = rhs
                        .split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::parse(&loc, format!("bad sigma.init `{rhs}`")))?;
                    if v.len() != 3 {
                        return Err(Error::parse(&loc, "sigma.init needs s11, s12, s22"));
                    }
                    spec.sigma_init = Some(CovMatrix::new(v[0], v[1], v[2])?);
                }
                _ => return Err(Error::parse(&loc, format!("unknown key `{lhs}`"))),
            }
        }
        Ok(spec)
    }

    /// Re-expresses `self` as `full` with the covariates it lacks fixed at 0,
    /// so that both share one parameter vector.
    pub fn nested_in(&self, full: &ModelSpec) -> Result<ModelSpec> {
        if self.margins != full.margins {
            return Err(Error::NotNested("models differ in their margins".into()));
        }
        let mut out = full.clone();
        out.fixed = self.fixed.clone();
        if self.margins == Margins::Gev {
            for (param, small, big) in [("loc", &self.loc, &full.loc), ("scale", &self.scale, &full.scale), ("shape", &self.shape, &full.shape)] {
                if let Some(c) = small.covariates.iter().find(|c| !big.covariates.contains(c)) {
                    return Err(Error::NotNested(format!("`{param}.{}` is not in the full model", c.name())));
                }
                for c in big.covariates.iter().filter(|c| !small.covariates.contains(c)) {
                    let name = format!("{param}.{}", c.name());
                    if !out.fixed.iter().any(|f| f.0 == name) {
                        out.fixed.push((name, 0.0));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`ModelSpec::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self.margins {
            Margins::Frechet => out.push_str("margins = frechet\n"),
            Margins::Gev => {
                out.push_str(&format!("loc = {}\nscale = {}\nshape = {}\n", self.loc, self.scale, self.shape));
            }
        }
        if let Some(s) = &self.sigma_init {
            out.push_str(&format!("sigma.init = {}, {}, {}\n", s.s11, s.s12, s.s22));
        }
        for (name, v) in &self.fixed {
            out.push_str(&format!("fix {name} = {v}\n"));
        }
        out
    }
}

fn located(e: Error, loc: &str) -> Error {
    match e {
        Error::Parse { message, .. } => Error::parse(loc, message),
        other => other,
    }
}

/// `K × p` design for one GEV parameter. Covariate columns are centred and
/// scaled by their site mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<String>,
    n_rows: usize,
    x: Vec<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl DesignMatrix {
    /// Builds a standardized design and checks its column rank.
    pub fn build(param: &str, formula: &Formula, sites: &[Site]) -> Result<Self> {
        let k = sites.len();
        let p = formula.n_coef();
        let mut columns = vec![format!("{param}.1")];
        let mut center = vec![0.0];
        let mut scale = vec![1.0];
        let mut x = vec![0.0; k * p];
        for r in 0..k {
            x[r * p] = 1.0;
        }
        for (c, cov) in formula.covariates.iter().enumerate() {
            let vals: Vec<f64> = sites.iter().map(|s| cov.value(s)).collect();
            let m = vals.iter().sum::<f64>() / k as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for (r, v) in vals.iter().enumerate() {
                x[r * p + c + 1] = (v - m) / sd;
            }
            columns.push(format!("{param}.{}", cov.name()));
            center.push(m);
            scale.push(sd);
        }
        let d = Self {
            columns,
            n_rows: k,
            x,
            center,
            scale,
        };
        d.check_rank(param)?;
        Ok(d)
    }

    /// Wraps a raw matrix without standardization or rank checks.
    pub fn from_raw(columns: Vec<String>, n_rows: usize, x: Vec<f64>) -> Result<Self> {
        let p = columns.len();
        if p == 0 || x.len() != n_rows * p {
            return Err(Error::InvalidArgument("design matrix dimensions do not match".into()));
        }
        Ok(Self {
            columns,
            n_rows,
            x,
            center: vec![0.0; p],
            scale: vec![1.0; p],
        })
    }

    fn check_rank(&self, param: &str) -> Result<()> {
        let p = self.ncols();
        if self.n_rows < p {
            return Err(Error::RankDeficient(format!(
                "{param} ({} coefficients, {} sites)",
                p, self.n_rows
            )));
        }
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(Error::RankDeficient(format!("{param} has non-finite covariates")));
        }
        let m = DMatrix::from_row_slice(self.n_rows, p, &self.x);
        let sv = m.singular_values();
        let max = sv.max();
        if !(sv.min() > 1e-8 * max) {
            return Err(Error::RankDeficient(param.to_string()));
        }
        Ok(())
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn nrows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        let p = self.ncols();
        &self.x[k * p..(k + 1) * p]
    }

    pub fn predictor(&self, k: usize, beta: &[f64]) -> f64 {
        self.row(k).iter().zip(beta).map(|(x, b)| x * b).sum()
    }

    /// `T` with `b_original = T β_standardized`.
    pub fn to_original_matrix(&self) -> DMatrix<f64> {
        let p = self.ncols();
        let mut t = DMatrix::identity(p, p);
        for c in 1..p {
            t[(0, c)] = -self.center[c] / self.scale[c];
            t[(c, c)] = 1.0 / self.scale[c];
        }
        t
    }

    pub fn to_original(&self, beta: &[f64]) -> Vec<f64> {
        let t = self.to_original_matrix();
        (t * DVector::from_column_slice(beta)).iter().copied().collect()
    }

    pub fn from_original(&self, b: &[f64]) -> Vec<f64> {
        let mut beta = b.to_vec();
        for c in 1..self.ncols() {
            beta[c] = b[c] * self.scale[c];
            beta[0] += b[c] * self.center[c];
        }
        beta
    }

    /// Standardized scale of coefficient `c`, i.e. `β_c = b_c · scale`.
    pub(crate) fn column_scale(&self, c: usize) -> f64 {
        self.scale[c]
    }
}

/// Regression designs for the three GEV parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginDesign {
    pub loc: DesignMatrix,
    pub scale: DesignMatrix,
    pub shape: DesignMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Location,
    Scale,
    Shape,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Location, Block::Scale, Block::Shape];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

impl MarginDesign {
    pub fn block(&self, b: Block) -> &DesignMatrix {
        match b {
            Block::Location => &self.loc,
            Block::Scale => &self.scale,
            Block::Shape => &self.shape,
        }
    }
}

/// Full model layout: `ψ = (s11, s12, s22, β_loc, β_scale, β_shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub margins: Option<MarginDesign>,
}

impl Design {
    pub fn build(model: &ModelSpec, sites: &[Site]) -> Result<Self> {
        let margins = match model.margins {
            Margins::Frechet => None,
            Margins::Gev => Some(MarginDesign {
                loc: DesignMatrix::build("loc", &model.loc, sites)?,
                scale: DesignMatrix::build("scale", &model.scale, sites)?,
                shape: DesignMatrix::build("shape", &model.shape, sites)?,
            }),
        };
        Ok(Self { margins })
    }

    pub fn frechet() -> Self {
        Self { margins: None }
    }

    pub fn dim(&self) -> usize {
        3 + self
            .margins
            .as_ref()
            .map_or(0, |m| m.loc.ncols() + m.scale.ncols() + m.shape.ncols())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["s11", "s12", "s22"].iter().map(|s| s.to_string()).collect();
        if let Some(m) = &self.margins {
            for b in Block::ALL {
                names.extend(m.block(b).columns().iter().cloned());
            }
        }
        names
    }

    /// Index range of a regression block within ψ.
    pub fn block_range(&self, b: Block) -> std::ops::Range<usize> {
        let Some(m) = &self.margins else {
            return 3..3;
        };
        let mut start = 3;
        for other in Block::ALL {
            let len = m.block(other).ncols();
            if other == b {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }

    /// Block-diagonal map from internal (standardized) ψ to reported coefficients.
    pub fn to_original_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut t = DMatrix::identity(d, d);
        if let Some(m) = &self.margins {
            for b in Block::ALL {
                let r = self.block_range(b);
                t.view_mut((r.start, r.start), (r.len(), r.len()))
                    .copy_from(&m.block(b).to_original_matrix());
            }
        }
        t
    }

    pub fn to_original(&self, psi: &[f64]) -> Vec<f64> {
        let t = self.to_original_matrix();
        (t * DVector::from_column_slice(psi)).iter().copied().collect()
    }

    pub fn from_original(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = psi.to_vec();
        if let Some(m) = &self.margins {
            for b in Block::ALL {
                let r = self.block_range(b);
                let v = m.block(b).from_original(&psi[r.clone()]);
                out[r].copy_from_slice(&v);
            }
        }
        out
    }

    /// Resolves `fix` entries to internal indices and values.
    pub fn resolve_fixed(&self, fixed: &[(String, f64)]) -> Result<Vec<(usize, f64)>> {
        let names = self.param_names();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (name, value) in fixed {
            let idx = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}` in fix")))?;
            let internal = match &self.margins {
                Some(m) if idx >= 3 => {
                    let b = Block::ALL
                        .into_iter()
                        .find(|&b| self.block_range(b).contains(&idx))
                        .unwrap();
                    let r = self.block_range(b);
                    let c = idx - r.start;
                    if c == 0 && r.len() > 1 {
                        return Err(Error::InvalidArgument(format!(
                            "`{name}` can only be fixed when its formula is intercept-only"
                        )));
                    }
                    value * m.block(b).column_scale(c)
                }
                _ => *value,
            };
            if out.iter().any(|(i, _)| *i == idx) {
                return Err(Error::InvalidArgument(format!("`{name}` fixed twice")));
            }
            out.push((idx, internal));
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nesting_fixes_missing_covariates() {
        let full = ModelSpec::parse("loc = 1 + lat\nscale = 1 + alt\nshape = 1").unwrap();
        let small = ModelSpec::parse("loc = 1\nscale = 1 + alt\nshape = 1\nfix s12 = 0").unwrap();
        let n = small.nested_in(&full).unwrap();
        assert_eq!(n.loc, full.loc);
        assert_eq!(n.fixed, vec![("s12".to_string(), 0.0), ("loc.lat".to_string(), 0.0)]);
        assert!(full.nested_in(&small).is_err());
        assert!(ModelSpec::frechet().nested_in(&full).is_err());
    }

    fn sites() -> Vec<Site> {
        vec![
            Site::new("a", 0.0, 40.0, 100.0),
            Site::new("b", 1.0, 41.0, 300.0),
            Site::new("c", 2.0, 43.5, 150.0),
            Site::new("d", 3.0, 42.0, 900.0),
        ]
    }

    #[test]
    fn parses_model_file() {
        let text = "# model\nloc = 1 + lat + alt\nscale = 1 + lat\nshape = 1\nsigma.init = 200, 150, 300\nfix shape.1 = 0.1\n";
        let m = ModelSpec::parse(text).unwrap();
        assert_eq!(m.loc.covariates, vec![Covariate::Lat, Covariate::Alt]);
        assert_eq!(m.scale.n_coef(), 2);
        assert_eq!(m.sigma_init.unwrap().s22, 300.0);
        assert_eq!(m.fixed, vec![("shape.1".to_string(), 0.1)]);
        assert_eq!(ModelSpec::parse(&m.to_text()).unwrap(), m);
        assert!(matches!(ModelSpec::parse("loc = 1 + depth"), Err(Error::UnknownCovariate(_))));
        assert!(ModelSpec::parse("loc 1").is_err());
        assert!(ModelSpec::parse("sigma.init = 1, 2, 1").is_err());
        assert_eq!(ModelSpec::parse("margins = frechet").unwrap().margins, Margins::Frechet);
    }

    #[test]
    fn design_shapes_and_rank() {
        let s = sites();
        let d = DesignMatrix::build("shape", &Formula::intercept(), &s).unwrap();
        assert_eq!(d.ncols(), 1);
        assert!((0..4).all(|k| d.row(k) == [1.0]));
        let f: Formula = "1 + lat + alt".parse().unwrap();
        let d = DesignMatrix::build("loc", &f, &s).unwrap();
        assert_eq!((d.nrows(), d.ncols()), (4, 3));
        let col_mean: f64 = (0..4).map(|k| d.row(k)[1]).sum::<f64>() / 4.0;
        assert!(col_mean.abs() < 1e-12);
        let dup: Formula = "1 + lat + lat".parse().unwrap();
        assert!(matches!(DesignMatrix::build("loc", &dup, &s), Err(Error::RankDeficient(_))));
        let flat = vec![Site::new("a", 0.0, 1.0, 5.0), Site::new("b", 1.0, 2.0, 5.0)];
        assert!(DesignMatrix::build("loc", &"1 + alt".parse().unwrap(), &flat).is_err());
    }

    #[test]
    fn original_scale_round_trip() {
        let s = sites();
        let f: Formula = "1 + lat + alt".parse().unwrap();
        let d = DesignMatrix::build("loc", &f, &s).unwrap();
        let beta = [2.0, 0.5, -0.3];
        let b = d.to_original(&beta);
        for (k, site) in s.iter().enumerate() {
            let direct = b[0] + b[1] * site.lat + b[2] * site.alt;
            assert!((direct - d.predictor(k, &beta)).abs() < 1e-12);
        }
        let back = d.from_original(&b);
        for (x, y) in back.iter().zip(&beta) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_and_fixes() {
        let m = ModelSpec::parse("loc = 1 + lat\nscale = 1\nshape = 1").unwrap();
        let d = Design::build(&m, &sites()).unwrap();
        assert_eq!(d.param_names(), vec!["s11", "s12", "s22", "loc.1", "loc.lat", "scale.1", "shape.1"]);
        assert_eq!(d.block_range(Block::Scale), 5..6);
        let fixed = d.resolve_fixed(&[("s11".into(), 200.0), ("shape.1".into(), 0.1)]).unwrap();
        assert_eq!(fixed, vec![(0, 200.0), (6, 0.1)]);
        assert!(d.resolve_fixed(&[("loc.1".into(), 1.0)]).is_err());
        assert!(d.resolve_fixed(&[("nope".into(), 1.0)]).is_err());
        assert_eq!(Design::frechet().param_names(), vec!["s11", "s12", "s22"]);
    }
}
