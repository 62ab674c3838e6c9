//! Station metadata and the years × sites panel of block maxima.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    #[serde(default)]
    pub alt: f64,
}

impl Site {
    pub fn new(id: impl Into<String>, lon: f64, lat: f64, alt: f64) -> Self {
        Self {
            id: id.into(),
            lon,
            lat,
            alt,
        }
    }

    #[inline]
    pub fn coords(&self) -> [f64; 2] {
        [self.lon, self.lat]
    }
}

/// Block maxima for `N` years at `K` sites. Missing entries are stored as NaN.
#[derive(Debug, Clone)]
pub struct DataSet {
    sites: Vec<Site>,
    years: Vec<i64>,
    // row-major, one row per year
    maxima: Vec<f64>,
}

// missing entries compare equal to each other
impl PartialEq for DataSet {
    fn eq(&self, other: &Self) -> bool {
        self.sites == other.sites
            && self.years == other.years
            && self.maxima.len() == other.maxima.len()
            && self
                .maxima
                .iter()
                .zip(&other.maxima)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl DataSet {
    pub fn new(sites: Vec<Site>, years: Vec<i64>, maxima: Vec<f64>) -> Result<Self> {
        let k = sites.len();
        if k < 2 {
            return Err(Error::Data(format!("need at least 2 sites (got {k})")));
        }
        if years.is_empty() {
            return Err(Error::Data("no years of data".into()));
        }
        if maxima.len() != years.len() * k {
            return Err(Error::Data(format!(
                "maxima has {} cells, expected {} years x {} sites",
                maxima.len(),
                years.len(),
                k
            )));
        }
        let mut seen = HashSet::new();
        for s in &sites {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate site id `{}`", s.id)));
            }
            if !(s.lon.is_finite() && s.lat.is_finite() && s.alt.is_finite()) {
                return Err(Error::Data(format!("site `{}` has non-finite coordinates", s.id)));
            }
        }
        let mut seen_years = HashSet::new();
        for y in &years {
            if !seen_years.insert(*y) {
                return Err(Error::Data(format!("duplicate year {y}")));
            }
        }
        if let Some(v) = maxima.iter().find(|v| v.is_infinite()) {
            return Err(Error::Data(format!("infinite maximum {v}")));
        }
        let ds = Self { sites, years, maxima };
        for (col, s) in ds.sites.iter().enumerate() {
            if (0..ds.n_years()).all(|n| ds.value(n, col).is_none()) {
                return Err(Error::Data(format!("site `{}` has no observations", s.id)));
            }
        }
        Ok(ds)
    }

    #[inline]
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    #[inline]
    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    #[inline]
    pub fn value(&self, year: usize, site: usize) -> Option<f64> {
        let v = self.maxima[year * self.sites.len() + site];
        (!v.is_nan()).then_some(v)
    }

    /// One year's row, NaN where missing.
    #[inline]
    pub fn row(&self, year: usize) -> &[f64] {
        let k = self.sites.len();
        &self.maxima[year * k..(year + 1) * k]
    }

    /// Non-missing values at one site.
    pub fn column(&self, site: usize) -> Vec<f64> {
        (0..self.n_years()).filter_map(|n| self.value(n, site)).collect()
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }

    /// Marks one cell as missing.
    pub fn set_missing(&mut self, year: usize, site: usize) {
        let k = self.sites.len();
        self.maxima[year * k + site] = f64::NAN;
    }

    /// Applies `f` to every non-missing value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            sites: self.sites.clone(),
            years: self.years.clone(),
            maxima: self.maxima.iter().map(|&v| if v.is_nan() { v } else { f(v) }).collect(),
        }
    }

    /// Reorders sites (and data columns) so that new site `k` is old site `order[k]`.
    pub fn permute_sites(&self, order: &[usize]) -> Result<Self> {
        let k = self.n_sites();
        let mut check = order.to_vec();
        check.sort_unstable();
        if check != (0..k).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("not a permutation of the sites".into()));
        }
        let sites = order.iter().map(|&o| self.sites[o].clone()).collect();
        let mut maxima = Vec::with_capacity(self.maxima.len());
        for n in 0..self.n_years() {
            maxima.extend(order.iter().map(|&o| self.maxima[n * k + o]));
        }
        Self::new(sites, self.years.clone(), maxima)
    }

    /// Stacks the years of `other` below these; years are renumbered consecutively.
    pub fn append_years(&self, other: &DataSet) -> Result<Self> {
        if self.sites != other.sites {
            return Err(Error::Data("cannot stack panels with different sites".into()));
        }
        let mut maxima = self.maxima.clone();
        maxima.extend_from_slice(&other.maxima);
        let n = self.n_years() + other.n_years();
        Self::new(self.sites.clone(), (1..=n as i64).collect(), maxima)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sites() -> Vec<Site> {
        vec![Site::new("A", 0.0, 0.0, 10.0), Site::new("B", 1.0, 2.0, 20.0)]
    }

    #[test]
    fn validates_shape_and_ids() {
        let ds = DataSet::new(two_sites(), vec![2000, 2001], vec![1.0, 2.0, 3.0, f64::NAN]).unwrap();
        assert_eq!(ds.n_sites(), 2);
        assert_eq!(ds.value(1, 1), None);
        assert_eq!(ds.column(1), vec![2.0]);
        assert!(DataSet::new(two_sites(), vec![2000], vec![1.0]).is_err());
        assert!(DataSet::new(two_sites(), vec![2000, 2000], vec![1.0; 4]).is_err());
        let dup = vec![Site::new("A", 0.0, 0.0, 0.0), Site::new("A", 1.0, 0.0, 0.0)];
        assert!(DataSet::new(dup, vec![1], vec![1.0, 1.0]).is_err());
        assert!(DataSet::new(two_sites(), vec![1], vec![1.0, f64::NAN]).is_err());
        assert!(DataSet::new(vec![Site::new("A", 0.0, 0.0, 0.0)], vec![1], vec![1.0]).is_err());
    }

    #[test]
    fn permutation_and_stacking() {
        let ds = DataSet::new(two_sites(), vec![1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ds.permute_sites(&[1, 0]).unwrap();
        assert_eq!(p.sites()[0].id, "B");
        assert_eq!(p.row(1), &[4.0, 3.0]);
        let s = ds.append_years(&ds).unwrap();
        assert_eq!(s.n_years(), 4);
        assert_eq!(s.row(3), ds.row(1));
        assert!(ds.permute_sites(&[0, 0]).is_err());
    }
}
