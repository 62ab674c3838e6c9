//! File formats: station and maxima CSVs, JSON fit reports and grid specs,
//! and grid CSV output.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataSet, Site};
use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::inference::{Convergence, FitResult, SeKind};
use crate::likelihood::JGrouping;
use crate::smith::CovMatrix;

pub const FORMAT_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn parse_number(cell: &str, file: &Path, row: usize, col: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| {
        Error::parse(
            format!("{} row {row} column `{col}`", file.display()),
            format!("`{cell}` is not a number"),
        )
    })
}

pub fn load_stations(path: &Path) -> Result<Vec<Site>> {
    let text = read_file(path)?;
    let mut rdr = csv_reader(&text);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ci), Some(cx), Some(cy)) = (col("id"), col("lon"), col("lat")) else {
        return Err(Error::parse(
            format!("{} header", path.display()),
            "expected columns id,lon,lat,alt",
        ));
    };
    let ca = col("alt");
    let mut sites = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let alt = match ca {
            Some(c) => parse_number(get(c), path, row, "alt")?,
            None => 0.0,
        };
        sites.push(Site::new(
            get(ci),
            parse_number(get(cx), path, row, "lon")?,
            parse_number(get(cy), path, row, "lat")?,
            alt,
        ));
    }
    Ok(sites)
}

/// Reads stations and maxima; maxima columns are matched to stations by id
/// and `NA` or empty cells are missing.
pub fn load_dataset(stations: &Path, maxima: &Path) -> Result<DataSet> {
    let sites = load_stations(stations)?;
    let index: HashMap<&str, usize> = sites.iter().enumerate().map(|(k, s)| (s.id.as_str(), k)).collect();
    let text = read_file(maxima)?;
    let mut rdr = csv_reader(&text);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("year") {
        return Err(Error::parse(format!("{} header", maxima.display()), "first column must be `year`"));
    }
    let mut target = Vec::with_capacity(header.len() - 1);
    for id in &header[1..] {
        let k = *index
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("maxima column `{id}` has no matching station")))?;
        if target.contains(&k) {
            return Err(Error::Data(format!("maxima column `{id}` appears twice")));
        }
        target.push(k);
    }
    if let Some(s) = sites.iter().enumerate().find(|(k, _)| !target.contains(k)) {
        return Err(Error::Data(format!("station `{}` has no maxima column", s.1.id)));
    }
    let k = sites.len();
    let mut years = Vec::new();
    let mut values = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != header.len() {
            return Err(Error::parse(
                format!("{} row {row}", maxima.display()),
                format!("expected {} cells, found {}", header.len(), rec.len()),
            ));
        }
        let year = rec[0].parse::<i64>().map_err(|_| {
            Error::parse(
                format!("{} row {row} column `year`", maxima.display()),
                format!("`{}` is not an integer year", &rec[0]),
            )
        })?;
        if years.contains(&year) {
            return Err(Error::Data(format!("duplicate year {year} at row {row}")));
        }
        years.push(year);
        let mut line = vec![f64::NAN; k];
        for (c, cell) in rec.iter().enumerate().skip(1) {
            if cell.is_empty() || cell == "NA" {
                continue;
            }
            line[target[c - 1]] = parse_number(cell, maxima, row, &header[c])?;
        }
        values.extend(line);
    }
    DataSet::new(sites, years, values)
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        v.to_string()
    }
}

pub fn write_stations(sites: &[Site], out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "lon", "lat", "alt"])?;
    for s in sites {
        w.write_record([s.id.clone(), s.lon.to_string(), s.lat.to_string(), s.alt.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<stations>", e))
}

pub fn write_maxima(data: &DataSet, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["year".to_string()];
    header.extend(data.sites().iter().map(|s| s.id.clone()));
    w.write_record(&header)?;
    for (n, year) in data.years().iter().enumerate() {
        let mut rec = vec![year.to_string()];
        rec.extend(data.row(n).iter().map(|v| fmt_value(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<maxima>", e))
}

/// Writes the two CSVs; values use shortest round-trip formatting.
pub fn write_dataset(data: &DataSet, stations: &Path, maxima: &Path) -> Result<()> {
    let mut f = std::fs::File::create(stations).map_err(|e| Error::io(stations, e))?;
    write_stations(data.sites(), &mut f)?;
    let mut f = std::fs::File::create(maxima).map_err(|e| Error::io(maxima, e))?;
    write_maxima(data, &mut f)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stations: Option<FileRef>,
    pub maxima: Option<FileRef>,
    pub model: Option<FileRef>,
    pub seed: Option<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new() -> Self {
        Self {
            stations: None,
            maxima: None,
            model: None,
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub loc: String,
    pub scale: String,
    pub shape: String,
    pub margins: crate::design::Margins,
    /// The model file contents as understood by the parser.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConvergence {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_max: Option<f64>,
    pub gradient: crate::likelihood::GradientMethod,
}

/// Matrices as row lists; non-finite entries become `null`.
type JsonMatrix = Vec<Vec<Option<f64>>>;

fn to_json_matrix(m: &DMatrix<f64>) -> JsonMatrix {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| Some(m[(r, c)]).filter(|v| v.is_finite())).collect())
        .collect()
}

fn from_json_matrix(m: &JsonMatrix) -> Result<DMatrix<f64>> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(Error::Data("report matrix is not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| m[r][c].unwrap_or(f64::NAN)))
}

/// State needed to resume inference from a report without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalState {
    pub psi: Vec<f64>,
    pub fixed: Vec<(usize, f64)>,
    pub hessian: JsonMatrix,
    pub j: JsonMatrix,
    pub to_original: JsonMatrix,
    pub j_grouping: JGrouping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format_version: u32,
    pub model: ModelSection,
    pub se_kind: SeKind,
    pub parameters: Vec<ParamRow>,
    pub sigma: CovMatrix,
    pub nll: f64,
    pub clic: Option<f64>,
    pub convergence: ReportConvergence,
    pub provenance: Provenance,
    pub internal: InternalState,
    /// Seconds since the Unix epoch; not part of the reproducible content.
    pub timestamp: Option<u64>,
}

impl FitReport {
    pub fn new(fit: &FitResult, model: &ModelSpec, se_kind: SeKind, j_grouping: JGrouping, provenance: Provenance) -> Self {
        let est = fit.estimates();
        let se = fit.standard_errors(se_kind);
        let parameters = fit
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| ParamRow {
                name: name.clone(),
                estimate: est[k],
                se: se[k],
                fixed: fit.fixed.iter().any(|f| f.0 == k),
            })
            .collect();
        let c = &fit.convergence;
        Self {
            format_version: FORMAT_VERSION,
            model: ModelSection {
                loc: model.loc.to_string(),
                scale: model.scale.to_string(),
                shape: model.shape.to_string(),
                margins: model.margins,
                text: model.to_text(),
            },
            se_kind,
            parameters,
            sigma: fit.sigma(),
            nll: fit.nll,
            clic: fit.clic,
            convergence: ReportConvergence {
                converged: c.converged,
                iterations: c.iterations,
                evaluations: c.evaluations,
                grad_max: Some(c.grad_max).filter(|v| v.is_finite()),
                gradient: c.gradient,
            },
            provenance,
            internal: InternalState {
                psi: fit.psi_hat.clone(),
                fixed: fit.fixed.clone(),
                hessian: to_json_matrix(&fit.hessian),
                j: to_json_matrix(&fit.j),
                to_original: to_json_matrix(&fit.to_original),
                j_grouping,
            },
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .ok()
                .map(|d| d.as_secs()),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::parse(&self.model.text)
    }

    /// Rebuilds the fit, recomputing the derived Godambe quantities.
    pub fn to_fit(&self) -> Result<FitResult> {
        let c = &self.convergence;
        let fit = FitResult {
            names: self.parameters.iter().map(|p| p.name.clone()).collect(),
            psi_hat: self.internal.psi.clone(),
            fixed: self.internal.fixed.clone(),
            nll: self.nll,
            hessian: from_json_matrix(&self.internal.hessian)?,
            j: DMatrix::zeros(0, 0),
            godambe: None,
            se: Vec::new(),
            clic: None,
            convergence: Convergence {
                converged: c.converged,
                iterations: c.iterations,
                evaluations: c.evaluations,
                grad_max: c.grad_max.unwrap_or(f64::NAN),
                gradient: c.gradient,
            },
            to_original: from_json_matrix(&self.internal.to_original)?,
        };
        if fit.hessian.nrows() != fit.psi_hat.len() || fit.to_original.nrows() != fit.psi_hat.len() {
            return Err(Error::Data("report matrices do not match the parameter vector".into()));
        }
        Ok(fit.with_j(from_json_matrix(&self.internal.j)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&read_file(path)?)?;
        if r.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported report format_version {}",
                path.display(),
                r.format_version
            )));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AltRaster {
    Constant(f64),
    /// `ny × nx` values, rows by latitude from `lat_min` upwards.
    Values(Vec<Vec<f64>>),
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub alt: Option<AltRaster>,
}

impl GridSpec {
    pub fn new(lon: (f64, f64), lat: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        let g = Self {
            format_version: FORMAT_VERSION,
            lon_min: lon.0,
            lon_max: lon.1,
            lat_min: lat.0,
            lat_max: lat.1,
            nx,
            ny,
            alt: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidArgument("grid needs nx, ny >= 2".into()));
        }
        if !(self.lon_min < self.lon_max && self.lat_min < self.lat_max) {
            return Err(Error::InvalidArgument("grid bounding box is empty".into()));
        }
        if let Some(AltRaster::Values(v)) = &self.alt {
            if v.len() != self.ny || v.iter().any(|r| r.len() != self.nx) {
                return Err(Error::InvalidArgument(format!("alt raster must be {} x {}", self.ny, self.nx)));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let g: Self = serde_json::from_str(&read_file(path)?)?;
        g.validate()?;
        Ok(g)
    }

    /// Grid nodes `(lon, lat, alt)`, latitude outer and longitude inner.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let step = |lo: f64, hi: f64, n: usize, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let alt = match &self.alt {
                    None => 0.0,
                    Some(AltRaster::Constant(a)) => *a,
                    Some(AltRaster::Values(v)) => v[iy][ix],
                };
                out.push((
                    step(self.lon_min, self.lon_max, self.nx, ix),
                    step(self.lat_min, self.lat_max, self.ny, iy),
                    alt,
                ));
            }
        }
        out
    }
}

/// Grid CSV: a `# format_version` comment, then `lon,lat,value` in
/// [`GridSpec::points`] order.
pub fn write_grid(values: &[f64], grid: &GridSpec, out: &mut impl Write) -> Result<()> {
    let pts = grid.points();
    if values.len() != pts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values for a grid of {} points",
            values.len(),
            pts.len()
        )));
    }
    writeln!(out, "# format_version: {FORMAT_VERSION}").map_err(|e| Error::io("<grid>", e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lon", "lat", "value"])?;
    for ((lon, lat, _), v) in pts.iter().zip(values) {
        w.write_record([lon.to_string(), lat.to_string(), fmt_value(*v)])?;
    }
    w.flush().map_err(|e| Error::io("<grid>", e))
}

pub fn emit_grid(values: &[f64], grid: &GridSpec, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_grid(values, grid, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_with_missing_and_reordered_columns() {
        let dir = tempfile::tempdir().unwrap();
        let st = write(dir.path(), "s.csv", "id,lon,lat,alt\nA,0,0,10\nB,1,2,20\n");
        let mx = write(dir.path(), "m.csv", "year,B,A\n1990,3.5,NA\n1991,2,1\n1992,4,5\n");
        let d = load_dataset(&st, &mx).unwrap();
        assert_eq!((d.n_sites(), d.n_years()), (2, 3));
        assert_eq!(d.value(0, 0), None);
        assert_eq!(d.value(0, 1), Some(3.5));
        assert_eq!(d.years(), &[1990, 1991, 1992]);
    }

    #[test]
    fn load_errors_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let st = write(dir.path(), "s.csv", "id,lon,lat,alt\nA,0,0,0\nB,1,2,0\n");
        let bad = write(dir.path(), "m1.csv", "year,A,S9\n1,1,2\n");
        assert!(load_dataset(&st, &bad).unwrap_err().to_string().contains("S9"));
        let dup = write(dir.path(), "m2.csv", "year,A,B\n1,1,2\n1,3,4\n");
        assert!(load_dataset(&st, &dup).unwrap_err().to_string().contains("duplicate year 1"));
        let junk = write(dir.path(), "m3.csv", "year,A,B\n1,1,2\n2,x,4\n");
        let msg = load_dataset(&st, &junk).unwrap_err().to_string();
        assert!(msg.contains("row 3") && msg.contains("`A`"), "{msg}");
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let sites = vec![Site::new("x", 0.1, 0.2, 3.0), Site::new("y", -1.0, 1.0 / 3.0, 0.0)];
        let data = DataSet::new(sites, vec![5, 6], vec![1.0 / 7.0, f64::NAN, 2.5e-300, 1e10]).unwrap();
        let (s, m) = (dir.path().join("s.csv"), dir.path().join("m.csv"));
        write_dataset(&data, &s, &m).unwrap();
        assert_eq!(load_dataset(&s, &m).unwrap(), data);
    }

    #[test]
    fn grid_order_and_format() {
        let g = GridSpec::new((0.0, 1.0), (10.0, 20.0), 2, 2).unwrap();
        let mut buf = Vec::new();
        write_grid(&[1.0, 2.0, 3.0, 4.0], &g, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# format_version: 1\nlon,lat,value\n0,10,1\n1,10,2\n0,20,3\n1,20,4\n"
        );
        assert!(GridSpec::new((0.0, 1.0), (0.0, 1.0), 1, 2).is_err());
        let j: GridSpec =
            serde_json::from_str(r#"{"lon_min":0,"lon_max":1,"lat_min":0,"lat_max":1,"nx":2,"ny":2,"alt":[[1,2],[3,4]]}"#).unwrap();
        j.validate().unwrap();
        assert_eq!(j.points()[2], (0.0, 1.0, 3.0));
    }
}
