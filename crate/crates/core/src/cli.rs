//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data or computation
//! errors and 3 when a fit did not converge (its report is still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{DataSet, Site};
use crate::design::{Design, Margins, ModelSpec};
use crate::error::{Error, Result};
use crate::gev::{self, GevParams};
use crate::inference::{self, FitOptions, SeKind};
use crate::io::{self, FileRef, FitReport, GridSpec, Provenance};
use crate::likelihood::{GradientMethod, JGrouping, PairwiseLikelihood};
use crate::simulate::{self, MarginSurface, SimConfig};
use crate::smith::{self, CovMatrix};
use crate::study::{self, StudyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "maxstab", version, about = "Smith max-stable process simulation and pairwise likelihood fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to station block maxima.
    Fit(FitArgs),
    /// Simulate panels from a configuration or a fitted report.
    Simulate(SimulateArgs),
    /// Extremal coefficients for site pairs or a grid of lag vectors.
    Extcoef(ExtcoefArgs),
    /// Composite likelihood ratio test of nested fits.
    Test(TestArgs),
    /// Marginal or conditional return-level grid.
    Predict(PredictArgs),
    /// Replication study.
    Study(StudyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SeArg {
    Godambe,
    Hessian,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GradArg {
    Analytic,
    Fd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupingArg {
    PerYear,
    PerPair,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    maxima: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "godambe")]
    se: SeArg,
    #[arg(long, value_enum, default_value = "analytic")]
    grad: GradArg,
    /// Grouping of score contributions when estimating J.
    #[arg(long, value_enum, default_value = "per-year")]
    j_grouping: GroupingArg,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation configuration (JSON).
    #[arg(long, required_unless_present = "fit", conflicts_with = "fit")]
    config: Option<PathBuf>,
    /// Simulate from a fit report instead, at its stations.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Years per panel; overrides the configuration.
    #[arg(long)]
    years: Option<usize>,
    #[arg(long)]
    out_prefix: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DataOverride {
    /// Stations file; defaults to the one recorded in the report.
    #[arg(long)]
    stations: Option<PathBuf>,
    /// Maxima file; defaults to the one recorded in the report.
    #[arg(long)]
    maxima: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtcoefArgs {
    #[arg(long)]
    fit: PathBuf,
    /// CSV with columns `i,j` (station ids) or `dx,dy` (lag vectors).
    #[arg(long, required_unless_present = "grid", conflicts_with = "grid")]
    pairs: Option<PathBuf>,
    /// Grid of lag vectors (JSON grid spec).
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataOverride,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    fit_full: PathBuf,
    #[arg(long)]
    fit_null: PathBuf,
    /// Comma-separated restricted parameters; inferred when omitted.
    #[arg(long, value_delimiter = ',')]
    restrict: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataOverride,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    /// Return period in years.
    #[arg(long = "T", default_value_t = 50.0)]
    period: f64,
    #[arg(long, requires = "condition_value")]
    condition_site: Option<String>,
    #[arg(long, requires = "condition_site")]
    condition_value: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Runs the command line and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a).map(|_| EXIT_OK),
        Command::Extcoef(a) => cmd_extcoef(a).map(|_| EXIT_OK),
        Command::Test(a) => cmd_test(a).map(|_| EXIT_OK),
        Command::Predict(a) => cmd_predict(a).map(|_| EXIT_OK),
        Command::Study(a) => cmd_study(a).map(|_| EXIT_OK),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn cmd_fit(a: FitArgs) -> Result<i32> {
    let data = io::load_dataset(&a.stations, &a.maxima)?;
    let text = std::fs::read_to_string(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model = ModelSpec::parse(&text)?;
    let grouping = match a.j_grouping {
        GroupingArg::PerYear => JGrouping::PerYear,
        GroupingArg::PerPair => JGrouping::PerPair,
    };
    let opts = FitOptions {
        max_iterations: a.max_iter,
        gradient: match a.grad {
            GradArg::Analytic => GradientMethod::Analytic,
            GradArg::Fd => GradientMethod::FiniteDifference,
        },
        j_grouping: grouping,
        ..FitOptions::default()
    };
    let fit = inference::fit(&data, &model, &opts)?;
    let se = match a.se {
        SeArg::Godambe => SeKind::Godambe,
        SeArg::Hessian => SeKind::Hessian,
    };
    let provenance = Provenance {
        stations: Some(FileRef::of(&a.stations)?),
        maxima: Some(FileRef::of(&a.maxima)?),
        model: Some(FileRef::of(&a.model)?),
        ..Provenance::new()
    };
    FitReport::new(&fit, &model, se, grouping, provenance).write(&a.out)?;
    if fit.convergence.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: optimizer did not converge (max gradient {:.3e}); report written to {}",
            fit.convergence.grad_max,
            a.out.display()
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// Coefficients of the fitted margins as a linear surface in `(1, lon, lat, alt)`.
fn fitted_surface(report: &FitReport) -> MarginSurface {
    if report.model.margins == Margins::Frechet {
        return MarginSurface::Frechet;
    }
    let mut c = [[0.0; 4]; 3];
    for p in &report.parameters {
        let Some((param, term)) = p.name.split_once('.') else {
            continue;
        };
        let row = ["loc", "scale", "shape"].iter().position(|x| *x == param);
        let col = ["1", "lon", "lat", "alt"].iter().position(|x| *x == term);
        if let (Some(r), Some(k)) = (row, col) {
            c[r][k] = p.estimate;
        }
    }
    MarginSurface::Linear {
        loc: c[0],
        scale: c[1],
        shape: c[2],
    }
}

fn report_stations(report: &FitReport, explicit: Option<&Path>) -> Result<Vec<Site>> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| report.provenance.stations.as_ref().map(|f| f.path.clone()))
        .ok_or_else(|| Error::Data("report records no stations file; pass --stations".into()))?;
    io::load_stations(&path)
}

fn report_dataset(report: &FitReport, over: &DataOverride) -> Result<DataSet> {
    let stations = over
        .stations
        .clone()
        .or_else(|| report.provenance.stations.as_ref().map(|f| f.path.clone()));
    let maxima = over
        .maxima
        .clone()
        .or_else(|| report.provenance.maxima.as_ref().map(|f| f.path.clone()));
    match (stations, maxima) {
        (Some(s), Some(m)) => io::load_dataset(&s, &m),
        _ => Err(Error::Data("report records no data files; pass --stations and --maxima".into())),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.fit) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SimConfig>(&text)?
        }
        (None, Some(path)) => {
            let report = FitReport::read(path)?;
            let sites = report_stations(&report, None)?;
            let n = a
                .years
                .ok_or_else(|| Error::InvalidArgument("--years is required with --fit".into()))?;
            let mut c = SimConfig::new(report.sigma, sites, n, 0);
            c.margins = fitted_surface(&report);
            c
        }
        (None, None) => unreachable!("clap requires one of --config, --fit"),
    };
    if let Some(n) = a.years {
        cfg.n_years = n;
    }
    if let Some(r) = a.reps {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    for r in 0..cfg.replicates {
        let data = simulate::simulate_panel(&cfg, r)?;
        let stations = PathBuf::from(format!("{}{r:04}_stations.csv", a.out_prefix));
        let maxima = PathBuf::from(format!("{}{r:04}_maxima.csv", a.out_prefix));
        io::write_dataset(&data, &stations, &maxima)?;
    }
    Ok(())
}

fn to_frechet_columns(data: &DataSet, params: &[GevParams]) -> Vec<Vec<f64>> {
    (0..data.n_sites())
        .map(|k| {
            data.column(k)
                .iter()
                .map(|&y| gev::to_frechet(y, &params[k]).unwrap_or(f64::NAN))
                .collect()
        })
        .collect()
}

fn theta_of(h: [f64; 2], sigma: &CovMatrix) -> f64 {
    smith::extremal_coefficient(smith::mahalanobis_unchecked(h, sigma))
}

fn cmd_extcoef(a: ExtcoefArgs) -> Result<()> {
    let report = FitReport::read(&a.fit)?;
    let sigma = report.sigma;
    if let Some(grid) = &a.grid {
        let g = GridSpec::read(grid)?;
        let values: Vec<f64> = g.points().iter().map(|p| theta_of([p.0, p.1], &sigma)).collect();
        return io::emit_grid(&values, &g, &a.out);
    }
    let pairs_path = a.pairs.as_ref().expect("clap requires --pairs or --grid");
    let text = std::fs::read_to_string(pairs_path).map_err(|e| Error::io(pairs_path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Error::Data(e.to_string()))?;
    if header == ["dx", "dy"] {
        w.write_record(["dx", "dy", "theta"])?;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| {
                rec[c].parse::<f64>().map_err(|_| {
                    Error::parse(format!("{} row {}", pairs_path.display(), r + 2), format!("`{}` is not a number", &rec[c]))
                })
            };
            let h = [num(0)?, num(1)?];
            w.write_record([h[0].to_string(), h[1].to_string(), theta_of(h, &sigma).to_string()])?;
        }
    } else if header == ["i", "j"] {
        // empirical estimates need the data on the fitted Fréchet scale
        let data = report_dataset(&report, &a.data).ok();
        let sites = match &data {
            Some(d) => d.sites().to_vec(),
            None => report_stations(&report, a.data.stations.as_deref())?,
        };
        let frechet = match &data {
            Some(d) => {
                let model = report.model_spec()?;
                let design = Design::build(&model, d.sites())?;
                let lik = PairwiseLikelihood::new(d, &design)?;
                Some(to_frechet_columns(d, &lik.site_params(&report.internal.psi)))
            }
            None => None,
        };
        let find = |id: &str| {
            sites
                .iter()
                .position(|s| s.id == id)
                .ok_or_else(|| Error::Data(format!("unknown station `{id}` in pairs file")))
        };
        w.write_record(["i", "j", "dx", "dy", "theta", "theta_naive"])?;
        for rec in rdr.records() {
            let rec = rec?;
            let (i, j) = (find(&rec[0])?, find(&rec[1])?);
            let h = [sites[j].lon - sites[i].lon, sites[j].lat - sites[i].lat];
            let naive = match &frechet {
                Some(f) => {
                    let (zi, zj): (Vec<f64>, Vec<f64>) = f[i]
                        .iter()
                        .zip(&f[j])
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|(x, y)| (*x, *y))
                        .unzip();
                    simulate::naive_theta(&zi, &zj).map(|t| t.to_string()).unwrap_or_default()
                }
                None => String::new(),
            };
            w.write_record([
                rec[0].to_string(),
                rec[1].to_string(),
                h[0].to_string(),
                h[1].to_string(),
                theta_of(h, &sigma).to_string(),
                naive,
            ])?;
        }
    } else {
        return Err(Error::parse(
            format!("{} header", pairs_path.display()),
            "expected columns `i,j` or `dx,dy`",
        ));
    }
    w.flush().map_err(|e| Error::io(&a.out, e))
}

#[derive(Serialize)]
struct TestOutput {
    format_version: u32,
    #[serde(flatten)]
    result: inference::ClrtResult,
    nll_full: f64,
    nll_null: f64,
}

fn cmd_test(a: TestArgs) -> Result<()> {
    let full_report = FitReport::read(&a.fit_full)?;
    let null_report = FitReport::read(&a.fit_null)?;
    let data = report_dataset(&full_report, &a.data)?;
    let full_model = full_report.model_spec()?;
    let design = Design::build(&full_model, data.sites())?;
    let lik = PairwiseLikelihood::new(&data, &design)?;
    let full = full_report.to_fit()?;
    let null_model = null_report.model_spec()?.nested_in(&full_model)?;
    let null = if null_report.parameters.len() == full.names.len() {
        null_report.to_fit()?
    } else {
        // a smaller formula: refit inside the full parameterisation
        let fixed = design.resolve_fixed(&null_model.fixed)?;
        let opts = FitOptions {
            j_grouping: full_report.internal.j_grouping,
            ..FitOptions::default()
        };
        let f = inference::fit_likelihood(&lik, &fixed, null_model.sigma_init, &opts)?;
        if !f.convergence.converged {
            log::warn!("refitted null model did not converge");
        }
        f
    };
    let restricted: Vec<usize> = match &a.restrict {
        Some(names) => names
            .iter()
            .map(|n| {
                full.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{n}` in --restrict")))
            })
            .collect::<Result<_>>()?,
        None => null
            .fixed
            .iter()
            .map(|f| f.0)
            .filter(|k| !full.fixed.iter().any(|g| g.0 == *k))
            .collect(),
    };
    let result = inference::clrt(&lik, &full, &null, &restricted)?;
    let out = TestOutput {
        format_version: io::FORMAT_VERSION,
        nll_full: full.nll,
        nll_null: null.nll,
        result,
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))
}

fn params_at(surface: &MarginSurface, lon: f64, lat: f64, alt: f64) -> GevParams {
    surface.params_at(&Site::new("", lon, lat, alt))
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let report = FitReport::read(&a.fit)?;
    let grid = GridSpec::read(&a.grid)?;
    let surface = fitted_surface(&report);
    let sigma = report.sigma;
    let condition = match (&a.condition_site, a.condition_value) {
        (Some(id), Some(v)) => {
            let sites = report_stations(&report, a.stations.as_deref())?;
            let s = sites
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::Data(format!("unknown station `{id}`")))?;
            let p = params_at(&surface, s.lon, s.lat, s.alt);
            Some((s.coords(), gev::to_frechet(v, &p)?))
        }
        _ => None,
    };
    let values = grid
        .points()
        .iter()
        .map(|&(lon, lat, alt)| {
            let p = params_at(&surface, lon, lat, alt);
            match condition {
                None => gev::return_level(&p, a.period),
                Some((x0, z0)) => {
                    let h = [lon - x0[0], lat - x0[1]];
                    let dist = smith::mahalanobis_unchecked(h, &sigma);
                    if dist < smith::A_DEPENDENT {
                        // the conditioning site itself
                        Ok(gev::from_frechet(z0, &p))
                    } else {
                        smith::conditional_return_level(z0, a.period, dist, &p)
                    }
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    io::emit_grid(&values, &grid, &a.out)
}

fn cmd_study(a: StudyArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let cfg: StudyConfig = serde_json::from_str(&text)?;
    let report = study::replication_study(&cfg)?;
    study::write_study(&report, &a.out_dir)
}
