use std::path::{Path, PathBuf};

use maxstab::cli::{run, EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE};
use maxstab::io::FitReport;
use serde_json::Value;

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["maxstab"];
    v.extend_from_slice(args);
    run(v)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    p(dir, name)
}

const STATIONS: &str = r#"[
 {"id":"A","lon":2,"lat":3,"alt":100},{"id":"B","lon":10,"lat":30,"alt":400},
 {"id":"C","lon":25,"lat":8,"alt":250},{"id":"D","lon":35,"lat":35,"alt":50},
 {"id":"E","lon":18,"lat":20,"alt":700},{"id":"F","lon":5,"lat":38,"alt":300},
 {"id":"G","lon":30,"lat":18,"alt":150},{"id":"H","lon":14,"lat":11,"alt":500}]"#;

fn sim_config(dir: &Path, sigma: (f64, f64, f64), years: usize, margins: &str) -> String {
    let text = format!(
        r#"{{"sigma":{{"s11":{},"s12":{},"s22":{}}},"sites":{STATIONS},"margins":{margins},"n_years":{years},"seed":5}}"#,
        sigma.0, sigma.1, sigma.2
    );
    write(dir, "sim.json", &text)
}

const GEV: &str = r#"{"kind":"constant","loc":10,"scale":2,"shape":0.1}"#;

fn simulate(dir: &Path, sigma: (f64, f64, f64), years: usize) -> (String, String) {
    let cfg = sim_config(dir, sigma, years, GEV);
    assert_eq!(cli(&["simulate", "--config", &cfg, "--out-prefix", &p(dir, "p_"), "--reps", "1"]), EXIT_OK);
    (p(dir, "p_0000_stations.csv"), p(dir, "p_0000_maxima.csv"))
}

fn strip_timestamp(path: &str) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn usage_and_help_exit_codes() {
    assert_eq!(cli(&["--help"]), EXIT_OK);
    assert_eq!(cli(&["fit", "--help"]), EXIT_OK);
    assert_eq!(cli(&["fit", "--bogus"]), EXIT_USAGE);
    assert_eq!(cli(&[]), EXIT_USAGE);
    assert_eq!(cli(&["fit", "--stations", "a", "--maxima", "b", "--model", "c", "--out", "d", "--se", "sandwich"]), EXIT_USAGE);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let st = write(d, "s.csv", "id,lon,lat,alt\nA,0,0,0\nB,5,5,0\n");
    let mx = write(d, "m.csv", "year,A,S9\n1,1,2\n");
    let model = write(d, "model.txt", "margins = frechet\n");
    let out = p(d, "r.json");
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &model, "--out", &out]), EXIT_DATA);
    assert!(!Path::new(&out).exists());
    let missing = p(d, "nope.csv");
    assert_eq!(cli(&["fit", "--stations", &missing, "--maxima", &mx, "--model", &model, "--out", &out]), EXIT_DATA);
    let bad_model = write(d, "bad.txt", "loc = 1 + depth\n");
    let mx = write(d, "m2.csv", "year,A,B\n1,1,2\n2,3,1\n");
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &bad_model, "--out", &out]), EXIT_DATA);
}

#[test]
fn non_convergence_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (st, mx) = simulate(d, (200.0, 150.0, 300.0), 40);
    let model = write(d, "model.txt", "loc = 1\nscale = 1\nshape = 1\n");
    let out = p(d, "r.json");
    let code = cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &model, "--out", &out, "--max-iter", "0"]);
    assert_eq!(code, EXIT_NOT_CONVERGED);
    let r = FitReport::read(Path::new(&out)).unwrap();
    assert!(!r.convergence.converged);
}

#[test]
fn fit_is_deterministic_and_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (st, mx) = simulate(d, (200.0, 150.0, 300.0), 60);
    let model = write(d, "model.txt", "loc = 1 + lat\nscale = 1\nshape = 1\n");
    let (a, b) = (p(d, "a.json"), p(d, "b.json"));
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &model, "--out", &a]), EXIT_OK);
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &model, "--out", &b]), EXIT_OK);
    assert_eq!(strip_timestamp(&a), strip_timestamp(&b));

    let r = FitReport::read(Path::new(&a)).unwrap();
    let back: FitReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
    let fit = r.to_fit().unwrap();
    assert_eq!(fit.psi_hat, r.internal.psi);
    assert_eq!(fit.clic, r.clic);
    let names: Vec<&str> = r.parameters.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, ["s11", "s12", "s22", "loc.1", "loc.lat", "scale.1", "shape.1"]);
    assert_eq!(r.provenance.maxima.as_ref().unwrap().sha256.len(), 64);
}

#[test]
fn simulate_fit_round_trip_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let truth = (20.0, 15.0, 30.0);
    let (st, mx) = simulate(d, truth, 300);
    let model = write(d, "model.txt", "loc = 1\nscale = 1\nshape = 1\n");
    let first = p(d, "first.json");
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &model, "--out", &first]), EXIT_OK);
    let r = FitReport::read(Path::new(&first)).unwrap();
    let within = |r: &FitReport, k: usize, v: f64| {
        let row = &r.parameters[k];
        (row.estimate - v).abs() < 3.0 * row.se.unwrap()
    };
    for (k, v) in [(0, truth.0), (1, truth.1), (2, truth.2), (3, 10.0), (4, 2f64.ln()), (5, 0.1)] {
        assert!(within(&r, k, v), "{} = {} (se {:?}) vs {v}", r.parameters[k].name, r.parameters[k].estimate, r.parameters[k].se);
    }

    // simulate from the fitted report and fit again
    let prefix = p(d, "again_");
    assert_eq!(cli(&["simulate", "--fit", &first, "--years", "300", "--seed", "9", "--out-prefix", &prefix]), EXIT_OK);
    let second = p(d, "second.json");
    let code = cli(&[
        "fit", "--stations", &format!("{prefix}0000_stations.csv"), "--maxima", &format!("{prefix}0000_maxima.csv"),
        "--model", &model, "--out", &second,
    ]);
    assert_eq!(code, EXIT_OK);
    let s = FitReport::read(Path::new(&second)).unwrap();
    for k in 0..6 {
        assert!(within(&s, k, r.parameters[k].estimate), "{}", s.parameters[k].name);
    }
}

fn frechet_report_with_sigma(d: &Path, sigma: &str) -> String {
    let st = write(d, "s.csv", "id,lon,lat,alt\nA,0,0,0\nB,5,5,0\nC,9,1,0\nFAR,10000,10000,0\n");
    let mx = write(d, "m.csv", "year,A,B,C,FAR\n1,1,2,0.5,3\n2,3,1,2,0.7\n3,0.4,0.9,1.1,2\n");
    let model = write(d, "model.txt", &format!("margins = frechet\nsigma.init = {sigma}\n"));
    let out = p(d, "r.json");
    let code = cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &model, "--out", &out, "--max-iter", "0"]);
    assert!(code == EXIT_OK || code == EXIT_NOT_CONVERGED);
    out
}

fn read_grid(path: &str) -> Vec<(f64, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# format_version: 1"));
    assert_eq!(lines.next(), Some("lon,lat,value"));
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn extcoef_grid_is_isotropic_under_equal_strength() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report = frechet_report_with_sigma(d, "300, 0, 300");
    assert_eq!(FitReport::read(Path::new(&report)).unwrap().sigma.as_array(), [300.0, 0.0, 300.0]);
    let grid = write(d, "g.json", r#"{"lon_min":-12,"lon_max":12,"lat_min":-12,"lat_max":12,"nx":3,"ny":3}"#);
    let out = p(d, "theta.csv");
    assert_eq!(cli(&["extcoef", "--fit", &report, "--grid", &grid, "--out", &out]), EXIT_OK);
    let g = read_grid(&out);
    assert_eq!(g.len(), 9);
    let at = |x: f64, y: f64| g.iter().find(|r| r.0 == x && r.1 == y).unwrap().2;
    assert_eq!(at(0.0, 0.0), 1.0);
    let v = at(12.0, 0.0);
    for (x, y) in [(-12.0, 0.0), (0.0, 12.0), (0.0, -12.0)] {
        assert!((at(x, y) - v).abs() < 1e-10);
    }

    let pairs = write(d, "pairs.csv", "i,j\nA,B\nB,C\n");
    let out = p(d, "pairs_out.csv");
    assert_eq!(cli(&["extcoef", "--fit", &report, "--pairs", &pairs, "--out", &out]), EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("i,j,dx,dy,theta,theta_naive\nA,B,5,5,"));
    let lags = write(d, "lags.csv", "dx,dy\n30,40\n");
    assert_eq!(cli(&["extcoef", "--fit", &report, "--pairs", &lags, "--out", &out]), EXIT_OK);
    let row = std::fs::read_to_string(&out).unwrap().lines().nth(1).unwrap().to_string();
    let theta: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    // 2Φ(a/2) with a = sqrt(2500/300), mpmath
    assert!((theta - 1.851_085_326_821_234).abs() < 1e-10, "{row}");
}

#[test]
fn distant_conditioning_matches_unconditional_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report = frechet_report_with_sigma(d, "100, 10, 80");
    let grid = write(d, "g.json", r#"{"lon_min":0,"lon_max":10,"lat_min":0,"lat_max":10,"nx":4,"ny":3}"#);
    let (plain, cond, near) = (p(d, "plain.csv"), p(d, "cond.csv"), p(d, "near.csv"));
    assert_eq!(cli(&["predict", "--fit", &report, "--grid", &grid, "--T", "50", "--out", &plain]), EXIT_OK);
    let args = ["predict", "--fit", &report, "--grid", &grid, "--T", "50", "--condition-site", "FAR", "--condition-value", "25", "--out", &cond];
    assert_eq!(cli(&args), EXIT_OK);
    let (a, b) = (read_grid(&plain), read_grid(&cond));
    assert_eq!(a.len(), 12);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.2 - y.2).abs() < 1e-4 * x.2, "{x:?} vs {y:?}");
    }
    // 50-year unit-Fréchet level
    assert!((a[0].2 - (-1.0 / (0.98f64).ln())).abs() < 1e-9);

    let args = ["predict", "--fit", &report, "--grid", &grid, "--condition-site", "A", "--condition-value", "500", "--out", &near];
    assert_eq!(cli(&args), EXIT_OK);
    let c = read_grid(&near);
    // at the conditioning site the prediction is the observed value
    assert!((c[0].2 - 500.0).abs() < 1e-6 * 500.0, "{:?}", c[0]);
    // a large observed maximum raises the level everywhere
    assert!(c.iter().zip(&a).all(|(x, y)| x.2 >= y.2 * (1.0 - 1e-9)));
    assert_eq!(cli(&["predict", "--fit", &report, "--grid", &grid, "--condition-site", "A", "--out", &near]), EXIT_USAGE);
}

#[test]
fn test_command_at_fitted_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = sim_config(d, (200.0, 150.0, 300.0), 80, r#"{"kind":"frechet"}"#);
    assert_eq!(cli(&["simulate", "--config", &cfg, "--out-prefix", &p(d, "p_")]), EXIT_OK);
    let (st, mx) = (p(d, "p_0000_stations.csv"), p(d, "p_0000_maxima.csv"));
    let full_model = write(d, "full.txt", "margins = frechet\n");
    let full = p(d, "full.json");
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &full_model, "--out", &full]), EXIT_OK);
    let s11 = FitReport::read(Path::new(&full)).unwrap().internal.psi[0];
    let null_model = write(d, "null.txt", &format!("margins = frechet\nfix s11 = {s11}\n"));
    let null = p(d, "null.json");
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &null_model, "--out", &null]), EXIT_OK);
    let out = p(d, "test.json");
    assert_eq!(cli(&["test", "--fit-full", &full, "--fit-null", &null, "--restrict", "s11", "--out", &out]), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["w"].as_f64().unwrap().abs() < 1e-4, "{v}");
    for key in ["p_rj", "p_cb_chol", "p_cb_svd"] {
        assert!(v[key].as_f64().unwrap() > 0.99, "{key}: {v}");
    }
    // wrong direction
    assert_eq!(cli(&["test", "--fit-full", &null, "--fit-null", &full, "--out", &out]), EXIT_DATA);
}

#[test]
fn test_command_with_smaller_formula() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (st, mx) = simulate(d, (200.0, 150.0, 300.0), 60);
    let full_model = write(d, "full.txt", "loc = 1 + lat\nscale = 1\nshape = 1\n");
    let null_model = write(d, "null.txt", "loc = 1\nscale = 1\nshape = 1\n");
    let (full, null, out) = (p(d, "full.json"), p(d, "null.json"), p(d, "t.json"));
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &full_model, "--out", &full]), EXIT_OK);
    assert_eq!(cli(&["fit", "--stations", &st, "--maxima", &mx, "--model", &null_model, "--out", &null]), EXIT_OK);
    assert_eq!(cli(&["test", "--fit-full", &full, "--fit-null", &null, "--out", &out]), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["restricted"], serde_json::json!(["loc.lat"]));
    assert!(v["w"].as_f64().unwrap() >= -1e-8);
}

#[test]
fn study_command_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "study.json",
        r#"{"sigma":{"s11":200,"s12":150,"s22":300},"sites":{"random":5},"n_years":[20,40],"replicates":3,"seed":1}"#,
    );
    let out: PathBuf = d.join("out");
    assert_eq!(cli(&["study", "--config", &cfg, "--out-dir", out.to_str().unwrap()]), EXIT_OK);
    let est = std::fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert_eq!(est.lines().count(), 1 + 2 * 3);
    let ext = std::fs::read_to_string(out.join("extremal.csv")).unwrap();
    assert!(ext.starts_with("n_years,nmse_composite,nmse_naive,n_used\n20,"));
    assert!(out.join("study.json").exists());
}
