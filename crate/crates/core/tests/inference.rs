use maxstab::data::DataSet;
use maxstab::design::{Design, ModelSpec};
use maxstab::inference::{clrt, fit, FitOptions, SeKind};
use maxstab::likelihood::{pairwise_nll, PairwiseLikelihood};
use maxstab::simulate::{simulate_panel, MarginSurface, Region, SimConfig};
use maxstab::smith::CovMatrix;

fn sigma3() -> CovMatrix {
    CovMatrix::new(200.0, 150.0, 300.0).unwrap()
}

fn frechet_panel(k: usize, n: usize, seed: u64) -> DataSet {
    let sites = Region::square(0.0, 40.0).random_sites(k, seed);
    simulate_panel(&SimConfig::new(sigma3(), sites, n, seed), 0).unwrap()
}

#[test]
fn recovers_sigma_with_many_years() {
    let data = frechet_panel(10, 500, 4);
    let f = fit(&data, &ModelSpec::frechet(), &FitOptions::default()).unwrap();
    assert!(f.convergence.converged);
    let s = f.sigma();
    // three replication sds at this size
    assert!((s.s11 - 200.0).abs() < 40.0, "{s:?}");
    assert!((s.s22 - 300.0).abs() < 59.0, "{s:?}");
    assert!((s.s12 - 150.0).abs() < 40.0, "{s:?}");
    let se = f.standard_errors(SeKind::Godambe);
    assert!(se[..3].iter().all(|v| v.unwrap() > 0.0));
}

#[test]
fn scale_equivariance_of_gev_fit() {
    let sites = Region::square(0.0, 40.0).random_sites(6, 9);
    let mut cfg = SimConfig::new(sigma3(), sites, 80, 9);
    cfg.margins = MarginSurface::Constant {
        loc: 10.0,
        scale: 2.0,
        shape: 0.1,
    };
    let data = simulate_panel(&cfg, 0).unwrap();
    let model = ModelSpec::parse("loc = 1\nscale = 1\nshape = 1").unwrap();
    let a = fit(&data, &model, &FitOptions::default()).unwrap();
    let scaled = data.map_values(|y| 3.0 * y);
    let b = fit(&scaled, &model, &FitOptions::default()).unwrap();
    let (ea, eb) = (a.estimates(), b.estimates());
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
    for k in 0..3 {
        assert!(rel(eb[k], ea[k]) < 1e-3, "σ entry {k}: {} vs {}", eb[k], ea[k]);
    }
    assert!(rel(eb[3], 3.0 * ea[3]) < 1e-3);
    assert!((eb[4] - (ea[4] + 3f64.ln())).abs() < 1e-3);
    assert!((eb[5] - ea[5]).abs() < 1e-3);
}

#[test]
fn clrt_properties() {
    let data = frechet_panel(8, 100, 12);
    let design = Design::frechet();
    let lik = PairwiseLikelihood::new(&data, &design).unwrap();
    let opts = FitOptions::default();
    let full = fit(&data, &ModelSpec::frechet(), &opts).unwrap();
    let null = fit(&data, &ModelSpec::frechet().with_fixed("s11", 200.0), &opts).unwrap();
    let r = clrt(&lik, &full, &null, &[0]).unwrap();
    assert!(r.w >= -1e-8);
    assert!(r.nu.iter().all(|v| *v > 0.0));
    for p in [r.p_rj, r.p_cb_chol, r.p_cb_svd] {
        assert!((0.0..=1.0).contains(&p));
    }

    // null restricted at the fitted value
    let at_hat = fit(&data, &ModelSpec::frechet().with_fixed("s11", full.psi_hat[0]), &opts).unwrap();
    let r0 = clrt(&lik, &full, &at_hat, &[0]).unwrap();
    assert!(r0.w.abs() < 1e-4, "{r0:?}");
    assert!(r0.p_rj > 0.99 && r0.p_cb_chol > 0.99 && r0.p_cb_svd > 0.99, "{r0:?}");

    // two restrictions
    let null2 = fit(&data, &ModelSpec::frechet().with_fixed("s11", 200.0).with_fixed("s12", 150.0), &opts).unwrap();
    let r2 = clrt(&lik, &full, &null2, &[0, 1]).unwrap();
    assert_eq!(r2.nu.len(), 2);
    // the second null is nested in the first
    assert!(r2.w >= r.w - 1e-6);

    // not nested
    assert!(clrt(&lik, &null, &full, &[0]).is_err());
}

#[test]
fn restricted_fit_matches_objective() {
    let data = frechet_panel(6, 60, 21);
    let model = ModelSpec::frechet().with_fixed("s12", 0.0);
    let f = fit(&data, &model, &FitOptions::default()).unwrap();
    assert_eq!(f.psi_hat[1], 0.0);
    assert!(f.se[1].is_none());
    let direct = pairwise_nll(&f.psi_hat, &data, &model).unwrap();
    assert!((direct - f.nll).abs() < 1e-9 * f.nll.abs());
}

#[test]
fn hessian_and_godambe_standard_errors_differ() {
    let data = frechet_panel(10, 100, 31);
    let f = fit(&data, &ModelSpec::frechet(), &FitOptions::default()).unwrap();
    let g = f.standard_errors(SeKind::Godambe);
    let h = f.standard_errors(SeKind::Hessian);
    // the pairwise Hessian alone understates uncertainty when pairs share sites
    assert!(g[0].unwrap() > h[0].unwrap());
}

#[test]
fn fixed_entry_that_makes_the_start_indefinite() {
    let data = frechet_panel(6, 60, 21);
    let opts = FitOptions {
        start: Some(vec![300.0, 250.0, 300.0]),
        ..FitOptions::default()
    };
    let f = fit(&data, &ModelSpec::frechet().with_fixed("s11", 200.0), &opts).unwrap();
    assert!(f.convergence.converged);
    assert!(f.sigma().is_positive_definite());
    let g = fit(&data, &ModelSpec::frechet().with_fixed("s12", 250.0), &FitOptions { start: Some(vec![100.0, 0.0, 100.0]), ..opts }).unwrap();
    assert_eq!(g.psi_hat[1], 250.0);
    assert!(g.sigma().is_positive_definite());
}
