//! Unconstrained minimizers: Nelder–Mead and BFGS with backtracking line search.
//!
//! Objective values that are NaN or infinite are treated as `+inf`, which lets
//! callers express hard constraints as barriers.

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Max-norm of the gradient at `x` (NaN when the method does not use one).
    pub grad_max: f64,
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop once the simplex spread `f_max - f_min` falls below `f_tol * (1 + |f_min|)`.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            f_tol: 1e-10,
        }
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead with standard coefficients (1, 2, 0.5, 0.5). `steps[k]` is the
/// initial simplex edge along coordinate `k`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for k in 0..n {
        let mut x = x0.to_vec();
        x[k] += steps[k];
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let mut iterations = 0;
    let mut converged = n == 0;
    while iterations < opts.max_iterations && n > 0 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst.is_finite() && (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (v, b) in vertex.0.iter_mut().zip(&best_x) {
                *v = b + 0.5 * (*v - b);
            }
            vertex.1 = eval(&vertex.0, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        iterations,
        evaluations: evals,
        converged,
        grad_max: f64::NAN,
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Converged when `max|g| < grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop when every coordinate moved less than `step_tol * max(1, |x_k|)`.
    pub step_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            grad_tol: 1e-5,
            step_tol: 1e-8,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on the inverse Hessian. `fg` returns the objective and its gradient.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut evals = 1;
    let mut x = x0.to_vec();
    let (f0, g0) = fg(&x);
    let mut f = sanitize(f0);
    let mut g = g0;
    let identity = |n: usize| {
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            m[k * n + k] = 1.0;
        }
        m
    };
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let grad_ok = |f: f64, g: &[f64]| max_abs(g) < opts.grad_tol * (1.0 + f.abs());

    while iterations < opts.max_iterations && f.is_finite() {
        if grad_ok(f, &g) {
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n)
            .map(|r| -(0..n).map(|c| hinv[r * n + c] * g[c]).sum::<f64>())
            .collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = if fresh { (1.0 / max_abs(&d)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let (fn_, gn) = fg(&xn);
            evals += 1;
            let fn_ = sanitize(fn_);
            if fn_.is_finite() && fn_ <= f + 1e-4 * alpha * slope && gn.iter().all(|v| v.is_finite()) {
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if !fresh {
                // retry from steepest descent before giving up
                hinv = identity(n);
                fresh = true;
                continue;
            }
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let tiny_step = s
            .iter()
            .zip(&x)
            .all(|(si, xi)| si.abs() <= opts.step_tol * xi.abs().max(1.0));
        x = xn;
        f = fnew;
        g = gnew;

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for k in 0..n {
                    hinv[k * n + k] = scale;
                }
            }
            let hy: Vec<f64> = (0..n)
                .map(|r| (0..n).map(|c| hinv[r * n + c] * y[c]).sum::<f64>())
                .collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for r in 0..n {
                for c in 0..n {
                    hinv[r * n + c] += rho * rho * (sy + yhy) * s[r] * s[c]
                        - rho * (hy[r] * s[c] + s[r] * hy[c]);
                }
            }
            fresh = false;
        }
        if tiny_step {
            break;
        }
    }

    let grad_max = max_abs(&g);
    Minimum {
        converged: grad_ok(f, &g),
        x,
        f,
        iterations,
        evaluations: evals,
        grad_max,
    }
}
