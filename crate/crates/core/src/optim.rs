//! Derivative-free local optimizers.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelderMeadOptions {
    /// Offset of the initial simplex vertices along each axis.
    pub initial_step: f64,
    /// Stop when the simplex diameter falls below this.
    pub xtol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.05, xtol: 1e-6, max_evals: 500 }
    }
}

/// Nelder-Mead with the standard coefficients (1, 2, 1/2, 1/2).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < opts.xtol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, xi)| b + 0.5 * (xi - b)).collect();
            let fx = eval(&x, &mut evals);
            *v = (x, fx);
        }
    }
    let (x, f) = simplex.swap_remove(0);
    OptimResult { x, f, evals, converged }
}

fn diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..simplex.len() {
        for j in i + 1..simplex.len() {
            let s: f64 = simplex[i].0.iter().zip(&simplex[j].0).map(|(a, b)| (a - b).powi(2)).sum();
            d = d.max(s.sqrt());
        }
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustRegionOptions {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evals: usize,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        Self { rho_begin: 0.5, rho_end: 1e-6, max_evals: 4000 }
    }
}

/// Box-constrained derivative-free trust region with linear models.
///
/// Keeps a simplex of `n + 1` evaluated points. Each iteration interpolates a
/// linear model on the simplex, steps to its minimiser on the box-clipped
/// ball of radius `rho` around the best point and swaps the new point into
/// the simplex. `rho` is halved when a step achieves less than a tenth of
/// the predicted decrease and every vertex lies within `2 rho`; otherwise
/// the farthest vertex is replaced by a geometry step.
pub fn trust_region_box<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &TrustRegionOptions,
) -> OptimResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let clip = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut start = x0.to_vec();
    clip(&mut start);
    let f0 = eval(&start, &mut evals);
    if n == 0 {
        return OptimResult { x: start, f: f0, evals, converged: true };
    }
    let mut rho = opts.rho_begin;
    let mut pts = vec![start.clone()];
    let mut fv = vec![f0];
    let coordinate_simplex = |x: &[f64], rho: f64, pts: &mut Vec<Vec<f64>>| {
        pts.truncate(1);
        pts[0] = x.to_vec();
        for i in 0..n {
            let mut y = x.to_vec();
            y[i] += if x[i] + rho <= upper[i] { rho } else { -rho };
            pts.push(y);
        }
    };
    coordinate_simplex(&start, rho, &mut pts);
    for p in pts.iter().skip(1) {
        fv.push(eval(p, &mut evals));
    }
    let mut converged = false;
    let mut fix_geometry = false;
    while evals < opts.max_evals {
        if rho < opts.rho_end {
            converged = true;
            break;
        }
        let b = argmin(&fv);
        let xb = pts[b].clone();
        let others: Vec<usize> = (0..=n).filter(|&i| i != b).collect();
        // rows: displacements of the other vertices
        let disp = DMatrix::from_fn(n, n, |r, c| pts[others[r]][c] - xb[c]);
        let df = DVector::from_iterator(n, others.iter().map(|&i| fv[i] - fv[b]));
        let inv = match disp.clone().try_inverse() {
            Some(m) if m.iter().all(|v| v.is_finite()) && m.norm() * rho < 1e8 => m,
            _ => {
                coordinate_simplex(&xb, rho, &mut pts);
                fv = vec![fv[b]];
                for p in pts.iter().skip(1) {
                    fv.push(eval(p, &mut evals));
                }
                continue;
            }
        };
        let g = &inv * &df;
        let dist: Vec<f64> = (0..n).map(|r| disp.row(r).norm()).collect();
        let far = (0..n).max_by(|&a, &c| dist[a].total_cmp(&dist[c])).unwrap();
        let geometry_ok = dist[far] <= 2.0 * rho;
        let d = bounded_step(&g, &xb, rho, lower, upper);
        let dn = d.norm();
        if dn >= 0.5 * rho && !(fix_geometry && !geometry_ok) {
            fix_geometry = false;
            let mut y: Vec<f64> = xb.iter().zip(d.iter()).map(|(a, s)| a + s).collect();
            clip(&mut y);
            let fy = eval(&y, &mut evals);
            let pred = -g.dot(&d);
            // barycentric weights of the step decide which vertex to drop
            let lambda = inv.transpose() * &d;
            let j = (0..n)
                .max_by(|&a, &c| {
                    let s = |r: usize| lambda[r].abs() * (dist[r] / rho).max(1.0).powi(2);
                    s(a).total_cmp(&s(c))
                })
                .unwrap();
            pts[others[j]] = y;
            fv[others[j]] = fy;
            let poor = fv[b] - fy < 0.1 * pred;
            if poor {
                if geometry_ok {
                    rho *= 0.5;
                } else {
                    fix_geometry = true;
                }
            }
            continue;
        }
        fix_geometry = false;
        if geometry_ok {
            rho *= 0.5;
            continue;
        }
        // geometry step orthogonal to the remaining displacements
        let mut v: DVector<f64> = inv.column(far).into_owned();
        let vn = v.norm();
        if vn == 0.0 {
            rho *= 0.5;
            continue;
        }
        v *= rho / vn;
        if g.dot(&v) > 0.0 {
            v = -v;
        }
        let mut y: Vec<f64> = xb.iter().zip(v.iter()).map(|(a, s)| a + s).collect();
        clip(&mut y);
        let fy = eval(&y, &mut evals);
        pts[others[far]] = y;
        fv[others[far]] = fy;
    }
    let b = argmin(&fv);
    OptimResult { x: pts.swap_remove(b), f: fv[b], evals, converged }
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

// Minimiser of g.d on |d| <= rho inside the box, by repeatedly freezing
// components that hit a bound.
fn bounded_step(g: &DVector<f64>, x: &[f64], rho: f64, lower: &[f64], upper: &[f64]) -> DVector<f64> {
    let n = g.len();
    let mut free: Vec<bool> = (0..n)
        .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
        .collect();
    let mut d: DVector<f64> = DVector::zeros(n);
    let mut budget = rho * rho;
    for _ in 0..=n {
        let gn = (0..n).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if gn == 0.0 || budget <= 0.0 {
            break;
        }
        let scale = budget.sqrt() / gn;
        let mut hit = false;
        for i in 0..n {
            if !free[i] {
                continue;
            }
            let t = x[i] + d[i] - g[i] * scale;
            if t < lower[i] || t > upper[i] {
                d[i] = t.clamp(lower[i], upper[i]) - x[i];
                free[i] = false;
                hit = true;
            }
        }
        let used: f64 = (0..n).filter(|&i| !free[i]).map(|i| d[i] * d[i]).sum();
        budget = rho * rho - used;
        if !hit {
            for i in 0..n {
                if free[i] {
                    d[i] = -g[i] * scale;
                }
            }
            break;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let opts = NelderMeadOptions { max_evals: 5000, xtol: 1e-9, ..Default::default() };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_respects_budget() {
        let opts = NelderMeadOptions { max_evals: 20, ..Default::default() };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(!r.converged);
        assert!(r.evals <= 25);
    }

    #[test]
    fn trust_region_bounded_quadratic() {
        // unconstrained minimum at (2, -0.5); the box caps x0 at 1
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] + 0.5).powi(2);
        let r = trust_region_box(f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0], &Default::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 0.5).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn trust_region_rosenbrock_in_box() {
        let opts = TrustRegionOptions { max_evals: 20000, ..Default::default() };
        let r = trust_region_box(rosenbrock, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &opts);
        assert!(r.f < 1e-4 && (r.x[0] - 1.0).abs() < 1e-2, "{r:?}");
    }

    #[test]
    fn trust_region_leaves_symmetric_saddle() {
        // even in x, zero gradient at the origin, minima at x1 = +-1
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + x[1].powi(2) + 0.5 * x[0] * x[1];
        let r = trust_region_box(f, &[0.0, 0.0], &[-3.0, -3.0], &[3.0, 3.0], &Default::default());
        assert!(r.f < -0.01, "{r:?}");
    }

    #[test]
    fn trust_region_cosine() {
        let f = |x: &[f64]| -(x[0].cos() * (x[1] - 0.3).cos());
        let pi = std::f64::consts::PI;
        let r = trust_region_box(f, &[1.0, -1.0], &[-pi, -pi], &[pi, pi], &Default::default());
        assert!((r.f + 1.0).abs() < 1e-9);
    }
}
