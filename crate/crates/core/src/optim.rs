//! Small-dimensional constrained minimization.
//!
//! The feasible set is a box intersected with at most one half-space of the
//! form `Σ_{i∈S} x_i ≤ c`, which covers the linear model's `a + b ≤ 1 − δ_S`.
//! The main routine is a projected quasi-Newton method: BFGS on the free
//! coordinates, projection back onto the feasible set along the search arc,
//! and an Armijo backtracking test. A projected Nelder–Mead is kept as a
//! derivative-free fallback.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Box plus an optional sum cap.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sum_cap: Option<(Vec<usize>, f64)>,
}

impl Region {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Euclidean projection onto the region.
    pub fn project(&self, x: &mut [f64]) {
        let raw: Vec<f64> = match &self.sum_cap {
            Some((idx, _)) => idx.iter().map(|&i| x[i]).collect(),
            None => Vec::new(),
        };
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
        let Some((idx, cap)) = &self.sum_cap else { return };
        let total: f64 = idx.iter().map(|&i| x[i]).sum();
        if total <= *cap {
            return;
        }
        // y_i = clamp(x_i − τ) for i in S, with the unclamped x; find τ ≥ 0 with Σ y_i = cap
        let shifted = |tau: f64| -> f64 { idx.iter().zip(&raw).map(|(&i, &r)| (r - tau).clamp(self.lower[i], self.upper[i])).sum() };
        let mut lo = 0.0;
        let mut hi = idx.iter().zip(&raw).map(|(&i, &r)| r - self.lower[i]).fold(0.0, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if shifted(mid) > *cap {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * (1.0 + hi) {
                break;
            }
        }
        for (&i, &r) in idx.iter().zip(&raw) {
            x[i] = (r - hi).clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let in_box = x.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| v >= lo && v <= hi);
        in_box
            && self
                .sum_cap
                .as_ref()
                .is_none_or(|(idx, cap)| idx.iter().map(|&i| x[i]).sum::<f64>() <= cap + 1e-12)
    }

    /// `P(x − g) − x`; its sup-norm is zero exactly at first-order points.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        self.project(&mut y);
        y.iter().zip(x).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MinimizeOptions {
    pub max_iterations: usize,
    /// Absolute tolerance on the projected-gradient sup-norm.
    pub pg_tolerance: f64,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub pg_norm: f64,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward-difference Hessian of `grad`, symmetrized and pushed to positive
/// definite by eigenvalue flooring.
fn model_hessian<F>(f: &mut F, x: &[f64], g: &[f64], region: &Region) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d = x.len();
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut ok = true;
    for j in 0..d {
        let step = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        // step inward if the forward point leaves the box
        let sign = if x[j] + step <= region.upper[j] { 1.0 } else { -1.0 };
        xp[j] += sign * step;
        match f(&xp) {
            Ok((_, gp)) => {
                for i in 0..d {
                    h[(i, j)] = (gp[i] - g[i]) / (sign * step);
                }
            }
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    let scale = sup_norm(g).max(1.0);
    if !ok || h.iter().any(|v| !v.is_finite()) {
        return DMatrix::identity(d, d) * scale;
    }
    let sym = (&h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let floor = top * 1e-8;
    let vals = eig.eigenvalues.map(|v| v.abs().max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Solves `B_FF d_F = −g_F` on the free coordinates; zero elsewhere. With
/// `face` (free indices of an active sum cap) the step is kept on the face
/// when the unconstrained step would push through it.
fn newton_direction(b: &DMatrix<f64>, g: &[f64], free: &[usize], face: &[usize]) -> Option<Vec<f64>> {
    let d = g.len();
    let k = free.len();
    if k == 0 {
        return Some(vec![0.0; d]);
    }
    let sub = DMatrix::from_fn(k, k, |i, j| b[(free[i], free[j])]);
    let rhs = DVector::from_iterator(k, free.iter().map(|&i| -g[i]));
    let chol = sub.cholesky()?;
    let mut sol = chol.solve(&rhs);
    let ones = DVector::from_iterator(k, free.iter().map(|i| if face.contains(i) { 1.0 } else { 0.0 }));
    if ones.sum() > 0.0 && ones.dot(&sol) > 0.0 {
        // minimize gᵀd + ½dᵀBd subject to Σ_face d = 0
        let u = chol.solve(&ones);
        let denom = ones.dot(&u);
        if denom > 0.0 {
            sol -= u * (ones.dot(&sol) / denom);
        }
    }
    let mut dir = vec![0.0; d];
    for (pos, &i) in free.iter().enumerate() {
        dir[i] = sol[pos];
    }
    Some(dir)
}

/// Free coordinates lying on an active sum cap.
fn active_face(x: &[f64], free: &[usize], region: &Region) -> Vec<usize> {
    let Some((idx, cap)) = &region.sum_cap else { return Vec::new() };
    let total: f64 = idx.iter().map(|&i| x[i]).sum();
    if total < cap - 1e-10 * cap.abs().max(1.0) {
        return Vec::new();
    }
    idx.iter().copied().filter(|i| free.contains(i)).collect()
}

fn free_coordinates(x: &[f64], g: &[f64], region: &Region) -> Vec<usize> {
    (0..x.len())
        .filter(|&i| {
            let eps = 1e-10 * region.lower[i].abs().max(region.upper[i].abs()).max(1.0);
            let at_lo = x[i] <= region.lower[i] + eps && g[i] > 0.0;
            let at_hi = x[i] >= region.upper[i] - eps && g[i] < 0.0;
            !(at_lo || at_hi)
        })
        .collect()
}

struct Trial {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

/// Backtracking along the projection arc `P(x + t·dir)`.
fn arc_search<F>(f: &mut F, region: &Region, x: &[f64], fx: f64, g: &[f64], dir: &[f64], pg_now: f64) -> Option<Trial>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut t = 1.0;
    for _ in 0..60 {
        let mut xt: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + t * b).collect();
        region.project(&mut xt);
        let step: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
        if sup_norm(&step) == 0.0 {
            return None;
        }
        if let Ok((ft, gt)) = f(&xt) {
            let decrease = dot(g, &step);
            let armijo = ft <= fx + 1e-4 * decrease && decrease < 0.0;
            // near the optimum, function differences drown in rounding;
            // accept a step that keeps f flat and shrinks the projected gradient
            let flat = (ft - fx).abs() <= 1e-13 * (1.0 + fx.abs())
                && sup_norm(&region.projected_gradient(&xt, &gt)) < pg_now;
            if armijo || flat {
                return Some(Trial { x: xt, value: ft, grad: gt });
            }
        }
        t *= 0.5;
    }
    None
}

/// Projected BFGS from `x0` (projected first).
pub fn projected_bfgs<F>(mut f: F, x0: &[f64], region: &Region, opts: MinimizeOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    region.project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut b = model_hessian(&mut f, &x, &g, region);
    let mut iterations = 0;
    let mut fresh_model = true;
    loop {
        let pg = sup_norm(&region.projected_gradient(&x, &g));
        if pg <= opts.pg_tolerance {
            return Ok(Minimum { x, value: fx, converged: true, iterations, pg_norm: pg });
        }
        if iterations >= opts.max_iterations {
            return Ok(Minimum { x, value: fx, converged: false, iterations, pg_norm: pg });
        }
        iterations += 1;

        let free = free_coordinates(&x, &g, region);
        let face = active_face(&x, &free, region);
        let mut dir = newton_direction(&b, &g, &free, &face).unwrap_or_else(|| g.iter().map(|v| -v).collect());
        if dot(&dir, &g) >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
        }
        let trial = match arc_search(&mut f, region, &x, fx, &g, &dir, pg) {
            Some(t) => Some(t),
            None if !fresh_model => {
                // stale curvature: rebuild the model and retry once
                b = model_hessian(&mut f, &x, &g, region);
                let free = free_coordinates(&x, &g, region);
                let face = active_face(&x, &free, region);
                let dir = newton_direction(&b, &g, &free, &face).unwrap_or_else(|| g.iter().map(|v| -v).collect());
                arc_search(&mut f, region, &x, fx, &g, &dir, pg)
            }
            None => None,
        };
        let trial = match trial {
            Some(t) => t,
            None => {
                // last resort: scaled projected steepest descent
                let scale = 1.0 / b.diagonal().iter().fold(1e-300f64, |m, v| m.max(*v));
                let sd: Vec<f64> = g.iter().map(|v| -v * scale).collect();
                match arc_search(&mut f, region, &x, fx, &g, &sd, pg) {
                    Some(t) => t,
                    None => return Ok(Minimum { x, value: fx, converged: false, iterations, pg_norm: pg }),
                }
            }
        };

        let s = DVector::from_iterator(d, trial.x.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, trial.grad.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let bs = &b * &s;
            let sbs = s.dot(&bs);
            if sbs > 0.0 {
                b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
            }
        }
        fresh_model = false;
        x = trial.x;
        fx = trial.value;
        g = trial.grad;
    }
}

/// Projected Nelder–Mead on values only. Converged when the simplex spread
/// in both value and position falls below the tolerances.
pub fn projected_nelder_mead<F>(mut f: F, x0: &[f64], region: &Region, max_evals: usize, xtol: f64, ftol: f64) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let d = x0.len();
    let mut eval = |p: &mut Vec<f64>| -> f64 {
        region.project(p);
        f(p).unwrap_or(f64::INFINITY)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    let f0 = eval(&mut start);
    simplex.push((start.clone(), f0));
    for i in 0..d {
        let width = region.upper[i] - region.lower[i];
        let mut p = start.clone();
        let step = (0.05 * width.min(p[i].abs().max(1.0))).max(1e-4);
        p[i] = if p[i] + step <= region.upper[i] { p[i] + step } else { p[i] - step };
        let fp = eval(&mut p);
        simplex.push((p, fp));
    }
    let mut evals = d + 1;
    let mut iterations = 0;
    let mut converged = false;
    while evals < max_evals {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread_f = simplex[d].1 - simplex[0].1;
        let spread_x = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0, f64::max);
        if spread_f.abs() <= ftol && spread_x <= xtol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|(p, _)| p[j]).sum::<f64>() / d as f64).collect();
        let worst = simplex[d].clone();
        let along = |coef: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + coef * (c - w)).collect() };
        let mut xr = along(1.0);
        let fr = eval(&mut xr);
        evals += 1;
        if fr < simplex[0].1 {
            let mut xe = along(2.0);
            let fe = eval(&mut xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let mut xc = if fr < worst.1 { along(0.5) } else { along(-0.5) };
            let fc = eval(&mut xc);
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = best.iter().zip(&item.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let fp = eval(&mut p);
                    *item = (p, fp);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    if !value.is_finite() {
        return Err(Error::Optimization("no finite objective value found by the simplex search".into()));
    }
    Ok(Minimum { x, value, converged, iterations, pg_norm: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Region {
        Region { lower: vec![0.0, 0.0, 0.0], upper: vec![10.0, 0.999, 0.999], sum_cap: Some((vec![1, 2], 0.999)) }
    }

    #[test]
    fn projection_onto_capped_box() {
        let r = triangle();
        let mut x = vec![11.0, 0.8, 0.6];
        r.project(&mut x);
        assert_eq!(x[0], 10.0);
        // equal shift of 0.2005 on both
        assert!((x[1] - 0.5995).abs() < 1e-12 && (x[2] - 0.3995).abs() < 1e-12, "{x:?}");
        let mut y = vec![1.0, 1.5, -0.3];
        r.project(&mut y);
        assert_eq!(y, vec![1.0, 0.999, 0.0]);
        assert!(r.contains(&y));
    }

    #[test]
    fn projection_is_idempotent_and_minimal() {
        let r = triangle();
        let mut x = vec![3.0, 0.9, 0.7];
        r.project(&mut x);
        let once = x.clone();
        r.project(&mut x);
        assert_eq!(once, x);
        // no feasible point on a coarse grid is closer to the original
        let orig = [3.0, 0.9, 0.7];
        let dist = |p: &[f64]| p.iter().zip(&orig).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = dist(&once);
        for i in 0..=100 {
            for j in 0..=100 {
                let p = [3.0, i as f64 * 0.00999, j as f64 * 0.00999];
                if r.contains(&p) {
                    assert!(dist(&p) >= best - 1e-12);
                }
            }
        }
    }

    fn quad(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // minimum at (2, 0.7, 0.6), outside the cap a+b ≤ 0.999
        let c = [2.0, 0.7, 0.6];
        let w = [1.0, 5.0, 3.0];
        let v = (0..3).map(|i| w[i] * (x[i] - c[i]).powi(2)).sum();
        let g = (0..3).map(|i| 2.0 * w[i] * (x[i] - c[i])).collect();
        Ok((v, g))
    }

    #[test]
    fn bfgs_lands_on_cap_face() {
        let r = triangle();
        let m = projected_bfgs(quad, &[1.0, 0.1, 0.1], &r, MinimizeOptions { max_iterations: 200, pg_tolerance: 1e-10 }).unwrap();
        assert!(m.converged, "{m:?}");
        // KKT on the face: 10(a−0.7) = 6(b−0.6), a+b = 0.999
        let a = (0.999 - 0.6 + 0.7 * 10.0 / 6.0) / (1.0 + 10.0 / 6.0);
        assert!((m.x[1] - a).abs() < 1e-8 && (m.x[2] - (0.999 - a)).abs() < 1e-8, "{:?}", m.x);
        assert!((m.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn bfgs_interior_rosenbrock() {
        let r = Region { lower: vec![-5.0, -5.0], upper: vec![5.0, 5.0], sum_cap: None };
        let rosen = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            Ok(((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2), vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
        };
        let m = projected_bfgs(rosen, &[-1.2, 1.0], &r, MinimizeOptions { max_iterations: 500, pg_tolerance: 1e-9 }).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let r = triangle();
        let m = projected_nelder_mead(|x| quad(x).map(|v| v.0), &[1.0, 0.1, 0.1], &r, 20_000, 1e-9, 1e-12).unwrap();
        assert!(r.contains(&m.x));
        assert!((m.x[1] + m.x[2] - 0.999).abs() < 1e-5, "{:?}", m.x);
    }
}
