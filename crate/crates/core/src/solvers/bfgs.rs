//! BFGS minimisation inside a symmetric box `|x_i| ≤ bound`.
//!
//! Coordinates sitting on the box with the gradient pushing outward are held
//! fixed for the step; the rest follow the inverse-Hessian direction. Steps
//! satisfy the strong Wolfe conditions unless the box truncates them, in
//! which case sufficient decrease alone is required.

use crate::error::Result;
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub bound: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            bound: 15.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Projected-gradient infinity norm at `x`.
    pub grad_norm: f64,
    /// Objective after each accepted iteration, starting with `f(x0)`.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient with outward-pushing components on the box zeroed.
fn projected(x: &[f64], g: &[f64], bound: f64) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if (xi >= bound && gi < 0.0) || (xi <= -bound && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimises `f`. The callback returns the value and gradient; errors and
/// non-finite values are treated as an infinite objective.
pub fn minimize<F>(mut fun: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let bound = opts.bound;
    let mut eval = |x: &[f64]| -> (f64, Vec<f64>) {
        match fun(x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => (f, g),
            _ => (f64::INFINITY, vec![0.0; n]),
        }
    };
    let x: Vec<f64> = x0.iter().map(|v| v.clamp(-bound, bound)).collect();
    let (f, g) = eval(&x);
    if !f.is_finite() {
        return Err(crate::error::Error::Estimation(
            "objective is not finite at the starting point".into(),
        ));
    }
    let mut cur = Point { x, f, g };
    let mut history = vec![cur.f];
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let pg = projected(&cur.x, &cur.g, bound);
        if inf_norm(&pg) < opts.grad_tol {
            converged = true;
            break;
        }
        let mut free: Vec<bool> = pg.iter().zip(&cur.g).map(|(p, g)| *p != 0.0 || *g == 0.0).collect();
        let mut p = feasible_direction(&h, &cur, &mut free, bound);
        let mut slope = dot(&p, &cur.g);
        if slope >= 0.0 {
            h = identity(n);
            p = feasible_direction(&h, &cur, &mut free, bound);
            slope = dot(&p, &cur.g);
            fresh = true;
            if slope >= 0.0 {
                break;
            }
        }
        // Largest step that stays inside the box.
        let mut alpha_max = f64::INFINITY;
        for i in 0..n {
            if p[i] > 0.0 {
                alpha_max = alpha_max.min((bound - cur.x[i]) / p[i]);
            } else if p[i] < 0.0 {
                alpha_max = alpha_max.min((-bound - cur.x[i]) / p[i]);
            }
        }
        let alpha0 = if fresh {
            (1.0 / inf_norm(&p).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let step = line_search(&mut eval, &cur, &p, slope, alpha0, alpha_max, opts);
        let next = match step {
            Some(pt) => pt,
            None if !fresh => {
                h = identity(n);
                fresh = true;
                continue;
            }
            None => break,
        };
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for v in h.iter_mut() {
                    *v *= scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        cur = next;
        history.push(cur.f);
        iterations += 1;
    }
    let pg = projected(&cur.x, &cur.g, bound);
    let grad_norm = inf_norm(&pg);
    if grad_norm < opts.grad_tol {
        converged = true;
    }
    Ok(BfgsResult {
        x: cur.x,
        f: cur.f,
        grad: cur.g,
        iterations,
        converged,
        grad_norm,
        history,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `−H g` on the free coordinates, also freezing bound coordinates the
/// direction would push further out (otherwise the step length is zero).
fn feasible_direction(h: &[f64], cur: &Point, free: &mut [bool], bound: f64) -> Vec<f64> {
    loop {
        let p = direction(h, &cur.g, free);
        let mut changed = false;
        for i in 0..p.len() {
            let out = (cur.x[i] >= bound && p[i] > 0.0) || (cur.x[i] <= -bound && p[i] < 0.0);
            if free[i] && out {
                free[i] = false;
                changed = true;
            }
        }
        if !changed {
            return p;
        }
    }
}

/// `−H g` on the free coordinates, zero elsewhere. With coordinates held
/// fixed, the inverse of the free block of the Hessian is the Schur
/// complement `H_FF − H_FA H_AA⁻¹ H_AF`, not the plain `H_FF` block.
fn direction(h: &[f64], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    let fi: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    let ai: Vec<usize> = (0..n).filter(|&i| !free[i]).collect();
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[rows[i] * n + cols[j]])
    };
    let mut hff = sub(&fi, &fi);
    if !ai.is_empty() && !fi.is_empty() {
        let hfa = sub(&fi, &ai);
        if let Some(chol) = sub(&ai, &ai).cholesky() {
            hff -= &hfa * chol.solve(&hfa.transpose());
        }
    }
    let gf = DVector::from_fn(fi.len(), |i, _| g[fi[i]]);
    let pf = -(hff * gf);
    let mut p = vec![0.0; n];
    for (k, &i) in fi.iter().enumerate() {
        p[i] = pf[k];
    }
    p
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn trial<E>(eval: &mut E, cur: &Point, p: &[f64], alpha: f64, bound: f64) -> Point
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let x: Vec<f64> = cur
        .x
        .iter()
        .zip(p)
        .map(|(xi, pi)| (xi + alpha * pi).clamp(-bound, bound))
        .collect();
    let (f, g) = eval(&x);
    Point { x, f, g }
}

/// Strong-Wolfe bracketing and zoom; returns `None` if no acceptable point is found.
fn line_search<E>(
    eval: &mut E,
    cur: &Point,
    p: &[f64],
    slope0: f64,
    alpha0: f64,
    alpha_max: f64,
    opts: &BfgsOptions,
) -> Option<Point>
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let armijo = |a: f64, f: f64| f <= cur.f + opts.c1 * a * slope0;
    let mut a_prev = 0.0;
    let mut f_prev = cur.f;
    let mut d_prev = slope0;
    let mut a = alpha0.min(alpha_max);
    let mut best: Option<Point> = None;
    for k in 0..opts.max_line_search {
        let pt = trial(eval, cur, p, a, opts.bound);
        let dk = dot(&pt.g, p);
        let ok = armijo(a, pt.f);
        if ok && best.as_ref().is_none_or(|b| pt.f < b.f) {
            best = Some(Point {
                x: pt.x.clone(),
                f: pt.f,
                g: pt.g.clone(),
            });
        }
        if !ok || (k > 0 && pt.f >= f_prev) {
            return zoom(eval, cur, p, slope0, (a_prev, f_prev, d_prev), (a, pt.f, dk), opts)
                .or(best);
        }
        if dk.abs() <= -opts.c2 * slope0 {
            return Some(pt);
        }
        if dk >= 0.0 {
            return zoom(eval, cur, p, slope0, (a, pt.f, dk), (a_prev, f_prev, d_prev), opts)
                .or(best);
        }
        if a >= alpha_max {
            // Truncated by the box: sufficient decrease is enough.
            return Some(pt);
        }
        a_prev = a;
        f_prev = pt.f;
        d_prev = dk;
        a = (2.0 * a).min(alpha_max);
    }
    best
}

fn zoom<E>(
    eval: &mut E,
    cur: &Point,
    p: &[f64],
    slope0: f64,
    lo: (f64, f64, f64),
    hi: (f64, f64, f64),
    opts: &BfgsOptions,
) -> Option<Point>
where
    E: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (mut a_lo, mut f_lo, mut d_lo) = lo;
    let (mut a_hi, mut f_hi, _) = hi;
    let mut best: Option<Point> = None;
    for _ in 0..opts.max_line_search {
        // Safeguarded quadratic interpolation from the low end.
        let width = a_hi - a_lo;
        let denom = 2.0 * (f_hi - f_lo - d_lo * width);
        let mut a = if denom.is_finite() && denom > 0.0 {
            a_lo - d_lo * width * width / denom
        } else {
            a_lo + 0.5 * width
        };
        let (lo_b, hi_b) = if a_lo < a_hi { (a_lo, a_hi) } else { (a_hi, a_lo) };
        let margin = 0.1 * (hi_b - lo_b);
        if !(a > lo_b + margin && a < hi_b - margin) {
            a = 0.5 * (a_lo + a_hi);
        }
        if (hi_b - lo_b) < 1e-16 * (1.0 + hi_b.abs()) {
            break;
        }
        let pt = trial(eval, cur, p, a, opts.bound);
        let dk = dot(&pt.g, p);
        if pt.f > cur.f + opts.c1 * a * slope0 || pt.f >= f_lo {
            a_hi = a;
            f_hi = pt.f;
        } else {
            if dk.abs() <= -opts.c2 * slope0 {
                return Some(pt);
            }
            if dk * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
            }
            a_lo = a;
            f_lo = pt.f;
            d_lo = dk;
            best = Some(pt);
        }
    }
    best
}
