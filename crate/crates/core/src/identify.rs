//! Identifiability check over a β grid.
//!
//! For every ordered pair `β ≠ β′` the linear program
//!
//! ```text
//! max δ + δ′  s.t.  Σ α_k F_k(β) + δ Γ(β)⁻¹ = Σ α′_k F_k(β′) + δ′ Γ(β′)⁻¹,
//!                   Σ α + δ = 1,  Σ α′ + δ′ = 1,  all ≥ 0
//! ```
//!
//! has optimum zero when the model is identifiable on that pair. On top of
//! that the vectorised components must be linearly independent at every β.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covstruct::CovariateSet;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::solvers::simplex::{self, LpStatus};

pub const DEFAULT_TOL: f64 = 1e-7;

/// Relative singular-value cutoff when compressing the equality rows.
const ROW_RANK_TOL: f64 = 1e-9;
/// Relative eigenvalue cutoff of the Gram matrix in the rank check.
const GRAM_RANK_TOL: f64 = 1e-10;

/// `count` equispaced points on `[start, stop]`.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// 25 points on `[0.02, 0.98]`.
pub fn default_beta_grid() -> Vec<f64> {
    linspace(0.02, 0.98, 25)
}

/// A feasible point with `δ + δ′` above tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub beta: f64,
    pub beta_prime: f64,
    pub alpha: Vec<f64>,
    pub alpha_prime: Vec<f64>,
    pub delta: f64,
    pub delta_prime: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub identifiable: bool,
    pub witnesses: Vec<Witness>,
    pub independence_ok: bool,
    /// β values at which the components were linearly dependent.
    pub dependent_at: Vec<f64>,
    /// Largest LP optimum over all pairs.
    pub max_value: f64,
    pub grid: Vec<f64>,
}

/// Vectorised upper triangles (diagonal included) of the weight components at β.
fn stacked(set: &CovariateSet, beta: Option<f64>) -> Result<Vec<Vec<f64>>> {
    let car = set.car_eval(beta, 0)?;
    let d = set.dim();
    let basis = set.basis(car.as_ref())?;
    Ok(basis
        .iter()
        .map(|m| {
            let mut v = Vec::with_capacity(d * (d + 1) / 2);
            for i in 0..d {
                for j in i..d {
                    v.push(m[(i, j)]);
                }
            }
            v
        })
        .collect())
}

/// True when the stacked component vectors have full column rank.
pub fn components_independent(set: &CovariateSet, beta: Option<f64>) -> Result<bool> {
    let cols = stacked(set, beta)?;
    let k = cols.len();
    let gram = Matrix::from_fn(k, k, |a, b| {
        cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum()
    });
    let ev = gram.symmetric_eigenvalues();
    let max = ev.max();
    Ok(ev.min() > GRAM_RANK_TOL * max.max(f64::MIN_POSITIVE))
}

/// Equality rows for one pair after removing duplicates and compressing to the row space.
fn reduced_rows(u: &[Vec<f64>], v: &[Vec<f64>]) -> Matrix {
    let nw = u.len();
    let nvar = 2 * nw;
    let len = u[0].len();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for e in 0..len {
        let row: Vec<f64> = (0..nvar)
            .map(|c| if c < nw { u[c][e] } else { -v[c - nw][e] })
            .map(|x| if x == 0.0 { 0.0 } else { x })
            .collect();
        if row.iter().all(|x| *x == 0.0) {
            continue;
        }
        if seen.insert(row.iter().map(|x| x.to_bits()).collect()) {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Matrix::zeros(0, nvar);
    }
    let a = Matrix::from_fn(rows.len(), nvar, |i, j| rows[i][j]);
    if a.nrows() <= nvar {
        return a;
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > ROW_RANK_TOL * smax)
        .collect();
    Matrix::from_fn(keep.len(), nvar, |r, c| {
        svd.singular_values[keep[r]] * vt[(keep[r], c)]
    })
}

struct PairResult {
    value: f64,
    x: Vector,
}

fn solve_pair(u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<PairResult> {
    let nw = u.len();
    let nvar = 2 * nw;
    let eq = reduced_rows(u, v);
    let m = eq.nrows() + 2;
    let mut a = Matrix::zeros(m, nvar);
    a.view_mut((0, 0), (eq.nrows(), nvar)).copy_from(&eq);
    for c in 0..nw {
        a[(m - 2, c)] = 1.0;
        a[(m - 1, nw + c)] = 1.0;
    }
    let mut b = Vector::zeros(m);
    b[m - 2] = 1.0;
    b[m - 1] = 1.0;
    let mut c = Vector::zeros(nvar);
    c[nw - 1] = 1.0;
    c[nvar - 1] = 1.0;
    match simplex::solve(&c, &a, &b)? {
        Ok(sol) => Ok(PairResult {
            value: sol.objective,
            x: sol.x,
        }),
        Err(LpStatus::Infeasible) => Err(Error::Solver(
            "identifiability LP reported infeasible although a feasible point exists".into(),
        )),
        Err(LpStatus::Unbounded) => Err(Error::Solver(
            "identifiability LP reported unbounded on a bounded feasible set".into(),
        )),
    }
}

/// Scans all ordered grid pairs and the per-β rank condition.
pub fn check_identifiability(
    set: &CovariateSet,
    beta_grid: &[f64],
    tol: f64,
) -> Result<IdentifiabilityReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if let Some(b) = beta_grid.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        return Err(Error::InvalidInput(format!("grid value {b} is outside (0, 1)")));
    }
    let mut grid = beta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    if !set.has_spatial() {
        let ok = components_independent(set, None)?;
        return Ok(IdentifiabilityReport {
            identifiable: ok,
            witnesses: Vec::new(),
            independence_ok: ok,
            dependent_at: Vec::new(),
            max_value: 0.0,
            grid,
        });
    }

    let vectors: Vec<Vec<Vec<f64>>> = grid
        .par_iter()
        .map(|&b| stacked(set, Some(b)))
        .collect::<Result<_>>()?;
    let independent: Vec<bool> = grid
        .par_iter()
        .map(|&b| components_independent(set, Some(b)))
        .collect::<Result<_>>()?;
    let dependent_at: Vec<f64> = grid
        .iter()
        .zip(&independent)
        .filter(|(_, ok)| !**ok)
        .map(|(b, _)| *b)
        .collect();

    let pairs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|i| (0..grid.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let results: Vec<PairResult> = pairs
        .par_iter()
        .map(|&(i, j)| solve_pair(&vectors[i], &vectors[j]))
        .collect::<Result<_>>()?;

    let nw = set.n_weights();
    let mut max_value: f64 = 0.0;
    let mut witnesses = Vec::new();
    for (&(i, j), r) in pairs.iter().zip(&results) {
        max_value = max_value.max(r.value);
        if r.value > tol {
            witnesses.push(Witness {
                beta: grid[i],
                beta_prime: grid[j],
                alpha: r.x.as_slice()[..nw - 1].to_vec(),
                alpha_prime: r.x.as_slice()[nw..2 * nw - 1].to_vec(),
                delta: r.x[nw - 1],
                delta_prime: r.x[2 * nw - 1],
                value: r.value,
            });
        }
    }
    let independence_ok = dependent_at.is_empty();
    Ok(IdentifiabilityReport {
        identifiable: independence_ok && witnesses.is_empty(),
        witnesses,
        independence_ok,
        dependent_at,
        max_value,
        grid,
    })
}

/// Largest absolute entry of `Σ α_k F_k(β) + δΓ(β)⁻¹ − Σ α′_k F_k(β′) − δ′Γ(β′)⁻¹`.
pub fn witness_residual(set: &CovariateSet, w: &Witness) -> Result<f64> {
    let lhs = combination(set, &w.alpha, w.delta, w.beta)?;
    let rhs = combination(set, &w.alpha_prime, w.delta_prime, w.beta_prime)?;
    Ok((lhs - rhs).amax())
}

fn combination(set: &CovariateSet, alpha: &[f64], delta: f64, beta: f64) -> Result<Matrix> {
    let car = set.car_eval(Some(beta), 0)?;
    let basis = set.basis(car.as_ref())?;
    let d = set.dim();
    let mut out = Matrix::zeros(d, d);
    for (w, m) in alpha.iter().chain(std::iter::once(&delta)).zip(&basis) {
        out += m.as_ref() * *w;
    }
    Ok(out)
}
