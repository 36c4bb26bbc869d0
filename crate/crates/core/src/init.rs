//! Pearson-type correlation of standardised errors and the grid QP start.
//!
//! For each β on a grid the weights minimise `‖Σ w_k B_k(β) − R̂‖_F` over the
//! simplex, which is the quadratic program `½ wᵀPw − hᵀw` with
//! `P_ij = tr(B_i B_j)` and `h_i = tr(B_i R̂)`. Weights that land on zero get
//! a lower bound derived from the component with the most similar support,
//! and the grid is solved again until every weight is strictly positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covstruct::{assemble_correlation, CovariateSet, ParameterVector};
use crate::error::{Error, Result};
use crate::linalg::{frob_dot, symmetrize, Mask, Matrix, Vector};
use crate::solvers::quadprog;

/// Smallest weight allowed in a starting point.
pub const WEIGHT_FLOOR: f64 = 3.059_023_205_018_258e-7;

/// `ε̂_t = diag(σ̂_t)⁻¹(Y_t − μ̂_t)` stacked as rows, with an observed mask.
#[derive(Clone, Debug)]
pub struct StandardizedErrors {
    values: Matrix,
    mask: Mask,
}

impl StandardizedErrors {
    /// Masked-out entries are stored as zero.
    pub fn new(mut values: Matrix, mask: Mask) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Dimension(format!(
                "errors are {:?} but mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidInput("observed error is not finite".into()));
            }
        }
        Ok(Self { values, mask })
    }

    pub fn complete(values: Matrix) -> Result<Self> {
        let mask = Mask::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn n_times(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Number of times at which both `i` and `j` are observed.
    pub fn overlap_counts(&self) -> Matrix {
        let d = self.dim();
        let mut n = Matrix::zeros(d, d);
        for t in 0..self.n_times() {
            for i in 0..d {
                if !self.mask[(t, i)] {
                    continue;
                }
                for j in i..d {
                    if self.mask[(t, j)] {
                        n[(i, j)] += 1.0;
                    }
                }
            }
        }
        n.fill_lower_triangle_with_upper_triangle();
        n
    }

    /// `(1/T) Σ_t ε̂_t ε̂_tᵀ`, meaningful for complete data.
    pub fn second_moment(&self) -> Matrix {
        let t = self.n_times().max(1) as f64;
        self.values.transpose() * &self.values / t
    }
}

/// Pairwise `(1/(n_ij − 1)) Σ ε̂_ti ε̂_tj`, clipped to `[−1, 1]`, unit diagonal.
pub fn pearson_type(errors: &StandardizedErrors) -> Result<Matrix> {
    let d = errors.dim();
    let n = errors.overlap_counts();
    let v = errors.values();
    let cross = v.transpose() * v;
    let mut out = Matrix::identity(d, d);
    let mut any = d < 2;
    for i in 0..d {
        for j in (i + 1)..d {
            let nij = n[(i, j)];
            let r = if nij >= 2.0 {
                any = true;
                (cross[(i, j)] / (nij - 1.0)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    if !any {
        return Err(Error::Estimation(
            "no pair of variables is jointly observed at two or more times".into(),
        ));
    }
    Ok(out)
}

/// A lower bound added by the augmentation loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddedBound {
    /// Weight index in the order (α₀…α_K, δ).
    pub index: usize,
    pub component: String,
    /// Component whose support was closest.
    pub nearest: String,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitResult {
    pub theta0: ParameterVector,
    /// `‖R(θ⁽⁰⁾) − R̂‖_F`.
    pub objective: f64,
    pub constraints_added: Vec<AddedBound>,
}

struct GridSolve {
    weights: Vector,
    /// Squared Frobenius distance.
    dist2: f64,
}

fn solve_at(
    set: &CovariateSet,
    r_hat: &Matrix,
    beta: Option<f64>,
    lower: &[f64],
) -> Result<GridSolve> {
    let car = set.car_eval(beta, 0)?;
    let basis = set.basis(car.as_ref())?;
    let n = basis.len();
    let p = Matrix::from_fn(n, n, |i, j| frob_dot(&basis[i], &basis[j]));
    let h = Vector::from_fn(n, |i, _| frob_dot(&basis[i], r_hat));
    // Constraint normals: the simplex equality, then w_i ≥ lower_i.
    let mut c = Matrix::zeros(n, n + 1);
    c.column_mut(0).fill(1.0);
    let mut b = Vector::zeros(n + 1);
    b[0] = 1.0;
    for i in 0..n {
        c[(i, i + 1)] = 1.0;
        b[i + 1] = lower[i];
    }
    let sol = quadprog::solve(&p, &h, &c, &b, 1).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::Identifiability(format!(
            "component Gram matrix is singular{}",
            beta.map(|b| format!(" at beta = {b}")).unwrap_or_default()
        )),
        other => other,
    })?;
    let mut weights = sol.x;
    for i in 0..n {
        weights[i] = weights[i].max(lower[i]);
    }
    let dist2 = (2.0 * sol.value + frob_dot(r_hat, r_hat)).max(0.0);
    Ok(GridSolve { weights, dist2 })
}

/// Returns the grid index of the best solve (first one on ties).
fn best_over_grid(
    set: &CovariateSet,
    r_hat: &Matrix,
    grid: &[Option<f64>],
    lower: &[f64],
) -> Result<(usize, GridSolve)> {
    let solves: Vec<GridSolve> = grid
        .par_iter()
        .map(|&b| solve_at(set, r_hat, b, lower))
        .collect::<Result<_>>()?;
    let scale = 1.0 + frob_dot(r_hat, r_hat);
    let mut best = 0;
    for (k, s) in solves.iter().enumerate().skip(1) {
        if s.dist2 < solves[best].dist2 - 1e-12 * scale {
            best = k;
        }
    }
    let s = solves.into_iter().nth(best).expect("non-empty grid");
    Ok((best, s))
}

/// `⌈|M|⌉` entrywise.
fn support(m: &Matrix) -> Matrix {
    m.map(|v| v.abs().ceil())
}

/// Grid-searched QP start with the strict-interior augmentation loop.
pub fn qp_init(r_hat: &Matrix, set: &CovariateSet, beta_grid: &[f64]) -> Result<InitResult> {
    let d = set.dim();
    if r_hat.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, model dimension is {d}",
            r_hat.shape()
        )));
    }
    let r_hat = symmetrize(r_hat, 1e-10)?;
    if (0..d).any(|i| (r_hat[(i, i)] - 1.0).abs() > 1e-10) {
        return Err(Error::InvalidInput("estimate must have unit diagonal".into()));
    }
    let grid: Vec<Option<f64>> = if set.has_spatial() {
        if beta_grid.is_empty() {
            return Err(Error::InvalidInput("beta grid is empty".into()));
        }
        if let Some(b) = beta_grid.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidInput(format!("grid value {b} is outside (0, 1)")));
        }
        beta_grid.iter().map(|&b| Some(b)).collect()
    } else {
        vec![None]
    };

    let names: Vec<String> = set.weight_components().map(|c| c.name().to_string()).collect();
    let n = names.len();
    let mut lower = vec![0.0; n];
    let mut constraints_added = Vec::new();
    loop {
        let (gi, sol) = best_over_grid(set, &r_hat, &grid, &lower)?;
        let beta = grid[gi];
        let zero: Vec<usize> = (0..n)
            .filter(|&i| lower[i] == 0.0 && sol.weights[i] < WEIGHT_FLOOR)
            .collect();
        if zero.is_empty() {
            let theta0 = ParameterVector::from_weights(sol.weights.as_slice(), set.has_spatial(), beta)?;
            return Ok(InitResult {
                theta0,
                objective: sol.dist2.sqrt(),
                constraints_added,
            });
        }
        let car = set.car_eval(beta, 0)?;
        let supports: Vec<Matrix> = set.basis(car.as_ref())?.iter().map(|m| support(m)).collect();
        for &k in &zero {
            let mut q = None;
            let mut best = f64::INFINITY;
            for j in (0..n).filter(|&j| j != k) {
                let dist: f64 = (&supports[j] - &supports[k]).abs().sum();
                if dist < best {
                    best = dist;
                    q = Some(j);
                }
            }
            let q = q.expect("at least the identity weight exists");
            let bound = (sol.weights[q] / n as f64).max(WEIGHT_FLOOR);
            lower[k] = bound;
            constraints_added.push(AddedBound {
                index: k,
                component: names[k].clone(),
                nearest: names[q].clone(),
                bound,
            });
        }
    }
}

/// The correlation implied by the starting point.
pub fn ive(theta0: &ParameterVector, set: &CovariateSet) -> Result<Matrix> {
    assemble_correlation(theta0, set)
}
