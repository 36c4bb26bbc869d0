//! Dense two-phase simplex for `max cᵀx` subject to `Ax = b`, `x ≥ 0`.
//!
//! Pivoting follows Bland's rule, so the method terminates on degenerate
//! problems. Intended for a few dozen variables and constraints.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

const PIVOT_TOL: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vector,
    pub objective: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Infeasible,
    Unbounded,
}

/// Result of a solve: an optimum or a definite infeasible/unbounded status.
pub type LpOutcome = std::result::Result<LpSolution, LpStatus>;

struct Tableau {
    /// m constraint rows followed by the objective row; last column is the rhs.
    t: Matrix,
    basis: Vec<usize>,
    m: usize,
}

impl Tableau {
    fn n_cols(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let nc = self.t.ncols();
        for j in 0..nc {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..nc {
                let v = self.t[(row, j)];
                self.t[(i, j)] -= f * v;
            }
            self.t[(i, col)] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Minimises the objective row (reduced costs stored as `z_j − c_j` style
    /// negated values) over the allowed columns.
    fn run(&mut self, allowed: usize) -> std::result::Result<(), LpStatus> {
        let obj = self.m;
        for _ in 0..MAX_PIVOTS {
            // Bland: smallest index with negative reduced cost.
            let Some(col) = (0..allowed).find(|&j| self.t[(obj, j)] < -PIVOT_TOL) else {
                return Ok(());
            };
            let rhs = self.n_cols();
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.t[(i, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14
                                || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Err(LpStatus::Unbounded),
                Some((row, _)) => self.pivot(row, col),
            }
        }
        // Bland's rule cannot cycle; hitting the cap means numerical trouble.
        Err(LpStatus::Unbounded)
    }
}

/// Solves `max cᵀx` s.t. `Ax = b`, `x ≥ 0`.
///
/// Returns `Ok(Err(status))` for infeasible or unbounded problems and an
/// error only for malformed input.
pub fn solve(c: &Vector, a: &Matrix, b: &Vector) -> Result<LpOutcome> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(Error::Dimension(format!(
            "LP shapes disagree: A is {m}x{n}, b has {}, c has {}",
            b.len(),
            c.len()
        )));
    }
    if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Solver("LP data contains non-finite values".into()));
    }

    // Columns: n structural, m artificial, rhs.
    let mut t = Matrix::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = sign * b[i];
    }
    // Phase one: minimise the sum of artificials, i.e. objective row = −Σ rows.
    for j in 0..n {
        t[(m, j)] = -(0..m).map(|i| t[(i, j)]).sum::<f64>();
    }
    t[(m, n + m)] = -(0..m).map(|i| t[(i, n + m)]).sum::<f64>();
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        m,
    };
    tab.run(n + m).map_err(|_| Error::Solver("phase one did not terminate".into()))?;
    let scale = 1.0 + b.amax();
    if -tab.t[(m, n + m)] > 1e-9 * scale {
        return Ok(Err(LpStatus::Infeasible));
    }

    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut row = 0;
    while row < tab.m {
        if tab.basis[row] >= n {
            match (0..n).find(|&j| tab.t[(row, j)].abs() > 1e-9) {
                Some(col) => tab.pivot(row, col),
                None => {
                    tab.t = tab.t.clone().remove_row(row);
                    tab.basis.remove(row);
                    tab.m -= 1;
                    continue;
                }
            }
        }
        row += 1;
    }
    let m2 = tab.m;
    // Remove artificial columns, keeping the rhs.
    let mut t2 = Matrix::zeros(m2 + 1, n + 1);
    for i in 0..m2 {
        for j in 0..n {
            t2[(i, j)] = tab.t[(i, j)];
        }
        t2[(i, n)] = tab.t[(i, n + m)];
    }
    // Phase two objective: minimise −cᵀx, expressed in reduced costs.
    for j in 0..n {
        t2[(m2, j)] = -c[j];
    }
    for i in 0..m2 {
        let cb = c[tab.basis[i]];
        if cb != 0.0 {
            for j in 0..=n {
                t2[(m2, j)] += cb * t2[(i, j)];
            }
        }
    }
    let mut tab2 = Tableau {
        t: t2,
        basis: tab.basis,
        m: m2,
    };
    if let Err(s) = tab2.run(n) {
        return Ok(Err(s));
    }
    let mut x = Vector::zeros(n);
    for i in 0..m2 {
        x[tab2.basis[i]] = tab2.t[(i, n)].max(0.0);
    }
    let objective = c.dot(&x);
    Ok(Ok(LpSolution { x, objective }))
}
