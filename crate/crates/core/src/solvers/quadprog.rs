//! Dual active-set solver for strictly convex quadratic programs.
//!
//! Minimises `½ xᵀGx − aᵀx` subject to `Cᵀx = b` for the first `meq`
//! constraints and `Cᵀx ≥ b` for the rest, following Goldfarb and Idnani.
//! The factor `J = L⁻ᵀ` (with `G = LLᵀ`) and the triangular `R` satisfying
//! `JᵀN = [R; 0]` for the active normals `N` are updated with Givens rotations.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vector,
    /// Value of `½ xᵀGx − aᵀx`.
    pub value: f64,
    /// Lagrange multipliers, one per constraint (zero for inactive ones).
    pub multipliers: Vector,
    pub active: Vec<usize>,
    pub iterations: usize,
}

struct State {
    j: Matrix,
    r: Matrix,
    q: usize,
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_cols(m: &mut Matrix, k: usize, l: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let u = m[(i, k)];
        let v = m[(i, l)];
        m[(i, k)] = c * u + s * v;
        m[(i, l)] = -s * u + c * v;
    }
}

impl State {
    /// Appends a constraint whose transformed normal is `d = Jᵀn`.
    fn add(&mut self, mut d: Vector) {
        let n = d.len();
        for jj in ((self.q + 1)..n).rev() {
            let (c, s, h) = givens(d[jj - 1], d[jj]);
            if s == 0.0 {
                continue;
            }
            d[jj - 1] = h;
            d[jj] = 0.0;
            rotate_cols(&mut self.j, jj - 1, jj, c, s);
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
    }

    /// Removes the active constraint in position `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (c, s, h) = givens(self.r[(k, k)], self.r[(k + 1, k)]);
            if s != 0.0 {
                self.r[(k, k)] = h;
                self.r[(k + 1, k)] = 0.0;
                for col in (k + 1)..(q - 1) {
                    let u = self.r[(k, col)];
                    let v = self.r[(k + 1, col)];
                    self.r[(k, col)] = c * u + s * v;
                    self.r[(k + 1, col)] = -s * u + c * v;
                }
                rotate_cols(&mut self.j, k, k + 1, c, s);
            }
        }
        self.q -= 1;
    }

    /// Solves `R r = d[..q]` by back substitution.
    fn dual_direction(&self, d: &Vector) -> Vector {
        let q = self.q;
        let mut r = Vector::zeros(q);
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in (i + 1)..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }

    fn primal_direction(&self, d: &Vector) -> Vector {
        let n = d.len();
        let mut z = Vector::zeros(n);
        for k in self.q..n {
            z.axpy(d[k], &self.j.column(k), 1.0);
        }
        z
    }
}

/// Solves the QP. `c` holds one constraint normal per column.
pub fn solve(g: &Matrix, a: &Vector, c: &Matrix, b: &Vector, meq: usize) -> Result<QpSolution> {
    let n = g.nrows();
    let m = c.ncols();
    if !g.is_square() || a.len() != n || c.nrows() != n || b.len() != m || meq > m {
        return Err(Error::Dimension("quadratic program shapes disagree".into()));
    }
    let chol = g.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("QP matrix is not positive definite".into())
    })?;
    let jmat = chol
        .l()
        .transpose()
        .solve_upper_triangular(&Matrix::identity(n, n))
        .ok_or_else(|| Error::Solver("triangular inverse failed".into()))?;
    let mut st = State {
        j: jmat,
        r: Matrix::zeros(n, n),
        q: 0,
    };
    let mut x = chol.solve(a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    // Equalities are stored with a sign chosen at entry.
    let mut sign = vec![1.0; m];
    let scale = 1.0 + g.amax() + a.amax();
    let tol = 1e-12 * scale;
    let max_iter = 50 * (n + m) + 100;
    let mut iterations = 0;

    let slack = |x: &Vector, p: usize, sgn: f64| sgn * (c.column(p).dot(x) - b[p]);

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Solver("active-set iteration limit reached".into()));
        }
        // Choose the next constraint to add.
        let mut chosen: Option<usize> = None;
        for p in 0..meq {
            if !active.contains(&p) {
                let s = c.column(p).dot(&x) - b[p];
                sign[p] = if s > 0.0 { -1.0 } else { 1.0 };
                chosen = Some(p);
                break;
            }
        }
        if chosen.is_none() {
            let mut worst = -tol;
            for p in meq..m {
                if active.contains(&p) {
                    continue;
                }
                let cn = c.column(p).norm().max(1.0);
                let s = slack(&x, p, 1.0) / cn;
                if s < worst {
                    worst = s;
                    chosen = Some(p);
                }
            }
        }
        let Some(p) = chosen else {
            break;
        };
        let np: Vector = c.column(p) * sign[p];
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::Solver("active-set iteration limit reached".into()));
            }
            let d = st.j.transpose() * &np;
            let z = st.primal_direction(&d);
            let r = st.dual_direction(&d);
            let s_p = slack(&x, p, sign[p]);
            // Partial step: largest dual step keeping inequality multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &ck) in active.iter().enumerate() {
                if ck >= meq && r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.norm() > 1e-14 * scale && zn.abs() > 0.0 {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Solver("quadratic program is infeasible".into()));
            }
            if t2.is_infinite() {
                for k in 0..active.len() {
                    u[k] -= t * r[k];
                }
                up += t;
                let k = drop_at.expect("partial step has a blocking constraint");
                st.drop(k);
                active.remove(k);
                u.remove(k);
                continue;
            }
            x.axpy(t, &z, 1.0);
            for k in 0..active.len() {
                u[k] -= t * r[k];
            }
            up += t;
            if t2 <= t1 {
                let d = st.j.transpose() * &np;
                st.add(d);
                active.push(p);
                u.push(up);
                break;
            }
            let k = drop_at.expect("partial step has a blocking constraint");
            st.drop(k);
            active.remove(k);
            u.remove(k);
        }
    }

    let value = 0.5 * x.dot(&(g * &x)) - a.dot(&x);
    let mut multipliers = Vector::zeros(m);
    for (k, &ck) in active.iter().enumerate() {
        multipliers[ck] = u[k] * sign[ck];
    }
    active.sort_unstable();
    Ok(QpSolution {
        x,
        value,
        multipliers,
        active,
        iterations,
    })
}
