//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use structcov::car::SpatialGraph;
use structcov::covstruct::{CovariateSet, ParameterVector};

pub type M = DMatrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Spatial correlation by dense inversion of `D − βM` on non-island nodes.
pub fn dense_car(d: usize, edges: &[(usize, usize)], beta: f64) -> M {
    let mut adj = M::zeros(d, d);
    for &(a, b) in edges {
        adj[(a, b)] = 1.0;
        adj[(b, a)] = 1.0;
    }
    let deg: Vec<f64> = (0..d).map(|i| adj.row(i).sum()).collect();
    let live: Vec<usize> = (0..d).filter(|&i| deg[i] > 0.0).collect();
    let n = live.len();
    let q = M::from_fn(n, n, |i, j| {
        let (a, b) = (live[i], live[j]);
        if a == b { deg[a] } else { -beta * adj[(a, b)] }
    });
    let c = q.try_inverse().expect("D - beta M is invertible for beta < 1");
    let mut out = M::identity(d, d);
    for i in 0..n {
        for j in 0..n {
            out[(live[i], live[j])] = c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt();
        }
    }
    out
}

pub fn cluster_matrix(labels: &[usize]) -> M {
    let d = labels.len();
    M::from_fn(d, d, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 })
}

/// A model described independently of the library's containers.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub d: usize,
    pub clusters: Vec<Vec<usize>>,
    pub global: bool,
    pub edges: Option<Vec<(usize, usize)>>,
    /// Clusters interacted with the spatial effect.
    pub spatial_interactions: Vec<usize>,
}

impl ModelSpec {
    pub fn set(&self) -> CovariateSet {
        let mut s = CovariateSet::new(self.d).unwrap();
        for (k, l) in self.clusters.iter().enumerate() {
            s = s.with_cluster(&format!("c{k}"), l.clone()).unwrap();
        }
        if self.global {
            s = s.with_global("g").unwrap();
        }
        if let Some(e) = &self.edges {
            let g = SpatialGraph::from_edges(self.d, e).unwrap();
            s = s.with_spatial("sp", &g).unwrap();
            for &k in &self.spatial_interactions {
                s = s.with_interaction(&format!("c{k}"), "sp").unwrap();
            }
        }
        s
    }

    /// Weights excluding δ, in the library's order.
    pub fn n_alpha(&self) -> usize {
        1 + self.clusters.len() + usize::from(self.global) + self.spatial_interactions.len()
    }

    pub fn has_spatial(&self) -> bool {
        self.edges.is_some()
    }

    /// Matrices multiplying (α₀, α₁…, δ) at `beta`.
    pub fn basis(&self, beta: f64) -> Vec<M> {
        let d = self.d;
        let mut out = vec![M::identity(d, d)];
        out.extend(self.clusters.iter().map(|l| cluster_matrix(l)));
        if self.global {
            out.push(M::from_element(d, d, 1.0));
        }
        if let Some(e) = &self.edges {
            let g = dense_car(d, e, beta);
            for &k in &self.spatial_interactions {
                out.push(cluster_matrix(&self.clusters[k]).component_mul(&g));
            }
            out.push(g);
        }
        out
    }

    pub fn assemble(&self, weights: &[f64], beta: f64) -> M {
        let b = self.basis(beta);
        let mut r = M::zeros(self.d, self.d);
        for (w, m) in weights.iter().zip(&b) {
            r += m * *w;
        }
        r
    }

    pub fn params(&self, weights: &[f64], beta: f64) -> ParameterVector {
        ParameterVector::from_weights(weights, self.has_spatial(), self.has_spatial().then_some(beta))
            .unwrap()
    }
}

pub fn random_labels<G: Rng>(d: usize, k: usize, rng: &mut G) -> Vec<usize> {
    loop {
        let l: Vec<usize> = (0..d).map(|_| rng.random_range(0..k)).collect();
        // At least one shared and one split pair so the matrix is neither I nor J.
        let shared = (0..d).any(|i| (0..i).any(|j| l[i] == l[j]));
        let split = l.iter().any(|&x| x != l[0]);
        if shared && split {
            return l;
        }
    }
}

pub fn random_edges<G: Rng>(d: usize, p: f64, rng: &mut G) -> Vec<(usize, usize)> {
    loop {
        let mut e = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                if rng.random::<f64>() < p {
                    e.push((i, j));
                }
            }
        }
        if !e.is_empty() {
            return e;
        }
    }
}

/// Simplex weights with every entry at least `floor`.
pub fn random_weights<G: Rng>(n: usize, floor: f64, rng: &mut G) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = raw.iter().sum();
    let scale = 1.0 - floor * n as f64;
    raw.iter().map(|v| floor + scale * v / s).collect()
}

pub fn random_spec<G: Rng>(rng: &mut G, d: usize) -> ModelSpec {
    let nc = rng.random_range(1..=2);
    let clusters: Vec<Vec<usize>> = (0..nc).map(|_| random_labels(d, rng.random_range(2..=3), rng)).collect();
    let spatial = rng.random::<f64>() < 0.8;
    let edges = spatial.then(|| random_edges(d, 0.4, rng));
    let spatial_interactions = if spatial && rng.random::<f64>() < 0.5 { vec![0] } else { vec![] };
    ModelSpec {
        d,
        clusters,
        global: rng.random::<f64>() < 0.5,
        edges,
        spatial_interactions,
    }
}

/// Draws `t` rows of `MVN(0, R)` by Cholesky.
pub fn draw<G: Rng>(r: &M, t: usize, rng: &mut G) -> M {
    let l = r.clone().cholesky().expect("PD").l();
    let d = r.nrows();
    let z = M::from_fn(t, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    z * l.transpose()
}

/// `l = −log|R| − tr(S R⁻¹)` from an LU decomposition.
pub fn naive_objective(r: &M, s: &M) -> f64 {
    let det = r.clone().lu().determinant();
    let inv = r.clone().try_inverse().unwrap();
    -det.ln() - (s * inv).trace()
}

/// Numerical rank from singular values.
pub fn svd_rank(cols: &[M], tol: f64) -> usize {
    let len = cols[0].len();
    let a = M::from_fn(len, cols.len(), |i, j| cols[j].as_slice()[i]);
    let sv = a.svd(false, false).singular_values;
    let max = sv.max();
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// `max cᵀx s.t. Ax = b, x ≥ 0` by enumerating basic solutions.
pub fn lp_max_by_vertices(c: &DVector<f64>, a: &M, b: &DVector<f64>) -> Option<f64> {
    // Row-reduce to an independent set of rows first.
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let r = keep.len();
    let a2 = M::from_fn(r, a.ncols(), |i, j| svd.singular_values[keep[i]] * vt[(keep[i], j)]);
    let b2 = DVector::from_fn(r, |i, _| u.column(keep[i]).dot(b));
    let mut best: Option<f64> = None;
    for idx in combinations(a.ncols(), r) {
        let basis = M::from_fn(r, r, |i, j| a2[(i, idx[j])]);
        if basis.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(inv) = basis.try_inverse() else { continue };
        let xb = inv * &b2;
        let mut x = DVector::zeros(a.ncols());
        for (k, &j) in idx.iter().enumerate() {
            x[j] = xb[k];
        }
        if x.iter().all(|&v| v > -1e-9) && (a * &x - b).amax() < 1e-8 {
            let v = c.dot(&x);
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, r, &mut Vec::new(), &mut out);
    out
}

/// The identifiability LP for one ordered pair, solved by vertex enumeration.
pub fn identify_pair_oracle(spec: &ModelSpec, beta: f64, beta_prime: f64) -> f64 {
    let u = spec.basis(beta);
    let v = spec.basis(beta_prime);
    let nw = u.len();
    let d = spec.d;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for j in i..d {
            rows.push((0..2 * nw).map(|c| if c < nw { u[c][(i, j)] } else { -v[c - nw][(i, j)] }).collect());
        }
    }
    rows.push((0..2 * nw).map(|c| if c < nw { 1.0 } else { 0.0 }).collect());
    rows.push((0..2 * nw).map(|c| if c < nw { 0.0 } else { 1.0 }).collect());
    let m = rows.len();
    let a = M::from_fn(m, 2 * nw, |i, j| rows[i][j]);
    let mut b = DVector::zeros(m);
    b[m - 2] = 1.0;
    b[m - 1] = 1.0;
    let mut c = DVector::zeros(2 * nw);
    c[nw - 1] = 1.0;
    c[2 * nw - 1] = 1.0;
    lp_max_by_vertices(&c, &a, &b).expect("feasible")
}

/// Central differences over the free coordinates `(α₁…, δ, β)`.
pub fn central_differences<F>(spec: &ModelSpec, free: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParameterVector) -> f64,
{
    let sp = spec.has_spatial();
    let nfw = if sp { free.len() - 1 } else { free.len() };
    let at = |x: &[f64]| {
        let beta = sp.then(|| x[nfw]);
        ParameterVector::from_free_weights(&x[..nfw], sp, beta).unwrap()
    };
    (0..free.len())
        .map(|k| {
            let mut up = free.to_vec();
            let mut dn = free.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&at(&up)) - f(&at(&dn))) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// A random interior `(spec, θ)` with data drawn from a nearby model.
pub struct GradientInstance {
    pub spec: ModelSpec,
    pub theta: ParameterVector,
    pub y: M,
    pub mask: DMatrix<bool>,
}

pub fn gradient_instance<G: Rng>(rng: &mut G, with_missing: bool) -> GradientInstance {
    let d = rng.random_range(4..=8);
    let spec = random_spec(rng, d);
    let nw = spec.n_alpha() + usize::from(spec.has_spatial());
    let w = random_weights(nw, 0.03, rng);
    let beta = rng.random_range(0.1..0.9);
    let theta = spec.params(&w, beta);
    // Data from a different point so the gradient is not near zero.
    let w2 = random_weights(nw, 0.03, rng);
    let r2 = spec.assemble(&w2, rng.random_range(0.1..0.9));
    let t = rng.random_range(3..=25);
    let y = draw(&r2, t, rng);
    let mask = if with_missing {
        loop {
            let m = DMatrix::from_fn(t, d, |_, _| rng.random::<f64>() < 0.75);
            if (0..d).all(|j| (0..t).any(|i| m[(i, j)])) {
                break m;
            }
        }
    } else {
        DMatrix::from_element(t, d, true)
    };
    GradientInstance { spec, theta, y, mask }
}
