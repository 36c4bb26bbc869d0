//! Conditional autoregressive (CAR) spatial correlation.
//!
//! For a graph with adjacency `M`, degree matrix `D` and row-normalised
//! transition matrix `M₁ = D⁻¹M`, the CAR covariance is `(I − βM₁)⁻¹D⁻¹`.
//! Normalising its diagonal to one gives the spatial correlation `Γ(β)⁻¹`.
//!
//! `M₁` is similar to the symmetric matrix `A = D^{-1/2} M D^{-1/2}`, so with
//! `A = V Λ Vᵀ` the covariance is
//!
//! ```text
//! C(β) = D^{-1/2} V diag(1 / (1 − βλ)) Vᵀ D^{-1/2}
//! ```
//!
//! and only the one-off eigendecomposition depends on the graph. The first
//! and second β-derivatives follow by differentiating the diagonal factor
//! and the normalisation `Γ_ij = C_ij / sqrt(C_ii C_jj)`.
//!
//! Nodes without neighbours (islands) have a singular degree; their rows of
//! `Γ(β)⁻¹` are identity rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Upper clamp applied to β before evaluation; the lower end is not singular.
pub const BETA_UPPER_CLAMP: f64 = 1.0 - 1e-7;

/// Undirected unweighted graph on `d` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    d: usize,
    edges: Vec<(usize, usize)>,
}

impl SpatialGraph {
    /// Builds a graph from a dense 0/1 adjacency matrix.
    pub fn from_adjacency(adj: &Matrix) -> Result<Self> {
        if !adj.is_square() {
            return Err(Error::Dimension(format!(
                "adjacency must be square, got {}x{}",
                adj.nrows(),
                adj.ncols()
            )));
        }
        let d = adj.nrows();
        let mut edges = Vec::new();
        for i in 0..d {
            if adj[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "adjacency has a self-loop at node {i}"
                )));
            }
            for j in 0..d {
                let v = adj[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "adjacency entry ({i},{j}) = {v} is not 0/1"
                    )));
                }
                if v != adj[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "adjacency is not symmetric at ({i},{j})"
                    )));
                }
                if i < j && v == 1.0 {
                    edges.push((i, j));
                }
            }
        }
        Ok(Self { d, edges })
    }

    /// Builds a graph from an undirected edge list. Duplicate edges are merged.
    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= d || b >= d {
                return Err(Error::InvalidInput(format!(
                    "edge ({a},{b}) out of range for {d} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at node {a}")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Self { d, edges: out })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> Matrix {
        let mut m = Matrix::zeros(self.d, self.d);
        for &(a, b) in &self.edges {
            m[(a, b)] = 1.0;
            m[(b, a)] = 1.0;
        }
        m
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.d];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Restricts the graph to the given nodes, relabelled `0..nodes.len()`.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.d];
        for (k, &n) in nodes.iter().enumerate() {
            pos[n] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| pos[*a] != usize::MAX && pos[*b] != usize::MAX)
            .map(|&(a, b)| (pos[a].min(pos[b]), pos[a].max(pos[b])))
            .collect::<Vec<_>>();
        let mut g = Self {
            d: nodes.len(),
            edges,
        };
        g.edges.sort_unstable();
        g
    }
}

/// Spectral data of one connected component (at least two nodes).
#[derive(Clone, Debug)]
struct Block {
    /// Global node indices.
    nodes: Vec<usize>,
    lambda: Vector,
    /// `D^{-1/2} V`, the right eigenvectors of `M₁` on this block.
    scaled_vecs: Matrix,
    /// Orthonormal eigenvectors `V` of the symmetric similar matrix.
    vecs: Matrix,
    sqrt_deg: Vec<f64>,
}

impl Block {
    /// `W diag(f(λ)) Wᵀ` with `W = D^{-1/2} V`.
    fn spectral_sum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut left = self.scaled_vecs.clone();
        for c in 0..left.ncols() {
            let s = f(self.lambda[c]);
            for r in 0..left.nrows() {
                left[(r, c)] *= s;
            }
        }
        let mut out = &left * self.scaled_vecs.transpose();
        let n = out.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

/// One-off spectral decomposition of the row-normalised adjacency.
///
/// The decomposition is stored per connected component, so cross-component
/// correlations are exactly zero.
#[derive(Clone, Debug)]
pub struct SpectralGraphCache {
    graph: SpatialGraph,
    degrees: Vec<usize>,
    /// Non-island nodes, in increasing order.
    nodes: Vec<usize>,
    islands: Vec<usize>,
    blocks: Vec<Block>,
}

/// `Γ(β)⁻¹` and, on request, its first two β-derivatives.
#[derive(Clone, Debug)]
pub struct CarEval {
    pub beta: f64,
    pub gamma: Matrix,
    pub grad: Option<Matrix>,
    pub hess: Option<Matrix>,
}

pub fn decompose(graph: &SpatialGraph) -> Result<SpectralGraphCache> {
    SpectralGraphCache::new(graph.clone())
}

fn connected_components(d: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); d];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; d];
    let mut out = Vec::new();
    for s in 0..d {
        if seen[s] || adj[s].is_empty() {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            let v = comp[k];
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

impl SpectralGraphCache {
    pub fn new(graph: SpatialGraph) -> Result<Self> {
        let d = graph.dim();
        let degrees = graph.degrees();
        let nodes: Vec<usize> = (0..d).filter(|&i| degrees[i] > 0).collect();
        let islands: Vec<usize> = (0..d).filter(|&i| degrees[i] == 0).collect();
        let mut pos = vec![usize::MAX; d];
        let mut blocks = Vec::new();
        for comp in connected_components(d, graph.edges()) {
            for (k, &i) in comp.iter().enumerate() {
                pos[i] = k;
            }
            let n = comp.len();
            let sqrt_deg: Vec<f64> = comp.iter().map(|&i| (degrees[i] as f64).sqrt()).collect();
            let mut sym = Matrix::zeros(n, n);
            for &(a, b) in graph.edges() {
                if comp.binary_search(&a).is_err() {
                    continue;
                }
                let (pa, pb) = (pos[a], pos[b]);
                let v = 1.0 / (sqrt_deg[pa] * sqrt_deg[pb]);
                sym[(pa, pb)] = v;
                sym[(pb, pa)] = v;
            }
            let eig = sym.symmetric_eigen();
            let lambda = eig.eigenvalues.map(|l| l.clamp(-1.0, 1.0));
            let vecs = eig.eigenvectors;
            let mut scaled_vecs = vecs.clone();
            for r in 0..n {
                let s = 1.0 / sqrt_deg[r];
                for c in 0..n {
                    scaled_vecs[(r, c)] *= s;
                }
            }
            blocks.push(Block {
                nodes: comp,
                lambda,
                scaled_vecs,
                vecs,
                sqrt_deg,
            });
        }
        Ok(Self {
            graph,
            degrees,
            nodes,
            islands,
            blocks,
        })
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn dim(&self) -> usize {
        self.graph.dim()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn islands(&self) -> &[usize] {
        &self.islands
    }

    pub fn non_island_nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Eigenvalues of `M₁` on the non-island nodes.
    pub fn eigenvalues(&self) -> Vector {
        Vector::from_iterator(
            self.nodes.len(),
            self.blocks.iter().flat_map(|b| b.lambda.iter().copied()),
        )
    }

    fn local_positions(&self) -> Vec<usize> {
        let mut pos = vec![usize::MAX; self.dim()];
        for (k, &i) in self.nodes.iter().enumerate() {
            pos[i] = k;
        }
        pos
    }

    /// Right eigenvectors `U` of `M₁`, rows indexed by non-island nodes and
    /// columns ordered like [`Self::eigenvalues`].
    pub fn eigvecs(&self) -> Matrix {
        let pos = self.local_positions();
        let n = self.nodes.len();
        let mut u = Matrix::zeros(n, n);
        let mut col = 0;
        for b in &self.blocks {
            for c in 0..b.nodes.len() {
                for (r, &node) in b.nodes.iter().enumerate() {
                    u[(pos[node], col + c)] = b.scaled_vecs[(r, c)];
                }
            }
            col += b.nodes.len();
        }
        u
    }

    /// `U⁻¹ = Vᵀ D^{1/2}`.
    pub fn eigvecs_inv(&self) -> Matrix {
        let pos = self.local_positions();
        let n = self.nodes.len();
        let mut u = Matrix::zeros(n, n);
        let mut row = 0;
        for b in &self.blocks {
            for c in 0..b.nodes.len() {
                for (r, &node) in b.nodes.iter().enumerate() {
                    u[(row + c, pos[node])] = b.vecs[(r, c)] * b.sqrt_deg[r];
                }
            }
            row += b.nodes.len();
        }
        u
    }

    /// Evaluates `Γ(β)⁻¹` and derivatives up to `order` (0, 1 or 2).
    pub fn evaluate(&self, beta: f64, order: usize) -> Result<CarEval> {
        check_beta(beta)?;
        let b = beta.min(BETA_UPPER_CLAMP);
        let d = self.dim();
        let mut gamma = Matrix::identity(d, d);
        let mut grad = (order >= 1).then(|| Matrix::zeros(d, d));
        let mut hess = (order >= 2).then(|| Matrix::zeros(d, d));
        for block in &self.blocks {
            let n = block.nodes.len();
            let c0 = block.spectral_sum(|l| 1.0 / (1.0 - b * l));
            let c1 = (order >= 1).then(|| block.spectral_sum(|l| l / (1.0 - b * l).powi(2)));
            let c2 = (order >= 2)
                .then(|| block.spectral_sum(|l| 2.0 * l * l / (1.0 - b * l).powi(3)));

            // q_i = C_ii^{-1/2} and its derivatives
            let q: Vec<f64> = (0..n).map(|i| c0[(i, i)].powf(-0.5)).collect();
            let q1: Vec<f64> = match &c1 {
                Some(c1) => (0..n)
                    .map(|i| -0.5 * c0[(i, i)].powf(-1.5) * c1[(i, i)])
                    .collect(),
                None => Vec::new(),
            };
            let q2: Vec<f64> = match (&c1, &c2) {
                (Some(c1), Some(c2)) => (0..n)
                    .map(|i| {
                        let cii = c0[(i, i)];
                        0.75 * cii.powf(-2.5) * c1[(i, i)].powi(2)
                            - 0.5 * cii.powf(-1.5) * c2[(i, i)]
                    })
                    .collect(),
                _ => Vec::new(),
            };

            for a in 0..n {
                let ia = block.nodes[a];
                for bb in 0..n {
                    if a == bb {
                        continue;
                    }
                    let ib = block.nodes[bb];
                    let g0 = c0[(a, bb)];
                    gamma[(ia, ib)] = g0 * q[a] * q[bb];
                    if let (Some(gr), Some(c1)) = (grad.as_mut(), c1.as_ref()) {
                        let g1 = c1[(a, bb)];
                        gr[(ia, ib)] = g1 * q[a] * q[bb] + g0 * (q1[a] * q[bb] + q[a] * q1[bb]);
                    }
                    if let (Some(h), Some(c1), Some(c2)) =
                        (hess.as_mut(), c1.as_ref(), c2.as_ref())
                    {
                        let g1 = c1[(a, bb)];
                        let g2 = c2[(a, bb)];
                        h[(ia, ib)] = g2 * q[a] * q[bb]
                            + 2.0 * g1 * (q1[a] * q[bb] + q[a] * q1[bb])
                            + g0 * (q2[a] * q[bb] + 2.0 * q1[a] * q1[bb] + q[a] * q2[bb]);
                    }
                }
            }
        }
        Ok(CarEval {
            beta,
            gamma,
            grad,
            hess,
        })
    }

    pub fn car_correlation(&self, beta: f64) -> Result<Matrix> {
        Ok(self.evaluate(beta, 0)?.gamma)
    }

    pub fn car_correlation_grad(&self, beta: f64) -> Result<Matrix> {
        Ok(self.evaluate(beta, 1)?.grad.expect("order 1 requested"))
    }

    pub fn car_correlation_hess(&self, beta: f64) -> Result<Matrix> {
        Ok(self.evaluate(beta, 2)?.hess.expect("order 2 requested"))
    }
}

pub fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameters(format!(
            "beta = {beta} must lie strictly inside (0, 1)"
        )));
    }
    Ok(())
}

pub fn car_correlation(cache: &SpectralGraphCache, beta: f64) -> Result<Matrix> {
    cache.car_correlation(beta)
}

pub fn car_correlation_grad(cache: &SpectralGraphCache, beta: f64) -> Result<Matrix> {
    cache.car_correlation_grad(beta)
}

pub fn car_correlation_hess(cache: &SpectralGraphCache, beta: f64) -> Result<Matrix> {
    cache.car_correlation_hess(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path(d: usize) -> SpatialGraph {
        let e: Vec<_> = (0..d - 1).map(|i| (i, i + 1)).collect();
        SpatialGraph::from_edges(d, &e).unwrap()
    }

    fn triangle() -> SpatialGraph {
        SpatialGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn two_node_spectrum() {
        let c = decompose(&path(2)).unwrap();
        let mut l: Vec<f64> = c.eigenvalues().iter().copied().collect::<Vec<_>>();
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(l[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn triangle_spectrum() {
        let c = decompose(&triangle()).unwrap();
        let mut l: Vec<f64> = c.eigenvalues().iter().copied().collect::<Vec<_>>();
        l.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(l[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l[1], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(l[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_graph_is_all_islands() {
        let g = SpatialGraph::from_edges(3, &[]).unwrap();
        let c = decompose(&g).unwrap();
        assert_eq!(c.islands(), &[0, 1, 2]);
        assert_eq!(c.eigenvalues().len(), 0);
        assert_eq!(c.car_correlation(0.5).unwrap(), Matrix::identity(3, 3));
        assert_eq!(c.car_correlation_grad(0.5).unwrap(), Matrix::zeros(3, 3));
        assert_eq!(c.car_correlation_hess(0.5).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn eigvecs_invert() {
        let g = SpatialGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (1, 3)]).unwrap();
        let c = decompose(&g).unwrap();
        let prod = c.eigvecs() * c.eigvecs_inv();
        assert!((prod - Matrix::identity(4, 4)).amax() < 1e-8);
        assert_eq!(c.islands(), &[4]);
    }

    #[test]
    fn two_node_values() {
        let c = decompose(&path(2)).unwrap();
        for &b in &[0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(c.car_correlation(b).unwrap()[(0, 1)], b, epsilon = 1e-12);
            assert_abs_diff_eq!(c.car_correlation_grad(b).unwrap()[(0, 1)], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(c.car_correlation_hess(b).unwrap()[(0, 1)], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn triangle_values() {
        let c = decompose(&triangle()).unwrap();
        let g = c.car_correlation(0.5).unwrap();
        let g1 = c.car_correlation_grad(0.5).unwrap();
        let g2 = c.car_correlation_hess(0.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(g[(i, j)], 1.0 / 3.0, epsilon = 1e-12);
                    assert_abs_diff_eq!(g1[(i, j)], 8.0 / 9.0, epsilon = 1e-10);
                    assert_abs_diff_eq!(g2[(i, j)], 32.0 / 27.0, epsilon = 1e-9);
                } else {
                    assert_eq!(g[(i, j)], 1.0);
                    assert_eq!(g1[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn tiny_beta_is_near_identity() {
        let c = decompose(&path(4)).unwrap();
        let g = c.car_correlation(1e-8).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn beta_outside_domain_rejected() {
        let c = decompose(&path(2)).unwrap();
        assert!(c.car_correlation(0.0).is_err());
        assert!(c.car_correlation(1.0).is_err());
        assert!(c.car_correlation_grad(-0.2).is_err());
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let mut m = Matrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        assert!(SpatialGraph::from_adjacency(&m).is_err());
        let mut m = Matrix::zeros(3, 3);
        m[(1, 1)] = 1.0;
        assert!(SpatialGraph::from_adjacency(&m).is_err());
    }

    #[test]
    fn near_one_correlates_components() {
        let g = SpatialGraph::from_edges(6, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let c = decompose(&g).unwrap();
        let m = c.car_correlation(1.0 - 1e-6).unwrap();
        assert!(m[(0, 2)] > 0.99 && m[(3, 4)] > 0.99);
        assert_eq!(m[(0, 3)], 0.0);
        assert_eq!(m[(5, 0)], 0.0);
    }
}
