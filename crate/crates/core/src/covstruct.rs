//! Correlation-matrix components and model assembly.
//!
//! A model correlation is the convex combination
//! `R = Σ_k α_k F_k + δ Γ(β)⁻¹` where `F_0 = I` and every other `F_k` is a
//! known unit-diagonal PSD matrix. Interactions between a cluster effect and
//! the spatial effect are β-dependent components `F ⊙ Γ(β)⁻¹`.

use std::borrow::Cow;
use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::car::{check_beta, CarEval, SpatialGraph, SpectralGraphCache};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Identity,
    Cluster,
    Global,
    /// A user-supplied unit-diagonal PSD matrix.
    Custom,
    Spatial,
    Interaction,
}

/// A named cluster membership vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCovariate {
    pub name: String,
    pub labels: Vec<usize>,
}

impl ClusterCovariate {
    pub fn new(name: impl Into<String>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Dimension(format!(
                "cluster covariate needs at least 2 variables, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            labels,
        })
    }

    /// One-hot membership matrix `f` (d × number of clusters).
    pub fn membership(&self) -> Matrix {
        let m = self.labels.iter().copied().max().map_or(0, |x| x + 1);
        let mut f = Matrix::zeros(self.labels.len(), m);
        for (i, &l) in self.labels.iter().enumerate() {
            f[(i, l)] = 1.0;
        }
        f
    }

    pub fn component(&self) -> ComponentMatrix {
        let d = self.labels.len();
        let m = Matrix::from_fn(d, d, |i, j| {
            if self.labels[i] == self.labels[j] {
                1.0
            } else {
                0.0
            }
        });
        ComponentMatrix {
            name: self.name.clone(),
            kind: ComponentKind::Cluster,
            matrix: Some(Arc::new(m)),
            parents: None,
            spatial_factor: false,
        }
    }
}

/// One correlation component of the model.
///
/// Spatial components hold no matrix; interactions with the spatial effect
/// hold the non-spatial mask and are multiplied by `Γ(β)⁻¹` on evaluation.
#[derive(Clone, Debug)]
pub struct ComponentMatrix {
    name: String,
    kind: ComponentKind,
    matrix: Option<Arc<Matrix>>,
    parents: Option<(String, String)>,
    spatial_factor: bool,
}

impl ComponentMatrix {
    pub fn identity(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            name: "identity".into(),
            kind: ComponentKind::Identity,
            matrix: Some(Arc::new(Matrix::identity(d, d))),
            parents: None,
            spatial_factor: false,
        })
    }

    pub fn spatial(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ComponentKind::Spatial,
            matrix: None,
            parents: None,
            spatial_factor: true,
        }
    }

    /// Wraps a user-supplied matrix after checking symmetry, unit diagonal, range and PSD.
    pub fn custom(name: impl Into<String>, m: Matrix) -> Result<Self> {
        check_dim(m.nrows())?;
        let m = symmetrize(&m, SYMMETRY_TOL)?;
        validate_correlation_like(&m)?;
        Ok(Self {
            name: name.into(),
            kind: ComponentKind::Custom,
            matrix: Some(Arc::new(m)),
            parents: None,
            spatial_factor: false,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ComponentKind {
        self.kind
    }

    pub fn parents(&self) -> Option<(&str, &str)> {
        self.parents
            .as_ref()
            .map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// True when the component depends on β.
    pub fn is_spatial(&self) -> bool {
        self.spatial_factor
    }

    pub fn is_interaction(&self) -> bool {
        self.kind == ComponentKind::Interaction
    }

    /// Fixed matrix part (the mask for β-dependent interactions, `None` for the spatial effect).
    pub fn fixed_matrix(&self) -> Option<&Matrix> {
        self.matrix.as_deref()
    }

    pub fn dim(&self) -> Option<usize> {
        self.matrix.as_ref().map(|m| m.nrows())
    }

    /// Evaluates the component for a given CAR evaluation.
    pub fn evaluate<'a>(&'a self, car: Option<&CarEval>) -> Result<Cow<'a, Matrix>> {
        if !self.spatial_factor {
            return Ok(Cow::Borrowed(self.matrix.as_deref().expect("fixed component")));
        }
        let car = car.ok_or_else(|| {
            Error::InvalidParameters(format!("component {} needs a spatial evaluation", self.name))
        })?;
        Ok(Cow::Owned(self.masked(&car.gamma)))
    }

    /// β-derivative of the component, `None` when it does not depend on β.
    pub fn derivative(&self, car: &CarEval, order: usize) -> Option<Matrix> {
        if !self.spatial_factor {
            return None;
        }
        let m = match order {
            1 => car.grad.as_ref()?,
            2 => car.hess.as_ref()?,
            _ => return None,
        };
        Some(self.masked(m))
    }

    fn masked(&self, m: &Matrix) -> Matrix {
        match &self.matrix {
            None => m.clone(),
            Some(mask) => m.component_mul(mask),
        }
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Dimension(format!("dimension must be at least 2, got {d}")));
    }
    Ok(())
}

fn validate_correlation_like(m: &Matrix) -> Result<()> {
    let d = m.nrows();
    for i in 0..d {
        if (m[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "component diagonal entry {i} is {} (expected 1)",
                m[(i, i)]
            )));
        }
    }
    if m.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("component entries must lie in [-1, 1]".into()));
    }
    let lmin = min_eigenvalue(m);
    if lmin < -PSD_TOL {
        return Err(Error::InvalidInput(format!(
            "component is not PSD (smallest eigenvalue {lmin:e})"
        )));
    }
    Ok(())
}

pub fn build_cluster_matrix(labels: &[usize]) -> Result<ComponentMatrix> {
    if labels.is_empty() {
        return Err(Error::Dimension("empty label vector".into()));
    }
    Ok(ClusterCovariate::new("cluster", labels.to_vec())?.component())
}

pub fn build_global_matrix(d: usize) -> Result<ComponentMatrix> {
    check_dim(d)?;
    Ok(ComponentMatrix {
        name: "global".into(),
        kind: ComponentKind::Global,
        matrix: Some(Arc::new(Matrix::from_element(d, d, 1.0))),
        parents: None,
        spatial_factor: false,
    })
}

/// Entrywise product of two components. At most one may depend on β.
pub fn hadamard_interaction(a: &ComponentMatrix, b: &ComponentMatrix) -> Result<ComponentMatrix> {
    if a.spatial_factor && b.spatial_factor {
        return Err(Error::InvalidInput(format!(
            "interaction {}x{} has two spatial parents",
            a.name, b.name
        )));
    }
    if let (Some(da), Some(db)) = (a.dim(), b.dim()) {
        if da != db {
            return Err(Error::Dimension(format!(
                "interaction parents have dimensions {da} and {db}"
            )));
        }
    }
    let matrix = match (&a.matrix, &b.matrix) {
        (Some(ma), Some(mb)) => Some(Arc::new(ma.component_mul(mb))),
        (Some(m), None) | (None, Some(m)) => Some(m.clone()),
        (None, None) => unreachable!("two spatial parents rejected above"),
    };
    Ok(ComponentMatrix {
        name: format!("{}:{}", a.name, b.name),
        kind: ComponentKind::Interaction,
        matrix,
        parents: Some((a.name.clone(), b.name.clone())),
        spatial_factor: a.spatial_factor || b.spatial_factor,
    })
}

/// Ordered roster of components; component 0 is always the identity.
#[derive(Clone, Debug)]
pub struct CovariateSet {
    d: usize,
    components: Vec<ComponentMatrix>,
    spatial: Option<Arc<SpectralGraphCache>>,
}

impl CovariateSet {
    /// A set containing only the identity.
    pub fn new(d: usize) -> Result<Self> {
        Ok(Self {
            d,
            components: vec![ComponentMatrix::identity(d)?],
            spatial: None,
        })
    }

    pub fn with_component(mut self, c: ComponentMatrix) -> Result<Self> {
        self.push(c)?;
        Ok(self)
    }

    pub fn with_cluster(self, name: &str, labels: Vec<usize>) -> Result<Self> {
        let c = ClusterCovariate::new(name, labels)?.component();
        self.with_component(c)
    }

    pub fn with_global(self, name: &str) -> Result<Self> {
        let c = build_global_matrix(self.d)?.with_name(name);
        self.with_component(c)
    }

    /// Adds the spatial effect, decomposing the graph once.
    pub fn with_spatial(self, name: &str, graph: &SpatialGraph) -> Result<Self> {
        let cache = Arc::new(SpectralGraphCache::new(graph.clone())?);
        self.with_spatial_cache(name, cache)
    }

    pub fn with_spatial_cache(mut self, name: &str, cache: Arc<SpectralGraphCache>) -> Result<Self> {
        if self.spatial.is_some() {
            return Err(Error::InvalidInput("only one spatial effect is supported".into()));
        }
        if cache.dim() != self.d {
            return Err(Error::Dimension(format!(
                "spatial graph has {} nodes, expected {}",
                cache.dim(),
                self.d
            )));
        }
        self.spatial = Some(cache);
        self.push(ComponentMatrix::spatial(name))?;
        Ok(self)
    }

    /// Adds the Hadamard interaction of two existing components.
    pub fn with_interaction(self, a: &str, b: &str) -> Result<Self> {
        let ca = self.component_by_name(a)?.clone();
        let cb = self.component_by_name(b)?.clone();
        let c = hadamard_interaction(&ca, &cb)?;
        self.with_component(c)
    }

    fn push(&mut self, c: ComponentMatrix) -> Result<()> {
        if c.kind == ComponentKind::Identity {
            return Err(Error::InvalidInput("identity component is implicit".into()));
        }
        if let Some(dim) = c.dim() {
            if dim != self.d {
                return Err(Error::Dimension(format!(
                    "component {} has dimension {dim}, expected {}",
                    c.name, self.d
                )));
            }
        }
        if self.components.iter().any(|x| x.name == c.name) {
            return Err(Error::InvalidInput(format!("duplicate component name {}", c.name)));
        }
        if c.spatial_factor && self.spatial.is_none() {
            return Err(Error::InvalidInput(format!(
                "component {} needs a spatial effect in the set",
                c.name
            )));
        }
        if let Some((pa, pb)) = c.parents() {
            for p in [pa, pb] {
                if !self.components.iter().any(|x| x.name == p) {
                    return Err(Error::InvalidInput(format!(
                        "interaction {} references missing parent {p}",
                        c.name
                    )));
                }
            }
        }
        self.components.push(c);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[ComponentMatrix] {
        &self.components
    }

    pub fn component_by_name(&self, name: &str) -> Result<&ComponentMatrix> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown component {name}")))
    }

    pub fn spatial_cache(&self) -> Option<&Arc<SpectralGraphCache>> {
        self.spatial.as_ref()
    }

    pub fn has_spatial(&self) -> bool {
        self.spatial.is_some()
    }

    /// Component indices carrying an α weight (everything but the spatial effect), in order.
    pub fn linear_indices(&self) -> Vec<usize> {
        (0..self.components.len())
            .filter(|&i| self.components[i].kind != ComponentKind::Spatial)
            .collect()
    }

    pub fn spatial_index(&self) -> Option<usize> {
        self.components
            .iter()
            .position(|c| c.kind == ComponentKind::Spatial)
    }

    /// Number of α weights, including the identity.
    pub fn n_alpha(&self) -> usize {
        self.linear_indices().len()
    }

    /// Number of simplex weights (α and δ).
    pub fn n_weights(&self) -> usize {
        self.n_alpha() + usize::from(self.has_spatial())
    }

    /// Number of free coordinates: weights minus the identity, plus β.
    pub fn n_free(&self) -> usize {
        self.n_weights() - 1 + usize::from(self.has_spatial())
    }

    /// Names of the free coordinates, in order (α₁…α_K, δ, β).
    pub fn free_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .weight_components()
            .skip(1)
            .map(|c| c.name.clone())
            .collect();
        if self.has_spatial() {
            names.push("beta".into());
        }
        names
    }

    /// Components in weight order (α components then the spatial effect).
    pub fn weight_components(&self) -> impl Iterator<Item = &ComponentMatrix> + '_ {
        let lin = self.linear_indices();
        let sp = self.spatial_index();
        lin.into_iter()
            .chain(sp)
            .map(move |i| &self.components[i])
    }

    /// Keeps the identity plus the given component indices.
    ///
    /// Fails if an interaction is kept without both parents, or a β-dependent
    /// interaction without the spatial effect.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let keep: HashSet<usize> = keep.iter().copied().collect();
        if let Some(&bad) = keep.iter().find(|&&i| i == 0 || i >= self.components.len()) {
            return Err(Error::InvalidInput(format!("invalid component index {bad}")));
        }
        let mut out = Self::new(self.d)?;
        for (i, c) in self.components.iter().enumerate().skip(1) {
            if !keep.contains(&i) {
                continue;
            }
            if c.kind == ComponentKind::Spatial {
                out.spatial = self.spatial.clone();
            }
            out.push(c.clone())?;
        }
        Ok(out)
    }

    /// Evaluates the CAR matrix (and derivatives up to `order`) if the set has a spatial effect.
    pub fn car_eval(&self, beta: Option<f64>, order: usize) -> Result<Option<CarEval>> {
        match (&self.spatial, beta) {
            (Some(cache), Some(b)) => Ok(Some(cache.evaluate(b, order)?)),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::InvalidParameters(
                "beta is required when a spatial effect is present".into(),
            )),
            (None, Some(_)) => Err(Error::InvalidParameters(
                "beta given but the set has no spatial effect".into(),
            )),
        }
    }

    /// Component matrices in weight order at the given CAR evaluation.
    pub fn basis<'a>(&'a self, car: Option<&CarEval>) -> Result<Vec<Cow<'a, Matrix>>> {
        self.weight_components().map(|c| c.evaluate(car)).collect()
    }

    pub fn check_params(&self, params: &ParameterVector) -> Result<()> {
        if params.alpha.len() != self.n_alpha() {
            return Err(Error::InvalidParameters(format!(
                "expected {} alpha weights, got {}",
                self.n_alpha(),
                params.alpha.len()
            )));
        }
        if params.delta.is_some() != self.has_spatial() || params.beta.is_some() != self.has_spatial()
        {
            return Err(Error::InvalidParameters(
                "delta/beta must be present exactly when the set has a spatial effect".into(),
            ));
        }
        Ok(())
    }
}

/// Simplex weights `(α₀…α_K, δ)` and the spatial dependence β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub alpha: Vec<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
}

impl ParameterVector {
    pub fn new(alpha: Vec<f64>, delta: Option<f64>, beta: Option<f64>) -> Result<Self> {
        let p = Self { alpha, delta, beta };
        p.validate()?;
        Ok(p)
    }

    /// Builds a vector from the free weights, taking α₀ as the residual.
    pub fn from_free_weights(free: &[f64], has_spatial: bool, beta: Option<f64>) -> Result<Self> {
        let a0 = 1.0 - free.iter().sum::<f64>();
        let mut w = Vec::with_capacity(free.len() + 1);
        w.push(a0);
        w.extend_from_slice(free);
        Self::from_weights(&w, has_spatial, beta)
    }

    /// Splits a full weight vector (α…, δ) into a parameter vector.
    pub fn from_weights(w: &[f64], has_spatial: bool, beta: Option<f64>) -> Result<Self> {
        let (alpha, delta) = if has_spatial {
            let (a, d) = w.split_at(w.len() - 1);
            (a.to_vec(), Some(d[0]))
        } else {
            (w.to_vec(), None)
        };
        Self::new(alpha, delta, beta)
    }

    fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::InvalidParameters("at least the identity weight is required".into()));
        }
        let w = self.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidParameters(format!("weights must be nonnegative: {w:?}")));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameters(format!("weights sum to {s}, expected 1")));
        }
        if self.delta.is_some() != self.beta.is_some() {
            return Err(Error::InvalidParameters(
                "delta and beta must be given together".into(),
            ));
        }
        if let Some(b) = self.beta {
            check_beta(b)?;
        }
        Ok(())
    }

    /// All simplex weights in order (α…, δ).
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.alpha.clone();
        w.extend(self.delta);
        w
    }

    /// Free coordinates (α₁…α_K, δ, β).
    pub fn free(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.alpha[1..].to_vec();
        f.extend(self.delta);
        f.extend(self.beta);
        f
    }

    pub fn is_interior(&self, floor: f64) -> bool {
        self.weights().iter().all(|&w| w >= floor)
    }
}

/// `R = Σ_k α_k F_k + δ Γ(β)⁻¹`.
pub fn assemble_correlation(params: &ParameterVector, set: &CovariateSet) -> Result<Matrix> {
    set.check_params(params)?;
    let car = set.car_eval(params.beta, 0)?;
    assemble_with(params, set, car.as_ref())
}

pub(crate) fn assemble_with(
    params: &ParameterVector,
    set: &CovariateSet,
    car: Option<&CarEval>,
) -> Result<Matrix> {
    let d = set.dim();
    let mut r = Matrix::zeros(d, d);
    for (w, b) in params.weights().iter().zip(set.basis(car)?) {
        r.zip_apply(b.as_ref(), |x, y| *x += w * y);
    }
    for i in 0..d {
        r[(i, i)] = 1.0;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cluster_matrix_blocks() {
        let c = build_cluster_matrix(&[0, 0, 1]).unwrap();
        let m = c.fixed_matrix().unwrap();
        let expected = Matrix::from_row_slice(3, 3, &[1., 1., 0., 1., 1., 0., 0., 0., 1.]);
        assert_eq!(*m, expected);
        let c = build_cluster_matrix(&[0, 1, 2]).unwrap();
        assert_eq!(*c.fixed_matrix().unwrap(), Matrix::identity(3, 3));
        let c = build_cluster_matrix(&[0, 0, 0, 0]).unwrap();
        let m = c.fixed_matrix().unwrap();
        assert_eq!(*m, Matrix::from_element(4, 4, 1.0));
        assert!(min_eigenvalue(m) >= -1e-8);
        assert!(build_cluster_matrix(&[]).is_err());
    }

    #[test]
    fn cluster_is_outer_product_of_membership() {
        let cov = ClusterCovariate::new("a", vec![2, 0, 2, 1, 0]).unwrap();
        let f = cov.membership();
        assert_eq!(&f * f.transpose(), *cov.component().fixed_matrix().unwrap());
    }

    #[test]
    fn global_matrix() {
        assert_eq!(
            *build_global_matrix(2).unwrap().fixed_matrix().unwrap(),
            Matrix::from_element(2, 2, 1.0)
        );
        let g = build_global_matrix(195).unwrap();
        let m = g.fixed_matrix().unwrap();
        assert_eq!(m.rank(1e-8), 1);
        assert!(build_global_matrix(1).is_err());
    }

    #[test]
    fn hadamard_examples() {
        let ones = build_global_matrix(2).unwrap();
        let eye = build_cluster_matrix(&[0, 1]).unwrap();
        let h = hadamard_interaction(&ones, &eye).unwrap();
        assert_eq!(*h.fixed_matrix().unwrap(), Matrix::identity(2, 2));
        assert_eq!(h.parents(), Some(("global", "cluster")));

        let f = build_cluster_matrix(&[0, 1, 0, 1, 1]).unwrap();
        let ff = hadamard_interaction(&f, &f.clone().with_name("other")).unwrap();
        assert_eq!(ff.fixed_matrix(), f.fixed_matrix());

        let three = build_global_matrix(3).unwrap();
        assert!(hadamard_interaction(&three, &ones).is_err());
        let s = ComponentMatrix::spatial("s");
        assert!(hadamard_interaction(&s, &s.clone().with_name("t")).is_err());
    }

    #[test]
    fn hadamard_with_spatial_masks_gamma() {
        let g = SpatialGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let set = CovariateSet::new(3)
            .unwrap()
            .with_cluster("c", vec![0, 0, 1])
            .unwrap()
            .with_spatial("s", &g)
            .unwrap()
            .with_interaction("c", "s")
            .unwrap();
        let car = set.car_eval(Some(0.5), 0).unwrap().unwrap();
        let inter = set.component_by_name("c:s").unwrap();
        let m = inter.evaluate(Some(&car)).unwrap();
        // oracle: Γ(0.5)⁻¹ masked by the cluster matrix
        let gamma = &car.gamma;
        assert!(gamma[(0, 2)].abs() > 1e-3);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!(m[(i, j)], 1.0);
                } else if (i, j) == (0, 1) || (i, j) == (1, 0) {
                    assert_abs_diff_eq!(m[(i, j)], gamma[(i, j)], epsilon = 0.0);
                    assert!(m[(i, j)] > 0.0);
                } else {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn assemble_examples() {
        let set = CovariateSet::new(3).unwrap();
        let p = ParameterVector::new(vec![1.0], None, None).unwrap();
        assert_eq!(assemble_correlation(&p, &set).unwrap(), Matrix::identity(3, 3));

        let set = CovariateSet::new(2).unwrap().with_cluster("a", vec![0, 0]).unwrap();
        let p = ParameterVector::new(vec![0.7, 0.3], None, None).unwrap();
        let r = assemble_correlation(&p, &set).unwrap();
        assert_abs_diff_eq!(r[(0, 1)], 0.3, epsilon = 1e-15);
        assert_eq!(r[(0, 0)], 1.0);

        let g = SpatialGraph::from_edges(2, &[(0, 1)]).unwrap();
        let set = CovariateSet::new(2).unwrap().with_spatial("s", &g).unwrap();
        let p = ParameterVector::new(vec![0.8], Some(0.2), Some(0.5)).unwrap();
        let r = assemble_correlation(&p, &set).unwrap();
        assert_abs_diff_eq!(r[(0, 1)], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn assemble_rejects_mismatch() {
        let set = CovariateSet::new(2).unwrap().with_cluster("a", vec![0, 0]).unwrap();
        let p = ParameterVector::new(vec![1.0], None, None).unwrap();
        assert!(assemble_correlation(&p, &set).is_err());
        assert!(ParameterVector::new(vec![0.5, 0.6], None, None).is_err());
        assert!(ParameterVector::new(vec![0.5], Some(0.5), Some(1.0)).is_err());
        let g = SpatialGraph::from_edges(2, &[(0, 1)]).unwrap();
        let set = CovariateSet::new(2).unwrap().with_spatial("s", &g).unwrap();
        let p = ParameterVector::new(vec![1.0], None, None).unwrap();
        assert!(assemble_correlation(&p, &set).is_err());
    }

    #[test]
    fn set_validation() {
        let set = CovariateSet::new(3).unwrap();
        assert!(set.clone().with_interaction("a", "b").is_err());
        let set = set.with_cluster("a", vec![0, 0, 1]).unwrap();
        assert!(set.clone().with_cluster("a", vec![0, 1, 1]).is_err());
        assert!(set.clone().with_cluster("b", vec![0, 1]).is_err());
        let set = set
            .with_cluster("b", vec![0, 1, 1])
            .unwrap()
            .with_interaction("a", "b")
            .unwrap();
        // interaction without a parent
        assert!(set.restrict(&[1, 3]).is_err());
        assert!(set.restrict(&[1, 2, 3]).is_ok());
    }

    fn random_set(seed: u64) -> (CovariateSet, usize) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(3..9);
        let labels_a: Vec<usize> = (0..d).map(|_| rng.random_range(0..3)).collect();
        let labels_b: Vec<usize> = (0..d).map(|_| rng.random_range(0..2)).collect();
        let mut edges = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                if rng.random_bool(0.4) {
                    edges.push((i, j));
                }
            }
        }
        let g = SpatialGraph::from_edges(d, &edges).unwrap();
        let set = CovariateSet::new(d)
            .unwrap()
            .with_cluster("a", labels_a)
            .unwrap()
            .with_cluster("b", labels_b)
            .unwrap()
            .with_spatial("s", &g)
            .unwrap()
            .with_interaction("a", "s")
            .unwrap();
        (set, d)
    }

    fn simplex_point(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn assembled_is_unit_diagonal_and_pd(seed in 0u64..1000, raw in prop::collection::vec(0.05f64..1.0, 5), beta in 0.01f64..0.99) {
            let (set, d) = random_set(seed);
            let w = simplex_point(&raw);
            let p = ParameterVector::from_weights(&w, true, Some(beta)).unwrap();
            let r = assemble_correlation(&p, &set).unwrap();
            for i in 0..d {
                prop_assert!((r[(i, i)] - 1.0).abs() < 1e-10);
            }
            prop_assert!((&r - r.transpose()).amax() < 1e-12);
            prop_assert!(min_eigenvalue(&r) >= p.alpha[0] - 1e-8);
        }

        #[test]
        fn assembly_is_linear_in_weights(seed in 0u64..1000, r1 in prop::collection::vec(0.05f64..1.0, 5), r2 in prop::collection::vec(0.05f64..1.0, 5), beta in 0.01f64..0.99) {
            let (set, _) = random_set(seed);
            let w1 = simplex_point(&r1);
            let w2 = simplex_point(&r2);
            let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 0.5 * (a + b)).collect();
            let p1 = ParameterVector::from_weights(&w1, true, Some(beta)).unwrap();
            let p2 = ParameterVector::from_weights(&w2, true, Some(beta)).unwrap();
            let pm = ParameterVector::from_weights(&mid, true, Some(beta)).unwrap();
            let lhs = assemble_correlation(&p1, &set).unwrap() + assemble_correlation(&p2, &set).unwrap();
            let rhs = assemble_correlation(&pm, &set).unwrap() * 2.0;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn hadamard_of_clusters_is_psd(la in prop::collection::vec(0usize..4, 6), lb in prop::collection::vec(0usize..3, 6)) {
            let a = ClusterCovariate::new("a", la).unwrap().component();
            let b = ClusterCovariate::new("b", lb).unwrap().component();
            let h = hadamard_interaction(&a, &b).unwrap();
            prop_assert!(min_eigenvalue(h.fixed_matrix().unwrap()) >= -1e-8);
        }
    }
}
