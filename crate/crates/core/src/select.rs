//! Exhaustive model selection by BIC and average-effect summaries.
//!
//! Candidates are the component subsets obeying the hierarchy rule (an
//! interaction needs both parents), always with the identity and never the
//! identity alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covstruct::{ComponentKind, CovariateSet, ParameterVector};
use crate::error::{Error, Result};
use crate::init::{pearson_type, qp_init, StandardizedErrors};
use crate::linalg::Matrix;
use crate::mle::{fit_sce_errors, FitOptions};
use crate::shrink::nearest_pd_correlation;

/// Admissible index sets (component indices, identity implicit), in lexicographic order.
pub fn enumerate_models(set: &CovariateSet) -> Vec<Vec<usize>> {
    let comps = set.components();
    let n = comps.len() - 1;
    if n >= 31 {
        // 2³¹ candidates are far beyond exhaustive search anyway.
        return Vec::new();
    }
    let parents: Vec<Option<(usize, usize)>> = comps
        .iter()
        .map(|c| {
            c.parents().map(|(a, b)| {
                let ia = comps.iter().position(|x| x.name() == a).expect("validated parent");
                let ib = comps.iter().position(|x| x.name() == b).expect("validated parent");
                (ia, ib)
            })
        })
        .collect();
    let mut out = Vec::new();
    for bits in 1u32..(1u32 << n) {
        let has = |i: usize| i == 0 || bits & (1 << (i - 1)) != 0;
        let ok = (1..=n).all(|i| match parents[i] {
            Some((a, b)) if has(i) => has(a) && has(b),
            _ => true,
        });
        if ok {
            out.push((1..=n).filter(|&i| has(i)).collect::<Vec<_>>());
        }
    }
    out.sort();
    out
}

/// `−2 log L + (k + G) log T`, with `k` the non-identity components and `G`
/// the spatial shape parameters when the spatial effect is included.
pub fn bic(log_likelihood: f64, n_components: usize, spatial_params: usize, t: usize) -> f64 {
    -2.0 * log_likelihood + (n_components + spatial_params) as f64 * (t as f64).ln()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub index_set: Vec<usize>,
    pub components: Vec<String>,
    pub bic: f64,
    /// BIC minus that of the reference model.
    pub centered_bic: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub theta: Option<ParameterVector>,
    /// Set when the candidate could not be fitted.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Ranked by BIC, ties broken by index set.
    pub candidates: Vec<ModelCandidate>,
    /// Components of the model used for centering.
    pub reference: Vec<String>,
}

fn fit_candidate(
    set: &CovariateSet,
    j: &[usize],
    errors: &StandardizedErrors,
    r_hat: &Matrix,
    grid: &[f64],
    opts: &FitOptions,
) -> ModelCandidate {
    let names: Vec<String> = j.iter().map(|&i| set.components()[i].name().to_string()).collect();
    let attempt = || -> Result<(f64, f64, bool, ParameterVector)> {
        let sub = set.restrict(j)?;
        let init = qp_init(r_hat, &sub, grid)?;
        let fit = fit_sce_errors(errors, &sub, &init.theta0, opts)?;
        let ll = fit.log_likelihood();
        let g = usize::from(sub.has_spatial());
        let b = bic(ll, sub.components().len() - 1, g, fit.n_times);
        Ok((b, ll, fit.converged, fit.theta))
    };
    match attempt() {
        Ok((b, ll, conv, theta)) => ModelCandidate {
            index_set: j.to_vec(),
            components: names,
            bic: b,
            centered_bic: f64::NAN,
            log_likelihood: ll,
            converged: conv,
            theta: Some(theta),
            error: None,
        },
        Err(e) => ModelCandidate {
            index_set: j.to_vec(),
            components: names,
            bic: f64::INFINITY,
            centered_bic: f64::NAN,
            log_likelihood: f64::NEG_INFINITY,
            converged: false,
            theta: None,
            error: Some(e.to_string()),
        },
    }
}

/// Fits every admissible candidate and ranks them by BIC.
///
/// BICs are centered at the model with every main effect and no
/// interactions, or at the best candidate when that model is not admissible.
pub fn select_best(
    errors: &StandardizedErrors,
    set: &CovariateSet,
    beta_grid: &[f64],
    opts: &FitOptions,
) -> Result<SelectionReport> {
    let models = enumerate_models(set);
    if models.is_empty() {
        return Err(Error::InvalidInput("no candidate models to compare".into()));
    }
    let r_hat = nearest_pd_correlation(&pearson_type(errors)?);
    let mut candidates: Vec<ModelCandidate> = models
        .par_iter()
        .map(|j| fit_candidate(set, j, errors, &r_hat, beta_grid, opts))
        .collect();
    candidates.sort_by(|a, b| a.bic.total_cmp(&b.bic).then_with(|| a.index_set.cmp(&b.index_set)));

    let main: Vec<usize> = (1..set.components().len())
        .filter(|&i| set.components()[i].kind() != ComponentKind::Interaction)
        .collect();
    let reference = candidates
        .iter()
        .find(|c| c.index_set == main && c.bic.is_finite())
        .or_else(|| candidates.first())
        .map(|c| (c.bic, c.components.clone()))
        .expect("non-empty");
    for c in &mut candidates {
        c.centered_bic = c.bic - reference.0;
    }
    Ok(SelectionReport {
        candidates,
        reference: reference.1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub name: String,
    pub kind: ComponentKind,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageEffects {
    pub effects: Vec<Effect>,
}

impl AverageEffects {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.effects.iter().find(|e| e.name == name).map(|e| e.value)
    }
}

/// Weights for direct effects; for β-dependent effects the mean fitted
/// contribution over neighbouring pairs (restricted to the mask for interactions).
pub fn average_effects(theta: &ParameterVector, set: &CovariateSet) -> Result<AverageEffects> {
    set.check_params(theta)?;
    let car = set.car_eval(theta.beta, 0)?;
    let adj = set.spatial_cache().map(|c| c.graph().adjacency());
    let weights = theta.weights();
    let mut effects = Vec::new();
    for (w, c) in weights.iter().zip(set.weight_components()).skip(1) {
        let value = if c.is_spatial() {
            let car = car.as_ref().expect("spatial set has a CAR evaluation");
            let adj = adj.as_ref().expect("spatial set has a graph");
            let m = c.evaluate(Some(car))?;
            let mask = c.fixed_matrix();
            let d = set.dim();
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..d {
                for j in 0..d {
                    if i == j || adj[(i, j)] != 1.0 {
                        continue;
                    }
                    if mask.is_some_and(|f| f[(i, j)] != 1.0) {
                        continue;
                    }
                    sum += w * m[(i, j)];
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        } else {
            *w
        };
        effects.push(Effect {
            name: c.name().to_string(),
            kind: c.kind(),
            value,
        });
    }
    Ok(AverageEffects { effects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::car::SpatialGraph;
    use approx::assert_abs_diff_eq;

    fn ab_roster() -> CovariateSet {
        CovariateSet::new(4)
            .unwrap()
            .with_cluster("A", vec![0, 0, 1, 1])
            .unwrap()
            .with_cluster("B", vec![0, 1, 0, 1])
            .unwrap()
            .with_interaction("A", "B")
            .unwrap()
    }

    #[test]
    fn enumerate_with_interaction() {
        let models = enumerate_models(&ab_roster());
        assert_eq!(models, vec![vec![1], vec![1, 2], vec![1, 2, 3], vec![2]]);
        let single = CovariateSet::new(3).unwrap().with_global("g").unwrap();
        assert_eq!(enumerate_models(&single), vec![vec![1]]);
    }

    #[test]
    fn bic_penalties() {
        let a = bic(-10.0, 1, 0, 11);
        let b = bic(-10.0, 2, 0, 11);
        assert_abs_diff_eq!(b - a, 11f64.ln(), epsilon = 1e-12);
        let with_sp = bic(-10.0, 2, 1, 11);
        assert_abs_diff_eq!(with_sp - a, 2.0 * 11f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn triangle_contiguity_effect() {
        let g = SpatialGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let set = CovariateSet::new(3).unwrap().with_spatial("sp", &g).unwrap();
        let th = ParameterVector::new(vec![0.5], Some(0.5), Some(0.5)).unwrap();
        let eff = average_effects(&th, &set).unwrap();
        assert_abs_diff_eq!(eff.get("sp").unwrap(), 0.5 / 3.0, epsilon = 1e-12);
        let th0 = ParameterVector::new(vec![1.0], Some(0.0), Some(0.5)).unwrap();
        assert_eq!(average_effects(&th0, &set).unwrap().get("sp"), Some(0.0));
    }

    #[test]
    fn direct_effects_pass_through() {
        let set = ab_roster();
        let th = ParameterVector::new(vec![0.5, 0.038, 0.2, 0.262], None, None).unwrap();
        let eff = average_effects(&th, &set).unwrap();
        assert_eq!(eff.get("A"), Some(0.038));
        assert_eq!(eff.get("A:B"), Some(0.262));
    }
}
