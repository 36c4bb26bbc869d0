//! Maximum-likelihood fit of the structured correlation (the SCE).
//!
//! The objective is `l = −log|R| − tr(S_T R⁻¹)`; with missing entries each
//! time point contributes the Gaussian term of its observed sub-vector, and
//! time points sharing an observation pattern are pooled. For a free
//! coordinate θ with `D = ∂R/∂θ`,
//!
//! ```text
//! ∂l/∂θ = −⟨D, W⟩,   W = R⁻¹ − R⁻¹ S_T R⁻¹
//! ```
//!
//! (summed over patterns with the pattern inverses scattered into `d × d`).
//! Free coordinates are `(α₁…α_K, δ, β)`; α₀ is the residual weight. BFGS
//! runs on `x_k = log(w_k/α₀)` and `x_β = logit β`.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covstruct::{assemble_with, CovariateSet, ParameterVector};
use crate::error::{Error, Result};
use crate::init::StandardizedErrors;
use crate::linalg::{frob_dot, normal_quantile, spd_factor, submatrix, Mask, Matrix};
use crate::solvers::bfgs::{self, BfgsOptions};

/// Cap on the unconstrained coordinates.
pub const COORD_CAP: f64 = 15.0;

/// Observations with their location and scale.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: Matrix,
    pub mask: Mask,
    pub mu_hat: Matrix,
    pub sigma_hat: Matrix,
}

impl Dataset {
    /// Known per-entry means and scales.
    pub fn known(y: Matrix, mask: Mask, mu_hat: Matrix, sigma_hat: Matrix) -> Result<Self> {
        let shape = y.shape();
        if mask.shape() != shape || mu_hat.shape() != shape || sigma_hat.shape() != shape {
            return Err(Error::Dimension(format!(
                "data {:?}, mask {:?}, mu {:?} and sigma {:?} must agree",
                shape,
                mask.shape(),
                mu_hat.shape(),
                sigma_hat.shape()
            )));
        }
        for t in 0..shape.0 {
            for j in 0..shape.1 {
                if !mask[(t, j)] {
                    continue;
                }
                if !y[(t, j)].is_finite() || !mu_hat[(t, j)].is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite value at ({t},{j})")));
                }
                if !(sigma_hat[(t, j)] > 0.0) || !sigma_hat[(t, j)].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "scale at ({t},{j}) must be positive, got {}",
                        sigma_hat[(t, j)]
                    )));
                }
            }
        }
        Ok(Self {
            y,
            mask,
            mu_hat,
            sigma_hat,
        })
    }

    /// Per-variable empirical mean and standard deviation (divisor `n − 1`), pooled over time.
    pub fn unknown(y: Matrix, mask: Mask) -> Result<Self> {
        let (t_len, d) = y.shape();
        if mask.shape() != (t_len, d) {
            return Err(Error::Dimension("data and mask shapes differ".into()));
        }
        let mut mu = Matrix::zeros(t_len, d);
        let mut sigma = Matrix::from_element(t_len, d, 1.0);
        for j in 0..d {
            let obs: Vec<f64> = (0..t_len).filter(|&t| mask[(t, j)]).map(|t| y[(t, j)]).collect();
            if obs.is_empty() {
                continue;
            }
            if obs.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "variable {j} has a single observation; its scale cannot be estimated"
                )));
            }
            let n = obs.len() as f64;
            let m = obs.iter().sum::<f64>() / n;
            let var = obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            if !(var > 0.0) {
                return Err(Error::InvalidInput(format!("variable {j} has zero variance")));
            }
            mu.column_mut(j).fill(m);
            sigma.column_mut(j).fill(var.sqrt());
        }
        Self::known(y, mask, mu, sigma)
    }

    pub fn complete_mask(t: usize, d: usize) -> Mask {
        Mask::from_element(t, d, true)
    }

    pub fn n_times(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn errors(&self) -> Result<StandardizedErrors> {
        let e = Matrix::from_fn(self.y.nrows(), self.y.ncols(), |t, j| {
            if self.mask[(t, j)] {
                (self.y[(t, j)] - self.mu_hat[(t, j)]) / self.sigma_hat[(t, j)]
            } else {
                0.0
            }
        });
        StandardizedErrors::new(e, self.mask.clone())
    }
}

struct Pattern {
    obs: Vec<usize>,
    count: f64,
    /// `Σ_t ε_O ε_Oᵀ` over the times in the pattern.
    scatter: Matrix,
}

/// Sufficient statistics of the (marginalised) Gaussian likelihood.
pub(crate) struct Likelihood {
    d: usize,
    t: f64,
    patterns: Vec<Pattern>,
    n_obs: usize,
}

impl Likelihood {
    /// A single complete pattern with second moment `S_T` and unit sample size.
    pub(crate) fn from_moment(s: &Matrix) -> Self {
        let d = s.nrows();
        Self {
            d,
            t: 1.0,
            patterns: vec![Pattern {
                obs: (0..d).collect(),
                count: 1.0,
                scatter: s.clone(),
            }],
            n_obs: d,
        }
    }

    pub(crate) fn from_errors(e: &StandardizedErrors) -> Result<Self> {
        let (t_len, d) = (e.n_times(), e.dim());
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut patterns: Vec<Pattern> = Vec::new();
        let mut n_obs = 0;
        for t in 0..t_len {
            let obs: Vec<usize> = (0..d).filter(|&j| e.mask()[(t, j)]).collect();
            if obs.is_empty() {
                continue;
            }
            n_obs += obs.len();
            let v: Vec<f64> = obs.iter().map(|&j| e.values()[(t, j)]).collect();
            let k = *index.entry(obs.clone()).or_insert_with(|| {
                patterns.push(Pattern {
                    scatter: Matrix::zeros(obs.len(), obs.len()),
                    obs: obs.clone(),
                    count: 0.0,
                });
                patterns.len() - 1
            });
            let p = &mut patterns[k];
            p.count += 1.0;
            for a in 0..v.len() {
                for b in 0..v.len() {
                    p.scatter[(a, b)] += v[a] * v[b];
                }
            }
        }
        if patterns.is_empty() {
            return Err(Error::InvalidInput("no observed entries at any time point".into()));
        }
        Ok(Self {
            d,
            t: t_len as f64,
            patterns,
            n_obs,
        })
    }

    fn is_complete(&self) -> bool {
        self.patterns.len() == 1 && self.patterns[0].obs.len() == self.d
    }

    /// `l` and, on request, the weight matrix `W` with `∂l = −⟨∂R, W⟩`.
    fn eval(&self, r: &Matrix, want_w: bool) -> Result<(f64, Option<Matrix>)> {
        let mut l = 0.0;
        let mut w = want_w.then(|| Matrix::zeros(self.d, self.d));
        for p in &self.patterns {
            let sub;
            let r_oo = if p.obs.len() == self.d {
                r
            } else {
                sub = submatrix(r, &p.obs);
                &sub
            };
            let f = spd_factor(r_oo)?;
            l += -p.count * f.log_det - frob_dot(&p.scatter, &f.inverse);
            if let Some(w) = w.as_mut() {
                let local = &f.inverse * p.count - &f.inverse * &p.scatter * &f.inverse;
                for (a, &i) in p.obs.iter().enumerate() {
                    for (b, &j) in p.obs.iter().enumerate() {
                        w[(i, j)] += local[(a, b)];
                    }
                }
            }
        }
        let scale = 1.0 / self.t;
        Ok((l * scale, w.map(|w| w * scale)))
    }

    /// `½ Σ_p (n_p/T) tr(R_OO⁻¹ D_i R_OO⁻¹ D_j)`.
    fn fisher(&self, r: &Matrix, derivs: &[Matrix]) -> Result<Matrix> {
        let n = derivs.len();
        let mut info = Matrix::zeros(n, n);
        for p in &self.patterns {
            let full = p.obs.len() == self.d;
            let r_oo = if full { r.clone() } else { submatrix(r, &p.obs) };
            let inv = spd_factor(&r_oo)?.inverse;
            let prods: Vec<Matrix> = derivs
                .iter()
                .map(|dm| {
                    let d_oo = if full { dm.clone() } else { submatrix(dm, &p.obs) };
                    &inv * d_oo
                })
                .collect();
            let weight = 0.5 * p.count / self.t;
            for i in 0..n {
                for j in i..n {
                    // tr(A_i A_j) = Σ A_i[a,b] A_j[b,a].
                    let v = frob_dot(&prods[i], &prods[j].transpose()) * weight;
                    info[(i, j)] += v;
                    if i != j {
                        info[(j, i)] += v;
                    }
                }
            }
        }
        Ok(info)
    }
}

/// `∂R/∂θ` for each free coordinate `(α₁…α_K, δ, β)`.
pub fn free_derivatives(theta: &ParameterVector, set: &CovariateSet) -> Result<Vec<Matrix>> {
    set.check_params(theta)?;
    let car = set.car_eval(theta.beta, 1)?;
    derivatives_with(theta, set, car.as_ref())
}

fn derivatives_with(
    theta: &ParameterVector,
    set: &CovariateSet,
    car: Option<&crate::car::CarEval>,
) -> Result<Vec<Matrix>> {
    let d = set.dim();
    let eye = Matrix::identity(d, d);
    let basis = set.basis(car)?;
    let mut out: Vec<Matrix> = basis.iter().skip(1).map(|b| b.as_ref() - &eye).collect();
    if let Some(car) = car {
        let w = theta.weights();
        let mut db = Matrix::zeros(d, d);
        for (wk, c) in w.iter().zip(set.weight_components()) {
            if let Some(g) = c.derivative(car, 1) {
                db += g * *wk;
            }
        }
        out.push(db);
    }
    Ok(out)
}

/// Value and free-coordinate gradient of `l`.
pub(crate) fn value_and_gradient(
    theta: &ParameterVector,
    set: &CovariateSet,
    lik: &Likelihood,
) -> Result<(f64, Vec<f64>)> {
    set.check_params(theta)?;
    let car = set.car_eval(theta.beta, 1)?;
    let r = assemble_with(theta, set, car.as_ref())?;
    let (l, w) = lik.eval(&r, true)?;
    let w = w.expect("requested");
    let trace_w = w.trace();
    let basis = set.basis(car.as_ref())?;
    let mut g: Vec<f64> = basis
        .iter()
        .skip(1)
        .map(|b| -(frob_dot(b, &w) - trace_w))
        .collect();
    if let Some(car) = car.as_ref() {
        let mut gb = 0.0;
        for (wk, c) in theta.weights().iter().zip(set.weight_components()) {
            if let Some(dm) = c.derivative(car, 1) {
                gb -= wk * frob_dot(&dm, &w);
            }
        }
        g.push(gb);
    }
    Ok((l, g))
}

/// `l = −log|R| − tr(S_T R⁻¹)`.
pub fn objective_l(theta: &ParameterVector, set: &CovariateSet, s_t: &Matrix) -> Result<f64> {
    check_moment(set, s_t)?;
    let r = crate::covstruct::assemble_correlation(theta, set)?;
    Ok(Likelihood::from_moment(s_t).eval(&r, false)?.0)
}

/// Gradient of [`objective_l`] over the free coordinates.
pub fn gradient_l(theta: &ParameterVector, set: &CovariateSet, s_t: &Matrix) -> Result<Vec<f64>> {
    check_moment(set, s_t)?;
    Ok(value_and_gradient(theta, set, &Likelihood::from_moment(s_t))?.1)
}

fn check_moment(set: &CovariateSet, s_t: &Matrix) -> Result<()> {
    let d = set.dim();
    if s_t.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "second moment is {:?}, model dimension is {d}",
            s_t.shape()
        )));
    }
    Ok(())
}

/// Marginalised objective over observed sub-vectors, with its gradient.
pub fn objective_l_missing(
    theta: &ParameterVector,
    set: &CovariateSet,
    errors: &StandardizedErrors,
) -> Result<(f64, Vec<f64>)> {
    if errors.dim() != set.dim() {
        return Err(Error::Dimension(format!(
            "errors have {} variables, model has {}",
            errors.dim(),
            set.dim()
        )));
    }
    value_and_gradient(theta, set, &Likelihood::from_errors(errors)?)
}

/// Maps θ to `(log(w_k/α₀)…, logit β)`, each capped at `±15`.
pub fn reparametrize(theta: &ParameterVector) -> Vec<f64> {
    let w = theta.weights();
    let l0 = w[0].ln();
    let mut x: Vec<f64> = w[1..]
        .iter()
        .map(|v| (v.ln() - l0).clamp(-COORD_CAP, COORD_CAP))
        .collect();
    if let Some(b) = theta.beta {
        x.push((b / (1.0 - b)).ln().clamp(-COORD_CAP, COORD_CAP));
    }
    x
}

/// Inverse of [`reparametrize`]: softmax for the weights, sigmoid for β.
pub fn unreparametrize(x: &[f64], set: &CovariateSet) -> Result<ParameterVector> {
    if x.len() != set.n_free() {
        return Err(Error::Dimension(format!(
            "expected {} coordinates, got {}",
            set.n_free(),
            x.len()
        )));
    }
    let sp = set.has_spatial();
    let nw = set.n_weights();
    let logits = &x[..nw - 1];
    let m = logits.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut w: Vec<f64> = std::iter::once(-m)
        .chain(logits.iter().map(|v| v - m))
        .map(f64::exp)
        .collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    let beta = sp.then(|| 1.0 / (1.0 + (-x[nw - 1]).exp()));
    ParameterVector::from_weights(&w, sp, beta)
}

/// Chain rule from free-coordinate gradient to the unconstrained coordinates.
pub fn gradient_to_unconstrained(theta: &ParameterVector, g: &[f64]) -> Vec<f64> {
    let w = theta.weights();
    let nfw = w.len() - 1;
    let inner: f64 = (0..nfw).map(|k| g[k] * w[k + 1]).sum();
    let mut out: Vec<f64> = (0..nfw).map(|k| w[k + 1] * (g[k] - inner)).collect();
    if let Some(b) = theta.beta {
        out.push(g[nfw] * b * (1.0 - b));
    }
    out
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: ParameterVector,
    pub names: Vec<String>,
    #[serde(skip)]
    pub r: Matrix,
    pub loglik_transformed: f64,
    #[serde(skip)]
    pub fisher: Matrix,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the unconstrained-coordinate gradient.
    pub grad_norm: f64,
    pub n_times: usize,
    pub n_obs: usize,
    /// `l` after each accepted iteration.
    pub history: Vec<f64>,
}

impl FitResult {
    /// Gaussian log-likelihood of the standardised errors, `(T/2) l − (N_obs/2) log 2π`.
    pub fn log_likelihood(&self) -> f64 {
        0.5 * self.n_times as f64 * self.loglik_transformed
            - 0.5 * self.n_obs as f64 * (2.0 * PI).ln()
    }
}

/// Fits the SCE from a dataset.
pub fn fit_sce(dataset: &Dataset, set: &CovariateSet, theta0: &ParameterVector) -> Result<FitResult> {
    fit_sce_errors(&dataset.errors()?, set, theta0, &FitOptions::default())
}

/// Fits the SCE from standardised errors.
pub fn fit_sce_errors(
    errors: &StandardizedErrors,
    set: &CovariateSet,
    theta0: &ParameterVector,
    opts: &FitOptions,
) -> Result<FitResult> {
    if errors.dim() != set.dim() {
        return Err(Error::Dimension(format!(
            "errors have {} variables, model has {}",
            errors.dim(),
            set.dim()
        )));
    }
    set.check_params(theta0)?;
    let lik = Likelihood::from_errors(errors)?;
    let x0 = reparametrize(theta0);
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let th = unreparametrize(x, set)?;
        let (l, g) = value_and_gradient(&th, set, &lik)?;
        let gx = gradient_to_unconstrained(&th, &g);
        Ok((-l, gx.into_iter().map(|v| -v).collect()))
    };
    let (theta, iterations, converged, grad_norm, history) = if x0.is_empty() {
        (theta0.clone(), 0, true, 0.0, Vec::new())
    } else {
        let bopts = BfgsOptions {
            max_iter: opts.max_iter,
            grad_tol: opts.grad_tol,
            bound: COORD_CAP,
            ..Default::default()
        };
        let res = bfgs::minimize(objective, &x0, &bopts)?;
        let theta = unreparametrize(&res.x, set)?;
        let history = res.history.iter().map(|f| -f).collect();
        (theta, res.iterations, res.converged, res.grad_norm, history)
    };
    // Never return a worse point than the (uncapped) start.
    let car = set.car_eval(theta.beta, 0)?;
    let mut r = assemble_with(&theta, set, car.as_ref())?;
    let mut l = lik.eval(&r, false)?.0;
    let mut theta = theta;
    let car0 = set.car_eval(theta0.beta, 0)?;
    let r0 = assemble_with(theta0, set, car0.as_ref())?;
    let l0 = lik.eval(&r0, false)?.0;
    if l0 > l {
        theta = theta0.clone();
        r = r0;
        l = l0;
    }
    let derivs = free_derivatives(&theta, set)?;
    let fisher = lik.fisher(&r, &derivs)?;
    Ok(FitResult {
        theta,
        names: set.free_names(),
        r,
        loglik_transformed: l,
        fisher,
        converged,
        iterations,
        grad_norm,
        n_times: errors.n_times(),
        n_obs: lik.n_obs,
        history,
    })
}

/// `I_ij = ½ tr(R⁻¹ ∂_iR R⁻¹ ∂_jR)` per observation, complete data.
pub fn fisher_information(theta: &ParameterVector, set: &CovariateSet) -> Result<Matrix> {
    let r = crate::covstruct::assemble_correlation(theta, set)?;
    let derivs = free_derivatives(theta, set)?;
    Likelihood::from_moment(&r).fisher(&r, &derivs)
}

/// Fisher information averaged over the observation patterns of `errors`.
pub fn fisher_information_missing(
    theta: &ParameterVector,
    set: &CovariateSet,
    errors: &StandardizedErrors,
) -> Result<Matrix> {
    let r = crate::covstruct::assemble_correlation(theta, set)?;
    let derivs = free_derivatives(theta, set)?;
    let lik = Likelihood::from_errors(errors)?;
    if lik.is_complete() {
        return Likelihood::from_moment(&r).fisher(&r, &derivs);
    }
    lik.fisher(&r, &derivs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Inverse of `T·I`, failing with the flattest direction named.
pub fn asymptotic_covariance(fisher: &Matrix, n_times: usize, names: &[String]) -> Result<Matrix> {
    let n = fisher.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let scaled = fisher * n_times as f64;
    let eig = scaled.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let (kmin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if !(lmin > 1e-12 * max) {
        let v = eig.eigenvectors.column(kmin);
        let worst = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        return Err(Error::SingularFisher(
            names.get(worst).cloned().unwrap_or_else(|| format!("coordinate {worst}")),
        ));
    }
    spd_factor(&scaled).map(|f| f.inverse)
}

/// Wald intervals `θ̂_i ± z √((T·I)⁻¹_ii)` on the free coordinates.
pub fn confidence_intervals(fit: &FitResult, level: f64) -> Result<Vec<ConfidenceInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    let cov = asymptotic_covariance(&fit.fisher, fit.n_times, &fit.names)?;
    let z = normal_quantile(0.5 + level / 2.0);
    let est = fit.theta.free();
    Ok(est
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let se = cov[(i, i)].max(0.0).sqrt();
            ConfidenceInterval {
                name: fit.names[i].clone(),
                estimate: e,
                std_error: se,
                lower: e - z * se,
                upper: e + z * se,
            }
        })
        .collect())
}
