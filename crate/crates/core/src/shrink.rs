//! Shrinkage of the SCE towards the Pearson-type estimate (the WSCE).
//!
//! With `π = Σ Var(√T R̂ᴾ_ij)`, `ρ = Σ Cov(√T R̂ᴾ_ij, √T R̂ˢ_ij)` and
//! `γ = Σ (E R̂ˢ_ij − R_ij)²`, the weight on the Pearson estimate is
//! `λ = 1 − (π − ρ)/(Tγ)`, clamped to `[0, 1]`. The closed form bounds ρ by
//! Cauchy–Schwarz; the bootstrap estimates all three by simulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covstruct::{CovariateSet, ParameterVector};
use crate::error::{Error, Result};
use crate::init::{pearson_type, StandardizedErrors};
use crate::linalg::{min_eigenvalue, Matrix};
use crate::mle::{fit_sce_errors, free_derivatives, FitOptions, FitResult};
use crate::rng::{sample_mvn, stream_rng};

const EIG_FLOOR: f64 = 1e-8;
const GAMMA_FLOOR: f64 = 1e-12;
/// Iteration cap for the SCE refits inside the bootstrap.
pub const BOOTSTRAP_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageMethod {
    ClosedFormUpper,
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageEstimate {
    pub lambda: f64,
    /// Value before clamping (`NaN` when γ was below the floor).
    pub raw_lambda: f64,
    pub pi_hat: f64,
    pub rho_hat: f64,
    pub gamma_hat: f64,
    pub method: ShrinkageMethod,
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectionInfo {
    pub sweeps: usize,
    pub converged: bool,
}

/// Nearest correlation matrix with eigenvalues at least `1e-8`.
pub fn nearest_pd_correlation(m: &Matrix) -> Matrix {
    nearest_pd_correlation_with_info(m).0
}

/// Alternating projections with Dykstra's correction between the unit-diagonal
/// set and the eigenvalue-floored cone.
pub fn nearest_pd_correlation_with_info(m: &Matrix) -> (Matrix, ProjectionInfo) {
    let d = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let unit = (0..d).all(|i| (sym[(i, i)] - 1.0).abs() <= 1e-12);
    if unit && min_eigenvalue(&sym) >= EIG_FLOOR {
        return (m.clone(), ProjectionInfo { sweeps: 0, converged: true });
    }
    let mut y = sym;
    let mut ds = Matrix::zeros(d, d);
    let mut info = ProjectionInfo {
        sweeps: 0,
        converged: false,
    };
    for sweep in 1..=1000 {
        let r = &y - &ds;
        let x = floor_eigenvalues(&r, EIG_FLOOR);
        ds = &x - &r;
        let mut next = x;
        for i in 0..d {
            next[(i, i)] = 1.0;
        }
        let change = (&next - &y).norm();
        y = next;
        info.sweeps = sweep;
        if change < 1e-9 {
            info.converged = true;
            break;
        }
    }
    // The last projection restores the unit diagonal; floor and rescale so both hold.
    let x = floor_eigenvalues(&y, 2.0 * EIG_FLOOR);
    let s: Vec<f64> = (0..d).map(|i| 1.0 / x[(i, i)].sqrt()).collect();
    let mut out = Matrix::from_fn(d, d, |i, j| x[(i, j)] * s[i] * s[j]);
    for i in 0..d {
        out[(i, i)] = 1.0;
        for j in (i + 1)..d {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, info)
}

fn floor_eigenvalues(m: &Matrix, floor: f64) -> Matrix {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (c, &l) in vals.iter().enumerate() {
        scaled.column_mut(c).scale_mut(l);
    }
    let out = scaled * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// `Σ_ij (1 − R̂²_ij)² / (T − 1)`.
pub fn estimate_pi(r_pearson: &Matrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::InvalidInput(format!("need T >= 2, got {t}")));
    }
    let d = r_pearson.nrows();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += (1.0 - r_pearson[(i, j)].powi(2)).powi(2);
            }
        }
    }
    Ok(s / (t - 1) as f64)
}

/// `Var(√T R̂ᴾ_ij) ≈ T (1 − R̂²_ij)² / (n_ij − 1)` with per-pair overlaps `n_ij`.
pub fn pearson_kernel(r_pearson: &Matrix, counts: &Matrix, t: usize) -> Matrix {
    let d = r_pearson.nrows();
    Matrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else {
            let dof = (counts[(i, j)] - 1.0).max(1.0);
            t as f64 * (1.0 - r_pearson[(i, j)].powi(2)).powi(2) / dof
        }
    })
}

/// `Σ_ij (R̂ˢ_ij − R̂ᴾ_ij)²`.
pub fn estimate_gamma(r_sce: &Matrix, r_pearson: &Matrix) -> f64 {
    r_sce.iter().zip(r_pearson.iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// `Σ_ij √var_ij · √kernel_ij`.
pub fn rho_upper_from_kernels(sce_var: &Matrix, kernel: &Matrix) -> f64 {
    sce_var
        .iter()
        .zip(kernel.iter())
        .map(|(v, k)| v.max(0.0).sqrt() * k.max(0.0).sqrt())
        .sum()
}

/// Cauchy–Schwarz bound on ρ with the complete-data Pearson kernel.
pub fn estimate_rho_upper(sce_var: &Matrix, r_pearson: &Matrix, t: usize) -> Result<f64> {
    if sce_var.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput("variances must be nonnegative".into()));
    }
    let counts = Matrix::from_element(r_pearson.nrows(), r_pearson.ncols(), t as f64);
    Ok(rho_upper_from_kernels(sce_var, &pearson_kernel(r_pearson, &counts, t)))
}

/// Delta-method `Var(√T R̂ˢ_ij) = J_ijᵀ I⁺ J_ij` from the per-observation Fisher
/// information. Directions without information (β when δ = 0, say) leave `R`
/// unchanged, so a pseudo-inverse is used.
pub fn sce_entry_variance(theta: &ParameterVector, set: &CovariateSet, fisher: &Matrix) -> Result<Matrix> {
    let d = set.dim();
    let derivs = free_derivatives(theta, set)?;
    if derivs.is_empty() {
        return Ok(Matrix::zeros(d, d));
    }
    let n = derivs.len();
    if fisher.shape() != (n, n) {
        return Err(Error::Dimension("Fisher information does not match free coordinates".into()));
    }
    let eig = fisher.clone().symmetric_eigen();
    let cutoff = 1e-10 * eig.eigenvalues.amax();
    let mut cov = Matrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            let v = eig.eigenvectors.column(k);
            cov += v * v.transpose() / l;
        }
    }
    Ok(Matrix::from_fn(d, d, |i, j| {
        let mut v = 0.0;
        for a in 0..n {
            for b in 0..n {
                v += derivs[a][(i, j)] * cov[(a, b)] * derivs[b][(i, j)];
            }
        }
        v.max(0.0)
    }))
}

/// `λ = 1 − (π − ρ)/(Tγ)`, clamped to `[0, 1]`; `γ < 1e-12` gives `λ = 0`.
pub fn lambda_closed_form(pi: f64, rho_u: f64, gamma: f64, t: usize) -> Result<ShrinkageEstimate> {
    if t < 1 {
        return Err(Error::InvalidInput("T must be at least 1".into()));
    }
    Ok(finish(pi, rho_u, gamma, t, ShrinkageMethod::ClosedFormUpper))
}

fn finish(pi: f64, rho: f64, gamma: f64, t: usize, method: ShrinkageMethod) -> ShrinkageEstimate {
    if gamma < GAMMA_FLOOR {
        return ShrinkageEstimate {
            lambda: 0.0,
            raw_lambda: f64::NAN,
            pi_hat: pi,
            rho_hat: rho,
            gamma_hat: gamma,
            method,
            clamped: true,
        };
    }
    let raw = 1.0 - (pi - rho) / (t as f64 * gamma);
    let lambda = raw.clamp(0.0, 1.0);
    ShrinkageEstimate {
        lambda,
        raw_lambda: raw,
        pi_hat: pi,
        rho_hat: rho,
        gamma_hat: gamma,
        method,
        clamped: lambda != raw,
    }
}

/// Closed-form λ for a fitted SCE. Overlap counts replace `T` in the Pearson
/// kernel when entries are missing.
pub fn shrinkage_closed_form(
    fit: &FitResult,
    set: &CovariateSet,
    errors: &StandardizedErrors,
    r_pearson: &Matrix,
    r_pearson_pd: &Matrix,
) -> Result<ShrinkageEstimate> {
    let t = errors.n_times();
    let kernel = pearson_kernel(r_pearson, &errors.overlap_counts(), t);
    let pi: f64 = kernel.iter().sum();
    let var = sce_entry_variance(&fit.theta, set, &fit.fisher)?;
    let rho = rho_upper_from_kernels(&var, &kernel);
    let gamma = estimate_gamma(&fit.r, r_pearson_pd);
    lambda_closed_form(pi, rho, gamma, t)
}

/// Parametric bootstrap λ from `B` datasets drawn from the projected Pearson estimate.
pub fn lambda_bootstrap(
    theta0: &ParameterVector,
    set: &CovariateSet,
    errors: &StandardizedErrors,
    b: usize,
    seed: u64,
) -> Result<ShrinkageEstimate> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("bootstrap needs B >= 2, got {b}")));
    }
    let t = errors.n_times();
    let d = errors.dim();
    let target = nearest_pd_correlation(&pearson_type(errors)?);
    if min_eigenvalue(&target) < 0.5 * EIG_FLOOR {
        return Err(Error::NotPositiveDefinite(
            "projected Pearson estimate failed the eigenvalue check".into(),
        ));
    }
    let mask = errors.mask().clone();
    let opts = FitOptions {
        max_iter: BOOTSTRAP_MAX_ITER,
        ..Default::default()
    };
    let reps: Vec<(Matrix, Matrix)> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let eps = sample_mvn(&target, t, &mut rng)?;
            let e = StandardizedErrors::new(eps, mask.clone())?;
            let p = pearson_type(&e)?;
            let fit = fit_sce_errors(&e, set, theta0, &opts)?;
            Ok((p, fit.r))
        })
        .collect::<Result<_>>()?;

    let bf = b as f64;
    let mut pi = 0.0;
    let mut rho = 0.0;
    let mut gamma = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mp = reps.iter().map(|r| r.0[(i, j)]).sum::<f64>() / bf;
            let ms = reps.iter().map(|r| r.1[(i, j)]).sum::<f64>() / bf;
            let mut vp = 0.0;
            let mut cps = 0.0;
            for (p, s) in &reps {
                vp += (p[(i, j)] - mp).powi(2);
                cps += (p[(i, j)] - mp) * (s[(i, j)] - ms);
            }
            pi += t as f64 * vp / (bf - 1.0);
            rho += t as f64 * cps / (bf - 1.0);
            gamma += (ms - target[(i, j)]).powi(2);
        }
    }
    Ok(finish(pi, rho, gamma, t, ShrinkageMethod::Bootstrap))
}

/// `(1 − λ) R̂ˢ + λ R̂ᴾ`.
pub fn wsce(r_sce: &Matrix, r_pearson_pd: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    if r_sce.shape() != r_pearson_pd.shape() {
        return Err(Error::Dimension("estimates differ in shape".into()));
    }
    let mut out = r_sce * (1.0 - lambda) + r_pearson_pd * lambda;
    for i in 0..out.nrows() {
        out[(i, i)] = 1.0;
    }
    Ok(out)
}
