//! Statistical contracts checked by simulation at fixed seeds.
mod common;

use common::rng;
use nalgebra::DMatrix;
use rayon::prelude::*;
use structcov::covstruct::{assemble_correlation, CovariateSet, ParameterVector};
use structcov::identify::default_beta_grid;
use structcov::init::{pearson_type, qp_init, StandardizedErrors};
use structcov::mle::{confidence_intervals, fit_sce, FitOptions};
use structcov::rng::stream_rng;
use structcov::select::select_best;
use structcov::shrink::nearest_pd_correlation;
use structcov::sim::{
    erdos_renyi, ledoit_wolf, multinomial_membership, run_benchmark, sample_mvn, simulate,
    Estimator, ScenarioConfig, ScenarioKind,
};

#[test]
fn erdos_renyi_edge_count_is_binomial() {
    let d = 200usize;
    let p = (d as f64).ln() / d as f64;
    let pairs = (d * (d - 1) / 2) as f64;
    let n = 500;
    let mean = (0..n)
        .map(|s| erdos_renyi(d, p, &mut stream_rng(s, 0)).unwrap().edges().len() as f64)
        .sum::<f64>()
        / n as f64;
    let sd_of_mean = (pairs * p * (1.0 - p) / n as f64).sqrt();
    assert!((pairs * p - 527.1).abs() < 0.1);
    assert!((mean - pairs * p).abs() < 3.0 * sd_of_mean, "mean {mean}");
}

#[test]
fn multinomial_fraction_is_binomial() {
    let d = 10_000;
    let l = multinomial_membership(d, &[0.5, 0.5], &mut rng(3)).unwrap();
    let frac = l.iter().filter(|&&x| x == 0).count() as f64 / d as f64;
    assert!((frac - 0.5).abs() < 3.0 * (0.25 / d as f64).sqrt(), "{frac}");
    let l3 = multinomial_membership(d, &[1.0 / 3.0; 3], &mut rng(4)).unwrap();
    for k in 0..3 {
        let f = l3.iter().filter(|&&x| x == k).count() as f64 / d as f64;
        assert!((f - 1.0 / 3.0).abs() < 3.0 * (2.0 / 9.0 / d as f64).sqrt());
    }
}

#[test]
fn large_samples_recover_the_identity() {
    let d = 5;
    let y = sample_mvn(&DMatrix::identity(d, d), 10_000, &mut rng(5)).unwrap();
    let s = y.transpose() * &y / 10_000.0;
    let lw = ledoit_wolf(&StandardizedErrors::complete(y).unwrap());
    for i in 0..d {
        for j in 0..d {
            if i != j {
                assert!(s[(i, j)].abs() < 0.05);
                assert!(lw[(i, j)].abs() < 0.05);
            }
        }
    }
}

/// FSS fits at `T = 200` with Wald standard errors from the Fisher information.
#[test]
fn estimates_fall_within_three_standard_errors() {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Fss, 50, 31);
    cfg.t = 200;
    let truth = cfg.theta_star.free();
    let out: Vec<(usize, usize, f64)> = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let sim = simulate(&cfg, rep).unwrap();
            let ds = sim.known_dataset().unwrap();
            let r_hat = nearest_pd_correlation(&pearson_type(&ds.errors().unwrap()).unwrap());
            let init = qp_init(&r_hat, &sim.set, &cfg.beta_grid).unwrap();
            let fit = fit_sce(&ds, &sim.set, &init.theta0).unwrap();
            let eig = fit.fisher.clone().symmetric_eigen().eigenvalues;
            let cond = eig.max() / eig.min();
            let ci = confidence_intervals(&fit, 0.95).unwrap();
            let inside = ci
                .iter()
                .zip(&truth)
                .filter(|(c, t)| (c.estimate - **t).abs() <= 3.0 * c.std_error)
                .count();
            (inside, ci.len(), cond)
        })
        .collect();
    let inside: usize = out.iter().map(|o| o.0).sum();
    let total: usize = out.iter().map(|o| o.1).sum();
    assert!(inside as f64 >= 0.9 * total as f64, "{inside}/{total}");
    for (_, _, cond) in &out {
        assert!(cond.is_finite() && *cond > 0.0 && *cond < 1e8, "condition number {cond}");
    }
}

#[test]
fn fss_sce_beats_ive_on_average_and_errors_are_bounded() {
    let cfg = ScenarioConfig::new(ScenarioKind::Fss, 50, 41);
    let rep = run_benchmark(&cfg, &Estimator::ALL, 20).unwrap();
    let mean = |e| rep.mae(e).iter().sum::<f64>() / 20.0;
    assert!(mean(Estimator::Sce) <= mean(Estimator::Ive));
    let bound = 2.0 * 49.0 / 50.0;
    for r in &rep.replicates {
        assert!(r.mae.values().all(|&m| (0.0..=bound).contains(&m)));
    }
}

#[test]
fn sce_median_error_falls_with_dimension() {
    let median = |d| {
        let cfg = ScenarioConfig::new(ScenarioKind::Structured, d, 43);
        let mut m = run_benchmark(&cfg, &[Estimator::Sce], 20).unwrap().mae(Estimator::Sce);
        m.sort_by(f64::total_cmp);
        0.5 * (m[9] + m[10])
    };
    let (small, large) = (median(25), median(100));
    assert!(large < small, "d=25 {small} d=100 {large}");
}

#[test]
fn pure_misspecification_calls_for_heavy_shrinkage() {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Structured, 50, 47);
    cfg.xi = 1.0;
    let rep = run_benchmark(&cfg, &[Estimator::Sce, Estimator::Wsce], 20).unwrap();
    let heavy = rep.replicates.iter().filter(|r| r.lambda.unwrap() > 0.5).count();
    assert!(heavy >= 16, "{heavy}/20");
}

/// Roster {A, B, global}; data from `0.6 I + 0.4 F_A`, `B` pure noise.
#[test]
fn bic_prefers_the_generating_model() {
    let d = 50;
    let hits: Vec<(bool, bool)> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let mut g = stream_rng(53, s);
            let a = multinomial_membership(d, &[0.2; 5], &mut g).unwrap();
            let b = multinomial_membership(d, &[0.2; 5], &mut g).unwrap();
            let set = CovariateSet::new(d)
                .unwrap()
                .with_cluster("A", a)
                .unwrap()
                .with_cluster("B", b)
                .unwrap()
                .with_global("global")
                .unwrap();
            let truth = set.restrict(&[1]).unwrap();
            let theta = ParameterVector::new(vec![0.6, 0.4], None, None).unwrap();
            let r = assemble_correlation(&theta, &truth).unwrap();
            let y = sample_mvn(&r, 11, &mut g).unwrap();
            let e = StandardizedErrors::complete(y).unwrap();
            let rep = select_best(&e, &set, &default_beta_grid(), &FitOptions::default()).unwrap();
            let best = &rep.candidates[0];
            let first = best.components == ["A"];
            // The best model never gains from the noise cluster.
            let best_with_b = rep
                .candidates
                .iter()
                .filter(|c| c.components.iter().any(|n| n == "B"))
                .map(|c| c.bic)
                .fold(f64::INFINITY, f64::min);
            let best_without_b = rep
                .candidates
                .iter()
                .filter(|c| !c.components.iter().any(|n| n == "B"))
                .map(|c| c.bic)
                .fold(f64::INFINITY, f64::min);
            (first, best_with_b >= best_without_b)
        })
        .collect();
    let first = hits.iter().filter(|h| h.0).count();
    let no_gain = hits.iter().filter(|h| h.1).count();
    assert!(first >= 18, "true model first in {first}/20");
    assert!(no_gain >= 18, "noise cluster did not help in {no_gain}/20");
}
