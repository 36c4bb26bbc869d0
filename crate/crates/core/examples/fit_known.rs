//! Fit by maximum likelihood with known means and scales, with Wald intervals.
use structcov::init::{pearson_type, qp_init};
use structcov::mle::{confidence_intervals, fit_sce_errors, FitOptions};
use structcov::sim::{mae, simulate, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Fss, 40, 2024);
    cfg.t = 40;
    let sim = simulate(&cfg, 0)?;
    let errors = sim.known_dataset()?.errors()?;
    let init = qp_init(&pearson_type(&errors)?, &sim.set, &cfg.beta_grid)?;
    let fit = fit_sce_errors(&errors, &sim.set, &init.theta0, &FitOptions::default())?;
    println!(
        "converged {} after {} iterations, log-likelihood {:.3}",
        fit.converged,
        fit.iterations,
        fit.log_likelihood()
    );
    let truth = cfg.theta_star.free();
    for (ci, t) in confidence_intervals(&fit, 0.95)?.iter().zip(truth) {
        println!("{:<8} {:.4}  [{:.4}, {:.4}]  true {t}", ci.name, ci.estimate, ci.lower, ci.upper);
    }
    println!("MAE {:.4}", mae(&sim.r_true, &fit.r));
    Ok(())
}
