//! Shrink the structured fit towards the Pearson-type matrix.
use structcov::init::{pearson_type, qp_init};
use structcov::mle::{fit_sce_errors, FitOptions};
use structcov::shrink::{lambda_bootstrap, nearest_pd_correlation, shrinkage_closed_form, wsce};
use structcov::sim::{mae, simulate, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    for xi in [0.0, 1.0] {
        let mut cfg = ScenarioConfig::new(ScenarioKind::Structured, 40, 31);
        cfg.xi = xi;
        let sim = simulate(&cfg, 0)?;
        let errors = sim.known_dataset()?.errors()?;
        let r_p = pearson_type(&errors)?;
        let r_pd = nearest_pd_correlation(&r_p);
        let init = qp_init(&r_p, &sim.set, &cfg.beta_grid)?;
        let fit = fit_sce_errors(&errors, &sim.set, &init.theta0, &FitOptions::default())?;
        let closed = shrinkage_closed_form(&fit, &sim.set, &errors, &r_p, &r_pd)?;
        let boot = lambda_bootstrap(&init.theta0, &sim.set, &errors, 20, 99)?;
        let r_w = wsce(&fit.r, &r_pd, closed.lambda)?;
        println!(
            "xi {xi}: lambda closed {:.3}, bootstrap {:.3}; MAE SCE {:.4}, WSCE {:.4}, Pearson {:.4}",
            closed.lambda,
            boot.lambda,
            mae(&sim.r_true, &fit.r),
            mae(&sim.r_true, &r_w),
            mae(&sim.r_true, &r_p)
        );
    }
    Ok(())
}
