//! Monotone missingness with estimated means and scales.
use structcov::init::{pearson_type, qp_init};
use structcov::mle::{fit_sce_errors, FitOptions};
use structcov::shrink::nearest_pd_correlation;
use structcov::sim::{mae, simulate, MissingPattern, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Structured, 50, 8);
    cfg.missing = MissingPattern::Monotone;
    let sim = simulate(&cfg, 0)?;
    let observed = sim.mask.iter().filter(|o| **o).count();
    println!("{} of {} cells observed", observed, sim.mask.len());

    let errors = sim.unknown_dataset()?.errors()?;
    let r_p = pearson_type(&errors)?;
    let init = qp_init(&nearest_pd_correlation(&r_p), &sim.set, &cfg.beta_grid)?;
    let fit = fit_sce_errors(&errors, &sim.set, &init.theta0, &FitOptions::default())?;
    println!("theta {:?}", fit.theta.free());
    println!("MAE pairwise Pearson {:.4}, SCE {:.4}", mae(&sim.r_true, &r_p), mae(&sim.r_true, &fit.r));
    Ok(())
}
