//! Rank all hierarchy-respecting sub-models by BIC.
use structcov::mle::FitOptions;
use structcov::select::{average_effects, enumerate_models, select_best};
use structcov::sim::{simulate, tfr_style_roster, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    let d = 32;
    let roster = tfr_style_roster(d)?;
    println!("{} candidate models", enumerate_models(&roster).len());

    let mut cfg = ScenarioConfig::new(ScenarioKind::Structured, d, 4);
    cfg.t = 30;
    let errors = simulate(&cfg, 0)?.known_dataset()?.errors()?;
    let report = select_best(&errors, &roster, &cfg.beta_grid, &FitOptions::default())?;
    for c in report.candidates.iter().take(5) {
        println!("{:>9.3}  {}", c.centered_bic, c.components.join(" + "));
    }
    let best = &report.candidates[0];
    let sub = roster.restrict(&best.index_set)?;
    if let Some(theta) = &best.theta {
        for e in average_effects(theta, &sub)?.effects {
            println!("{:<16} {:.4}", e.name, e.value);
        }
    }
    Ok(())
}
