//! Estimator roster on the random-structure scenario.
use structcov::sim::{run_benchmark, Estimator, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    let cfg = ScenarioConfig::new(ScenarioKind::Fss, 40, 7);
    let report = run_benchmark(&cfg, &Estimator::ALL, 4)?;
    for est in Estimator::ALL {
        let m = report.mae(est);
        println!("{:<12} mean MAE {:.4}", est.name(), m.iter().sum::<f64>() / m.len() as f64);
    }
    Ok(())
}
