//! SCE and WSCE as an unobserved cluster structure takes over.
use structcov::sim::{run_benchmark, Estimator, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    let ests = [Estimator::Pearson, Estimator::Sce, Estimator::Wsce];
    for xi in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut cfg = ScenarioConfig::new(ScenarioKind::Structured, 40, 21);
        cfg.xi = xi;
        let rep = run_benchmark(&cfg, &ests, 3)?;
        let mean = |e| {
            let m = rep.mae(e);
            m.iter().sum::<f64>() / m.len() as f64
        };
        println!(
            "xi {xi:.2}: Pearson {:.4}  SCE {:.4}  WSCE {:.4}",
            mean(Estimator::Pearson),
            mean(Estimator::Sce),
            mean(Estimator::Wsce)
        );
    }
    Ok(())
}
