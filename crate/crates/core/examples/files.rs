//! Write a model to disk, load it back and fit from files.
use structcov::io::{self, ModelConfig};
use structcov::init::{pearson_type, qp_init};
use structcov::mle::{fit_sce_errors, Dataset, FitOptions};
use structcov::sim::{simulate, ScenarioConfig, ScenarioKind};

pub fn main() -> structcov::Result<()> {
    let dir = std::env::temp_dir().join(format!("structcov-files-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| structcov::Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let sim = simulate(&ScenarioConfig::new(ScenarioKind::Fss, 20, 3), 0)?;
    io::write_table(&dir.join("y.csv"), &sim.y, &sim.mask)?;
    io::write_labels(&dir.join("a.csv"), &sim.structure.comcol)?;
    io::write_edges(&dir.join("g.csv"), &sim.structure.graph)?;
    std::fs::write(
        dir.join("model.json"),
        r#"{"components": [
            {"kind": "cluster", "name": "A", "labels": "a.csv"},
            {"kind": "global", "name": "C"},
            {"kind": "spatial", "name": "D", "adjacency": "g.csv"}],
          "mode": "unknown"}"#,
    )
    .expect("temp dir is writable");

    let cfg = ModelConfig::load(&dir.join("model.json"))?;
    let table = io::read_table(&dir.join("y.csv"))?;
    let set = cfg.build_set(table.values.ncols())?;
    let errors = Dataset::unknown(table.values, table.observed)?.errors()?;
    let init = qp_init(&pearson_type(&errors)?, &set, &cfg.beta_grid())?;
    let fit = fit_sce_errors(&errors, &set, &init.theta0, &FitOptions::default())?;
    println!("{:?} = {:?}", fit.names, fit.theta.free());

    io::write_matrix(&dir.join("r.csv"), &fit.r)?;
    println!("round trip exact: {}", io::read_matrix(&dir.join("r.csv"))? == fit.r);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
