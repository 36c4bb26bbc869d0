//! Identifiability over a β grid: one model that passes, one that does not.
use structcov::car::SpatialGraph;
use structcov::covstruct::CovariateSet;
use structcov::identify::{check_identifiability, default_beta_grid, witness_residual, DEFAULT_TOL};

pub fn main() -> structcov::Result<()> {
    let grid = default_beta_grid();

    let path = SpatialGraph::from_edges(4, &[(0, 2), (2, 1), (1, 3)])?;
    let good = CovariateSet::new(4)?
        .with_cluster("block", vec![0, 0, 1, 1])?
        .with_spatial("spatial", &path)?;
    let rep = check_identifiability(&good, &grid, DEFAULT_TOL)?;
    println!("block + path: identifiable = {}, max LP value {:.2e}", rep.identifiable, rep.max_value);

    let pair = SpatialGraph::from_edges(2, &[(0, 1)])?;
    let bad = CovariateSet::new(2)?.with_global("global")?.with_spatial("spatial", &pair)?;
    let rep = check_identifiability(&bad, &grid, DEFAULT_TOL)?;
    println!("global + 2-node path: identifiable = {}", rep.identifiable);
    if let Some(w) = rep.witnesses.first() {
        println!(
            "  witness at beta = {:.3} vs {:.3}, residual {:.2e}",
            w.beta,
            w.beta_prime,
            witness_residual(&bad, w)?
        );
    }
    Ok(())
}
