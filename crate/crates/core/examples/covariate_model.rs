//! Build a covariate set and assemble a correlation matrix from weights.
use structcov::car::SpatialGraph;
use structcov::covstruct::{assemble_correlation, CovariateSet, ParameterVector};
use structcov::linalg::min_eigenvalue;

pub fn main() -> structcov::Result<()> {
    let graph = SpatialGraph::from_edges(6, &[(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)])?;
    let set = CovariateSet::new(6)?
        .with_cluster("language", vec![0, 0, 0, 1, 1, 2])?
        .with_global("global")?
        .with_spatial("border", &graph)?
        .with_interaction("language", "border")?;
    println!("free coordinates: {:?}", set.free_names());

    // Weights (identity, language, global, language:border) then δ and β.
    let theta = ParameterVector::new(vec![0.4, 0.2, 0.1, 0.1], Some(0.2), Some(0.6))?;
    let r = assemble_correlation(&theta, &set)?;
    println!("R =\n{r:.3}");
    println!("smallest eigenvalue {:.4}", min_eigenvalue(&r));
    Ok(())
}
