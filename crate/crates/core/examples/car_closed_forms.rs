//! Spatial correlation on small graphs: the 2-node path, a triangle, an island.
use structcov::car::{SpatialGraph, SpectralGraphCache};

pub fn main() -> structcov::Result<()> {
    let path = SpectralGraphCache::new(SpatialGraph::from_edges(2, &[(0, 1)])?)?;
    let tri = SpectralGraphCache::new(SpatialGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)])?)?;
    for beta in [0.1, 0.5, 0.9] {
        let p = path.car_correlation(beta)?;
        let t = tri.car_correlation(beta)?;
        println!(
            "beta {beta:.1}: path {:.6} | triangle {:.6} (beta/(2-beta) = {:.6})",
            p[(0, 1)],
            t[(0, 1)],
            beta / (2.0 - beta)
        );
    }
    // Node 3 has no neighbours and stays uncorrelated.
    let island = SpectralGraphCache::new(SpatialGraph::from_edges(4, &[(0, 1), (1, 2)])?)?;
    let g = island.car_correlation(0.7)?;
    println!("islands {:?}, corr(0,3) = {}", island.islands(), g[(0, 3)]);
    Ok(())
}
