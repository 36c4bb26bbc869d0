//! Seeded random streams.
//!
//! Every random draw is keyed by `(seed, stream)`; streams are derived from a
//! replicate index and a purpose tag, so adding a consumer never shifts the
//! numbers seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const TAG_GRAPH: u64 = 1;
pub const TAG_CLUSTERS: u64 = 2;
pub const TAG_DATA: u64 = 3;
pub const TAG_MISSPEC: u64 = 4;
pub const TAG_MASK: u64 = 5;
pub const TAG_BOOTSTRAP: u64 = 6;
pub const TAG_STRUCTURE: u64 = 7;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream for a purpose tag within a replicate.
pub fn replicate_stream(seed: u64, replicate: u64, tag: u64) -> ChaCha8Rng {
    stream_rng(seed, replicate * 256 + tag)
}

/// A child seed for nested procedures (for example a bootstrap inside a replicate).
pub fn child_seed(seed: u64, replicate: u64, tag: u64) -> u64 {
    replicate_stream(seed, replicate, tag).random()
}

/// `T` rows drawn i.i.d. from `MVN(0, R)` through the Cholesky factor of `R`.
pub fn sample_mvn<G: Rng + ?Sized>(r: &Matrix, t: usize, rng: &mut G) -> Result<Matrix> {
    let d = r.nrows();
    let l = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("sampling correlation".into()))?
        .l();
    let mut z = Matrix::zeros(t, d);
    for i in 0..t {
        for j in 0..d {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(z * l.transpose())
}
