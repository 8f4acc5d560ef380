//! Input feature encoders for positions and directions.
//!
//! Learnable encoders (the UV grid and the 3D hash grid) expose an
//! interpolation footprint: the table slots touched by one input and their
//! weights. Training uses it to route feature gradients back into the tables.

pub mod ffm;
pub mod grid2d;
pub mod hash3d;
pub mod pe;
pub mod sh;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use ffm::{FfmConfig, FourierFeatures};
pub use grid2d::{Grid2dConfig, GridFootprint, LevelSpacing, MultiResGrid2d};
pub use hash3d::{HashFootprint, HashGrid3d, HashGridConfig, HASH_PRIMES};
pub use pe::{pe_encode, pe_encode_into, PeConfig};
pub use sh::{sh_encode, sh_eval_into, ShConfig, MAX_SH_DEGREE};

use crate::real::Real;

/// Half-width of the uniform initialisation range for learnable tables.
pub const FEATURE_INIT_RANGE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("spherical harmonics degree {0} is unsupported (max {MAX_SH_DEGREE})")]
    UnsupportedDegree(u32),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("direction is not unit length (norm {norm})")]
    NonUnitDirection { norm: f64 },
    #[error("feature table has {got} values, expected {expected}")]
    TableSize { expected: usize, got: usize },
}

pub(crate) fn check_unit(d: glam::DVec3) -> Result<(), EncodingError> {
    let norm = d.length();
    if (norm - 1.0).abs() > crate::geometry::UNIT_TOLERANCE || !norm.is_finite() {
        return Err(EncodingError::NonUnitDirection { norm });
    }
    Ok(())
}

pub(crate) fn init_table<T: Real>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| T::of(rng.random_range(-FEATURE_INIT_RANGE..=FEATURE_INIT_RANGE)))
        .collect()
}
