//! Random Fourier feature mapping `[sin(2 pi B p), cos(2 pi B p)]`.

use std::f64::consts::TAU;

use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EncodingError;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfmConfig {
    /// Rows of `B`; the output has twice as many values.
    pub features: u32,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for FfmConfig {
    fn default() -> Self {
        FfmConfig {
            features: 128,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl FfmConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.features as usize
    }
}

/// Fixed Gaussian projection; `B` is `features x 3`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFeatures {
    config: FfmConfig,
    matrix: Vec<f64>,
}

impl FourierFeatures {
    pub fn new(config: FfmConfig) -> Result<Self, EncodingError> {
        if config.features == 0 || !(config.sigma > 0.0) || !config.sigma.is_finite() {
            return Err(EncodingError::InvalidConfig(format!("{config:?}")));
        }
        let normal = Normal::new(0.0, config.sigma)
            .map_err(|e| EncodingError::InvalidConfig(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let matrix = (0..3 * config.features as usize)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(FourierFeatures { config, matrix })
    }

    /// Rebuilds from a stored matrix (model files keep `B` verbatim).
    pub fn from_matrix(config: FfmConfig, matrix: Vec<f64>) -> Result<Self, EncodingError> {
        if matrix.len() != 3 * config.features as usize {
            return Err(EncodingError::TableSize {
                expected: 3 * config.features as usize,
                got: matrix.len(),
            });
        }
        Ok(FourierFeatures { config, matrix })
    }

    pub fn config(&self) -> &FfmConfig {
        &self.config
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn encode(&self, p: DVec3) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(p, &mut out);
        out
    }

    /// Sine block first, then cosine block.
    pub fn encode_into<T: Real>(&self, p: DVec3, out: &mut [T]) {
        let m = self.config.features as usize;
        for (r, b) in self.matrix.chunks_exact(3).enumerate() {
            let (s, c) = (TAU * (b[0] * p.x + b[1] * p.y + b[2] * p.z)).sin_cos();
            out[r] = T::of(s);
            out[m + r] = T::of(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_to_unit_cosines() {
        let f = FourierFeatures::new(FfmConfig::default()).unwrap();
        let v = f.encode(DVec3::ZERO);
        assert_eq!(v.len(), 256);
        assert!(v[..128].iter().all(|&x| x == 0.0));
        assert!(v[128..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn seeded_and_scaled() {
        let cfg = FfmConfig {
            features: 4000,
            ..Default::default()
        };
        let a = FourierFeatures::new(cfg).unwrap();
        let b = FourierFeatures::new(cfg).unwrap();
        let p = DVec3::new(0.1, 0.2, 0.3);
        assert_eq!(a.encode(p), b.encode(p));
        let n = a.matrix().len() as f64;
        let var = a.matrix().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var.sqrt() - 1.0).abs() < 0.03);
        let other = FourierFeatures::new(FfmConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.matrix(), other.matrix());
        assert!(FourierFeatures::new(FfmConfig { sigma: 0.0, ..cfg }).is_err());
    }
}
