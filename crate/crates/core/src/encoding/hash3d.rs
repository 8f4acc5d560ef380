//! Multi-resolution hash grid over 3D positions.
//!
//! Positions are normalised to `[0, 1]^3` inside a box (one per partition).
//! Level `l` has resolution `floor(base * b^l)` with `b` chosen so the last
//! level reaches `max_resolution`. Each of the eight cell corners is hashed
//! into a per-level table of `2^log2_table_size` feature vectors.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::{init_table, EncodingError};
use crate::geometry::Aabb;
use crate::real::Real;

/// Per-axis multipliers of the spatial hash `(x p0) ^ (y p1) ^ (z p2) mod T`.
pub const HASH_PRIMES: [u64; 3] = [73_856_093, 19_349_663, 83_492_791];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: u32,
    pub features: u32,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 16,
            features: 2,
            log2_table_size: 16,
            base_resolution: 16,
            max_resolution: 512,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        let ok = self.levels > 0
            && self.features > 0
            && (1..=24).contains(&self.log2_table_size)
            && self.base_resolution >= 1
            && self.max_resolution >= self.base_resolution;
        if ok {
            Ok(())
        } else {
            Err(EncodingError::InvalidConfig(format!("{self:?}")))
        }
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn resolutions(&self) -> Vec<u32> {
        let base = self.base_resolution as f64;
        if self.levels == 1 {
            return vec![self.base_resolution];
        }
        let b = ((self.max_resolution as f64).ln() - base.ln()) / (self.levels - 1) as f64;
        (0..self.levels)
            .map(|l| {
                // Nudge so that exact products (e.g. the last level) do not floor down.
                (base * (b * l as f64).exp() + 1e-9).floor() as u32
            })
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        (self.levels * self.features) as usize
    }

    pub fn param_count(&self) -> usize {
        self.levels as usize * self.table_size() * self.features as usize
    }
}

/// Table slots (`level * T + hash`) and trilinear weights, eight per level.
#[derive(Debug, Clone, PartialEq)]
pub struct HashFootprint {
    pub slots: Vec<u32>,
    pub weights: Vec<f64>,
    /// The position lay outside the box and was clamped onto it.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid3d<T> {
    config: HashGridConfig,
    resolutions: Vec<u32>,
    bounds: Aabb,
    features: Vec<T>,
}

#[inline]
fn hash(c: [u64; 3], mask: u64) -> u64 {
    (c[0].wrapping_mul(HASH_PRIMES[0])
        ^ c[1].wrapping_mul(HASH_PRIMES[1])
        ^ c[2].wrapping_mul(HASH_PRIMES[2]))
        & mask
}

impl<T: Real> HashGrid3d<T> {
    pub fn new(config: HashGridConfig, bounds: Aabb, seed: u64) -> Result<Self, EncodingError> {
        config.validate()?;
        Self::from_features(config, bounds, init_table(config.param_count(), seed))
    }

    pub fn from_features(
        config: HashGridConfig,
        bounds: Aabb,
        features: Vec<T>,
    ) -> Result<Self, EncodingError> {
        config.validate()?;
        if bounds.is_empty() || !bounds.min.is_finite() || !bounds.max.is_finite() {
            return Err(EncodingError::InvalidConfig(
                "empty normalisation box".into(),
            ));
        }
        if features.len() != config.param_count() {
            return Err(EncodingError::TableSize {
                expected: config.param_count(),
                got: features.len(),
            });
        }
        Ok(HashGrid3d {
            config,
            resolutions: config.resolutions(),
            bounds,
            features,
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [T] {
        &mut self.features
    }

    pub fn cast<U: Real>(&self) -> HashGrid3d<U> {
        HashGrid3d {
            config: self.config,
            resolutions: self.resolutions.clone(),
            bounds: self.bounds,
            features: self.features.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    /// Position in `[0, 1]^3`, and whether clamping was needed.
    pub fn normalize(&self, p: DVec3) -> (DVec3, bool) {
        let ext = self.bounds.extent();
        let mut q = DVec3::ZERO;
        let mut clamped = false;
        for a in 0..3 {
            let t = if ext[a] > 0.0 {
                (p[a] - self.bounds.min[a]) / ext[a]
            } else {
                0.5 + (p[a] - self.bounds.min[a])
            };
            let c = t.clamp(0.0, 1.0);
            clamped |= c != t || t.is_nan();
            q[a] = if t.is_nan() { 0.0 } else { c };
        }
        (q, clamped)
    }

    #[inline]
    fn level_corners(&self, q: DVec3, l: usize, slots: &mut [u32], weights: &mut [f64]) {
        let res = self.resolutions[l] as f64;
        let mask = (self.config.table_size() - 1) as u64;
        let base = (l * self.config.table_size()) as u32;
        let x = q * res;
        let i0 = x.floor();
        let f = x - i0;
        let i0 = [i0.x as u64, i0.y as u64, i0.z as u64];
        for c in 0..8 {
            let o = [(c & 1) as u64, ((c >> 1) & 1) as u64, ((c >> 2) & 1) as u64];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if o[a] == 1 { f[a] } else { 1.0 - f[a] };
            }
            slots[c] = base + hash([i0[0] + o[0], i0[1] + o[1], i0[2] + o[2]], mask) as u32;
            weights[c] = w;
        }
    }

    pub fn footprint(&self, p: DVec3) -> HashFootprint {
        let n = 8 * self.resolutions.len();
        let mut fp = HashFootprint {
            slots: vec![0; n],
            weights: vec![0.0; n],
            clamped: false,
        };
        fp.clamped = self.footprint_into(p, &mut fp.slots, &mut fp.weights);
        fp
    }

    /// Returns the clamp flag.
    pub fn footprint_into(&self, p: DVec3, slots: &mut [u32], weights: &mut [f64]) -> bool {
        let (q, clamped) = self.normalize(p);
        for l in 0..self.resolutions.len() {
            self.level_corners(
                q,
                l,
                &mut slots[8 * l..8 * l + 8],
                &mut weights[8 * l..8 * l + 8],
            );
        }
        clamped
    }

    pub fn gather(&self, slots: &[u32], weights: &[f64], out: &mut [T]) {
        let f = self.config.features as usize;
        for l in 0..self.resolutions.len() {
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(T::zero());
            for c in 0..8 {
                let w = T::of(weights[8 * l + c]);
                let src = &self.features[slots[8 * l + c] as usize * f..][..f];
                for k in 0..f {
                    dst[k] += w * src[k];
                }
            }
        }
    }

    /// Encodes `p`; the flag reports clamping onto the box.
    pub fn encode(&self, p: DVec3) -> (Vec<T>, bool) {
        let mut out = vec![T::zero(); self.output_dim()];
        let clamped = self.encode_into(p, &mut out);
        (out, clamped)
    }

    #[inline]
    pub fn encode_into(&self, p: DVec3, out: &mut [T]) -> bool {
        let (q, clamped) = self.normalize(p);
        let mut slots = [0u32; 8];
        let mut weights = [0.0; 8];
        let f = self.config.features as usize;
        for l in 0..self.resolutions.len() {
            self.level_corners(q, l, &mut slots, &mut weights);
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(T::zero());
            for c in 0..8 {
                let w = T::of(weights[c]);
                let src = &self.features[slots[c] as usize * f..][..f];
                for k in 0..f {
                    dst[k] += w * src[k];
                }
            }
        }
        clamped
    }

    pub fn accumulate_grad(&self, slots: &[u32], weights: &[f64], dout: &[f64], grad: &mut [f64]) {
        let f = self.config.features as usize;
        for (i, (&s, &w)) in slots.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            let l = i / 8;
            let g = &mut grad[s as usize * f..][..f];
            let d = &dout[l * f..][..f];
            for k in 0..f {
                g[k] += w * d[k];
            }
        }
    }
}
