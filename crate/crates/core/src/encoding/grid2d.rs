//! Multi-resolution grid of learnable features over the spherical UV plane.
//!
//! Texel `(i, j)` of a `w x h` level is centred at `((i + 0.5)/w, (j + 0.5)/h)`.
//! Columns wrap (longitude), rows clamp (latitude). Each level contributes a
//! bilinear blend of four texels; levels are concatenated coarse to fine.

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::{check_unit, init_table, EncodingError};
use crate::real::Real;
use crate::sphere::{project, Projection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LevelSpacing {
    /// Resolutions step by a constant increment between the endpoints.
    #[default]
    Linear,
    /// Resolutions grow by a constant factor between the endpoints.
    Geometric,
}

impl LevelSpacing {
    pub fn tag(self) -> u8 {
        match self {
            LevelSpacing::Linear => 0,
            LevelSpacing::Geometric => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LevelSpacing::Linear),
            1 => Some(LevelSpacing::Geometric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid2dConfig {
    pub levels: u32,
    pub features: u32,
    /// `[width, height]` of the coarsest level.
    pub coarsest: [u32; 2],
    /// `[width, height]` of the finest level.
    pub finest: [u32; 2],
    pub spacing: LevelSpacing,
    pub projection: Projection,
}

impl Default for Grid2dConfig {
    fn default() -> Self {
        Grid2dConfig {
            levels: 16,
            features: 2,
            coarsest: [16, 8],
            finest: [256, 128],
            spacing: LevelSpacing::Linear,
            projection: Projection::LongLat,
        }
    }
}

impl Grid2dConfig {
    pub fn resolutions(&self) -> Result<Vec<[u32; 2]>, EncodingError> {
        let bad = |m: &str| Err(EncodingError::InvalidConfig(m.to_string()));
        if self.levels == 0 || self.features == 0 {
            return bad("levels and features must be positive");
        }
        let [w0, h0] = self.coarsest;
        let [w1, h1] = self.finest;
        if w0 < 2 || h0 < 1 || w1 < w0 || h1 < h0 {
            return bad("finest resolution must not be below coarsest");
        }
        if self.levels == 1 {
            return Ok(vec![self.coarsest]);
        }
        let last = (self.levels - 1) as f64;
        let res: Vec<[u32; 2]> = (0..self.levels)
            .map(|l| {
                let t = l as f64 / last;
                let at = |a: u32, b: u32| -> u32 {
                    let (a, b) = (a as f64, b as f64);
                    match self.spacing {
                        LevelSpacing::Linear => (a + (b - a) * t).round() as u32,
                        LevelSpacing::Geometric => (a * (b / a).powf(t)).round() as u32,
                    }
                };
                [at(w0, w1), at(h0, h1)]
            })
            .collect();
        if res
            .windows(2)
            .any(|p| p[1][0] <= p[0][0] || p[1][1] <= p[0][1])
        {
            return bad("level resolutions must strictly increase");
        }
        Ok(res)
    }

    pub fn texel_count(&self) -> Result<usize, EncodingError> {
        Ok(self
            .resolutions()?
            .iter()
            .map(|[w, h]| *w as usize * *h as usize)
            .sum())
    }

    pub fn output_dim(&self) -> usize {
        (self.levels * self.features) as usize
    }

    /// Learnable feature count (texels x F).
    pub fn param_count(&self) -> Result<usize, EncodingError> {
        Ok(self.texel_count()? * self.features as usize)
    }
}

/// Texel slots (global texel index across levels) and bilinear weights,
/// four per level, in corner order `(i0,j0) (i1,j0) (i0,j1) (i1,j1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFootprint {
    pub texels: Vec<u32>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResGrid2d<T> {
    config: Grid2dConfig,
    resolutions: Vec<[u32; 2]>,
    offsets: Vec<u32>,
    features: Vec<T>,
}

#[inline]
fn level_footprint(u: f64, v: f64, w: u32, h: u32) -> ([u32; 4], [f64; 4]) {
    let x = u * w as f64 - 0.5;
    let xf = x.floor();
    let fx = x - xf;
    // u lies in [0, 1), so xf is in [-1, w - 1] and wrapping needs no division.
    let i0 = if xf < 0.0 {
        w - 1
    } else {
        (xf as u32).min(w - 1)
    };
    let i1 = if i0 + 1 == w { 0 } else { i0 + 1 };
    let y = (v * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let j0 = (y.floor() as u32).min(h - 1);
    let fy = y - j0 as f64;
    let j1 = (j0 + 1).min(h - 1);
    (
        [j0 * w + i0, j0 * w + i1, j1 * w + i0, j1 * w + i1],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    )
}

impl<T: Real> MultiResGrid2d<T> {
    /// Features drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new(config: Grid2dConfig, seed: u64) -> Result<Self, EncodingError> {
        let len = config.param_count()?;
        Self::from_features(config, init_table(len, seed))
    }

    pub fn zeros(config: Grid2dConfig) -> Result<Self, EncodingError> {
        let len = config.param_count()?;
        Self::from_features(config, vec![T::zero(); len])
    }

    pub fn from_features(config: Grid2dConfig, features: Vec<T>) -> Result<Self, EncodingError> {
        let resolutions = config.resolutions()?;
        let mut offsets = Vec::with_capacity(resolutions.len());
        let mut acc = 0u64;
        for [w, h] in &resolutions {
            offsets.push(acc as u32);
            acc += *w as u64 * *h as u64;
        }
        if acc > u32::MAX as u64 {
            return Err(EncodingError::InvalidConfig("too many texels".into()));
        }
        let expected = acc as usize * config.features as usize;
        if features.len() != expected {
            return Err(EncodingError::TableSize {
                expected,
                got: features.len(),
            });
        }
        Ok(MultiResGrid2d {
            config,
            resolutions,
            offsets,
            features,
        })
    }

    pub fn config(&self) -> &Grid2dConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[[u32; 2]] {
        &self.resolutions
    }

    pub fn texel_count(&self) -> usize {
        self.features.len() / self.config.features as usize
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Row-major `[texel][feature]` table.
    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [T] {
        &mut self.features
    }

    pub fn cast<U: Real>(&self) -> MultiResGrid2d<U> {
        MultiResGrid2d {
            config: self.config,
            resolutions: self.resolutions.clone(),
            offsets: self.offsets.clone(),
            features: self.features.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    pub fn footprint(&self, d: DVec3) -> Result<GridFootprint, EncodingError> {
        check_unit(d)?;
        let n = 4 * self.resolutions.len();
        let mut fp = GridFootprint {
            texels: vec![0; n],
            weights: vec![0.0; n],
        };
        self.footprint_into(d, &mut fp.texels, &mut fp.weights);
        Ok(fp)
    }

    /// Unchecked variant of [`MultiResGrid2d::footprint`] writing into caller buffers.
    pub fn footprint_into(&self, d: DVec3, texels: &mut [u32], weights: &mut [f64]) {
        let (u, v) = project(d, self.config.projection);
        for (l, &[w, h]) in self.resolutions.iter().enumerate() {
            let (t, wt) = level_footprint(u, v, w, h);
            for c in 0..4 {
                texels[4 * l + c] = self.offsets[l] + t[c];
                weights[4 * l + c] = wt[c];
            }
        }
    }

    /// Blends features for a precomputed footprint.
    pub fn gather(&self, texels: &[u32], weights: &[f64], out: &mut [T]) {
        let f = self.config.features as usize;
        for l in 0..self.resolutions.len() {
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(T::zero());
            for c in 0..4 {
                let w = T::of(weights[4 * l + c]);
                let src = &self.features[texels[4 * l + c] as usize * f..][..f];
                for k in 0..f {
                    dst[k] += w * src[k];
                }
            }
        }
    }

    pub fn encode(&self, d: DVec3) -> Result<Vec<T>, EncodingError> {
        check_unit(d)?;
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode_into(d, &mut out);
        Ok(out)
    }

    /// Unchecked, allocation-free encode.
    #[inline]
    pub fn encode_into(&self, d: DVec3, out: &mut [T]) {
        let (u, v) = project(d, self.config.projection);
        let f = self.config.features as usize;
        for (l, &[w, h]) in self.resolutions.iter().enumerate() {
            let (t, wt) = level_footprint(u, v, w, h);
            let dst = &mut out[l * f..(l + 1) * f];
            dst.fill(T::zero());
            for c in 0..4 {
                let w = T::of(wt[c]);
                let src = &self.features[(self.offsets[l] + t[c]) as usize * f..][..f];
                for k in 0..f {
                    dst[k] += w * src[k];
                }
            }
        }
    }

    /// Adds `d loss / d table` for one footprint given `d loss / d output`.
    pub fn accumulate_grad(&self, texels: &[u32], weights: &[f64], dout: &[f64], grad: &mut [f64]) {
        accumulate_grad(self.config.features as usize, texels, weights, dout, grad);
    }
}

/// Scatter `dout` (length `L * f`) through a footprint into a table gradient.
pub fn accumulate_grad(f: usize, texels: &[u32], weights: &[f64], dout: &[f64], grad: &mut [f64]) {
    for (slot, (&t, &w)) in texels.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let l = slot / 4;
        let g = &mut grad[t as usize * f..][..f];
        let d = &dout[l * f..][..f];
        for k in 0..f {
            g[k] += w * d[k];
        }
    }
}
