use crate::encoding::Grid2dConfig;
use crate::odf::{DirectionEncoder, OdfAtlas, PositionEncoder};
use crate::partition::PartitionId;

use super::EvalError;

const F32_BYTES: u64 = 4;

/// Uncompressed omnidirectional depth maps: one `width x height` f32 image
/// per position.
pub fn depth_map_bytes(positions: u64, width: u32, height: u32) -> u64 {
    positions * width as u64 * height as u64 * F32_BYTES
}

/// f32 storage of a direction grid: all level texels times features.
pub fn grid_bytes(config: &Grid2dConfig) -> Result<u64, EvalError> {
    Ok(config.param_count()? as u64 * F32_BYTES)
}

/// Decimal megabytes, as used in memory tables.
pub fn megabytes(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMemory {
    pub partition: PartitionId,
    pub positions: u64,
    /// `(width, height, bytes)` per requested depth-map resolution.
    pub depth_maps: Vec<(u32, u32, u64)>,
    pub grid_bytes: u64,
    pub hash_bytes: u64,
    pub mlp_bytes: u64,
}

impl PartitionMemory {
    pub fn model_bytes(&self) -> u64 {
        self.grid_bytes + self.hash_bytes + self.mlp_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub partitions: Vec<PartitionMemory>,
}

impl MemoryReport {
    pub fn total_model_bytes(&self) -> u64 {
        self.partitions.iter().map(|p| p.model_bytes()).sum()
    }

    /// Depth-map totals over all partitions, per resolution.
    pub fn total_depth_bytes(&self) -> Vec<(u32, u32, u64)> {
        let Some(first) = self.partitions.first() else {
            return Vec::new();
        };
        first
            .depth_maps
            .iter()
            .enumerate()
            .map(|(k, &(w, h, _))| {
                (
                    w,
                    h,
                    self.partitions.iter().map(|p| p.depth_maps[k].2).sum(),
                )
            })
            .collect()
    }
}

/// Compares storing depth maps against the trained models, per partition.
/// `positions` overrides the per-partition position count; by default each
/// model's training source count is used.
pub fn estimate_memory(
    atlas: &OdfAtlas,
    resolutions: &[(u32, u32)],
    positions: Option<u64>,
) -> MemoryReport {
    let partitions = atlas
        .models()
        .iter()
        .map(|m| {
            let n = positions.unwrap_or(m.meta().sources as u64);
            let grid = match m.direction_encoder() {
                DirectionEncoder::Grid(g) => g.features().len() as u64,
                _ => 0,
            };
            let hash = match m.position_encoder() {
                PositionEncoder::Hash(h) => h.features().len() as u64,
                _ => 0,
            };
            PartitionMemory {
                partition: m.partition(),
                positions: n,
                depth_maps: resolutions
                    .iter()
                    .map(|&(w, h)| (w, h, depth_map_bytes(n, w, h)))
                    .collect(),
                grid_bytes: grid * F32_BYTES,
                hash_bytes: hash * F32_BYTES,
                mlp_bytes: m.mlp().param_count() as u64 * F32_BYTES,
            }
        })
        .collect();
    MemoryReport { partitions }
}
