//! Spatial partitioning of source positions into independent ODF cells.
//!
//! Cells are half-open on every axis (`[lo, hi)`), except that the grid's
//! global upper edge belongs to the last cell. A 2D grid ignores height.

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb;

pub type PartitionId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Grid2d,
    Voxel3d,
}

impl PartitionKind {
    pub fn tag(self) -> u8 {
        match self {
            PartitionKind::Grid2d => 0,
            PartitionKind::Voxel3d => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PartitionKind::Grid2d),
            1 => Some(PartitionKind::Voxel3d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    /// Cell counts per axis over the positions' bounding box (z ignored for 2D).
    Cells([u32; 3]),
    /// Cubic cells of this side length (m), anchored at the bounding-box minimum.
    CellSize(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("cannot partition an empty position list")]
    NoPositions,
    #[error("invalid partition resolution: {0}")]
    InvalidResolution(String),
    #[error("no active partition covers ({:.3}, {:.3}, {:.3})", .0.x, .0.y, .0.z)]
    NoCoverage(DVec3),
    #[error("partition {0} is not active")]
    UnknownPartition(PartitionId),
    #[error("inconsistent partition scheme: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionScheme {
    kind: PartitionKind,
    origin: DVec3,
    max: DVec3,
    cell_size: DVec3,
    dims: [u32; 3],
    active: Vec<PartitionId>,
}

impl PartitionScheme {
    pub fn build(
        positions: &[DVec3],
        kind: PartitionKind,
        resolution: Resolution,
    ) -> Result<Self, PartitionError> {
        if positions.is_empty() {
            return Err(PartitionError::NoPositions);
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(PartitionError::InvalidResolution(
                "positions must be finite".into(),
            ));
        }
        let bounds = Aabb::from_points(positions);
        let extent = bounds.extent();
        let mut cell_size = DVec3::ONE;
        let mut dims = [1u32; 3];
        let mut max = bounds.max;
        let axes = match kind {
            PartitionKind::Grid2d => 2,
            PartitionKind::Voxel3d => 3,
        };
        match resolution {
            Resolution::Cells(cells) => {
                for a in 0..3 {
                    if a < axes && cells[a] == 0 {
                        return Err(PartitionError::InvalidResolution(
                            "cell counts must be positive".into(),
                        ));
                    }
                    if a < axes && extent[a] > 0.0 {
                        dims[a] = cells[a];
                        cell_size[a] = extent[a] / cells[a] as f64;
                    } else {
                        // Flat axis (or height in 2D): a single slab.
                        cell_size[a] = extent[a].max(1.0);
                        max[a] = bounds.max[a].max(bounds.min[a] + cell_size[a]);
                    }
                }
            }
            Resolution::CellSize(size) => {
                if !(size > 0.0) || !size.is_finite() {
                    return Err(PartitionError::InvalidResolution(format!(
                        "cell size must be positive, got {size}"
                    )));
                }
                for a in 0..3 {
                    if a < axes {
                        dims[a] = ((extent[a] / size).ceil() as u32).max(1);
                        cell_size[a] = size;
                        max[a] = bounds.max[a].max(bounds.min[a] + dims[a] as f64 * size);
                    } else {
                        cell_size[a] = extent[a].max(1.0);
                        max[a] = bounds.max[a].max(bounds.min[a] + cell_size[a]);
                    }
                }
            }
        }
        let mut scheme = PartitionScheme {
            kind,
            origin: bounds.min,
            max,
            cell_size,
            dims,
            active: Vec::new(),
        };
        let mut active: Vec<PartitionId> = positions
            .iter()
            .map(|p| {
                scheme
                    .cell_of(*p)
                    .expect("positions lie inside their bounding box")
            })
            .collect();
        active.sort_unstable();
        active.dedup();
        scheme.active = active;
        Ok(scheme)
    }

    /// Reassembles a scheme from serialized parts, validating consistency.
    pub fn from_parts(
        kind: PartitionKind,
        origin: DVec3,
        max: DVec3,
        cell_size: DVec3,
        dims: [u32; 3],
        active: Vec<PartitionId>,
    ) -> Result<Self, PartitionError> {
        let total = dims.iter().map(|&d| d as u64).product::<u64>();
        if dims.contains(&0) || total > u32::MAX as u64 {
            return Err(PartitionError::Inconsistent("bad grid dimensions".into()));
        }
        if !(cell_size.cmpgt(DVec3::ZERO).all()) || !origin.is_finite() || !max.is_finite() {
            return Err(PartitionError::Inconsistent("bad grid geometry".into()));
        }
        if active.windows(2).any(|w| w[0] >= w[1]) || active.iter().any(|&c| c as u64 >= total) {
            return Err(PartitionError::Inconsistent(
                "active cells must be sorted, unique and in range".into(),
            ));
        }
        if kind == PartitionKind::Grid2d && dims[2] != 1 {
            return Err(PartitionError::Inconsistent("2D grid with z cells".into()));
        }
        Ok(PartitionScheme {
            kind,
            origin,
            max,
            cell_size,
            dims,
            active,
        })
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn origin(&self) -> DVec3 {
        self.origin
    }

    pub fn max(&self) -> DVec3 {
        self.max
    }

    pub fn cell_size(&self) -> DVec3 {
        self.cell_size
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    /// Active cell ids in ascending order.
    pub fn active_cells(&self) -> &[PartitionId] {
        &self.active
    }

    /// Number of partitions (active cells).
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Position of `id` within [`PartitionScheme::active_cells`].
    pub fn slot_of(&self, id: PartitionId) -> Option<usize> {
        self.active.binary_search(&id).ok()
    }

    fn axis_index(&self, x: f64, a: usize) -> Option<u32> {
        if !(x >= self.origin[a] && x <= self.max[a]) {
            return None;
        }
        let f = ((x - self.origin[a]) / self.cell_size[a]).floor();
        Some((f as u32).min(self.dims[a] - 1))
    }

    /// Grid cell containing `p`, active or not.
    pub fn cell_of(&self, p: DVec3) -> Option<PartitionId> {
        let ix = self.axis_index(p.x, 0)?;
        let iy = self.axis_index(p.y, 1)?;
        let iz = match self.kind {
            PartitionKind::Grid2d => 0,
            PartitionKind::Voxel3d => self.axis_index(p.z, 2)?,
        };
        Some(ix + self.dims[0] * (iy + self.dims[1] * iz))
    }

    /// The active partition owning `s`.
    pub fn partition_of(&self, s: DVec3) -> Result<PartitionId, PartitionError> {
        match self.cell_of(s) {
            Some(id) if self.slot_of(id).is_some() => Ok(id),
            _ => Err(PartitionError::NoCoverage(s)),
        }
    }

    pub fn cell_coords(&self, id: PartitionId) -> [u32; 3] {
        let ix = id % self.dims[0];
        let iy = (id / self.dims[0]) % self.dims[1];
        let iz = id / (self.dims[0] * self.dims[1]);
        [ix, iy, iz]
    }

    /// Closed bounds of a cell. For 2D grids the z range is the positions' height range.
    pub fn cell_bounds(&self, id: PartitionId) -> Aabb {
        let c = self.cell_coords(id);
        let mut lo = DVec3::ZERO;
        let mut hi = DVec3::ZERO;
        for a in 0..3 {
            lo[a] = self.origin[a] + c[a] as f64 * self.cell_size[a];
            hi[a] = if c[a] + 1 == self.dims[a] {
                self.max[a]
            } else {
                self.origin[a] + (c[a] + 1) as f64 * self.cell_size[a]
            };
        }
        Aabb::new(lo, hi)
    }
}
