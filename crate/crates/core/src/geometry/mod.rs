//! Triangle-mesh scenes and the BVH raycaster used as ground truth.
//!
//! Axis convention throughout the crate: z is up, meters are the length unit.

mod bvh;
mod obj;
pub mod procedural;
mod scene;

use std::fmt;

use glam::DVec3;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use bvh::{Bvh, BvhNode, MAX_LEAF_SIZE};
pub use obj::{load_mesh, write_obj, LoadReport};
pub use procedural::{generate_scene, GeneratedScene, SceneDescriptor};
pub use scene::{RayHit, Scene, CONTACT_EPSILON, DEFAULT_CLAMP_DISTANCE};

/// Triangles with area at or below this are dropped on construction (m²).
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Tolerance on `|d| = 1` for direction arguments.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scene has no triangles ({dropped} degenerate dropped)")]
    EmptyScene { dropped: usize },
    #[error("triangle {triangle} references vertex {index}, mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("direction is not unit length (|d| = {norm})")]
    NonUnitDirection { norm: f64 },
    #[error("max distance must be positive, got {0}")]
    InvalidMaxDistance(f64),
    #[error("source and target coincide")]
    DegeneratePair,
    #[error("invalid scene descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_unit(d: DVec3) -> Result<(), GeometryError> {
    let norm = d.length();
    if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
        return Err(GeometryError::NonUnitDirection { norm });
    }
    Ok(())
}

/// Axis-aligned bounding box. An empty box has `min > max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: DVec3::splat(f64::INFINITY),
        max: DVec3::splat(f64::NEG_INFINITY),
    };

    pub fn new(min: DVec3, max: DVec3) -> Self {
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a DVec3>) -> Self {
        let mut b = Aabb::EMPTY;
        for p in points {
            b.grow(*p);
        }
        b
    }

    #[inline]
    pub fn grow(&mut self, p: DVec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    #[inline]
    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    /// Closed containment test.
    pub fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min).all() && p.cmple(self.max).all()
    }

    pub fn extent(&self) -> DVec3 {
        if self.is_empty() {
            DVec3::ZERO
        } else {
            self.max - self.min
        }
    }

    pub fn center(&self) -> DVec3 {
        0.5 * (self.min + self.max)
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.max - self.min;
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: self.min - DVec3::splat(pad),
            max: self.max + DVec3::splat(pad),
        }
    }

    /// True if the interiors overlap (touching faces do not count).
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min.cmplt(other.max).all() && other.min.cmplt(self.max).all()
    }
}

/// SHA-256 digest of a mesh's canonical byte encoding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SceneHash(pub [u8; 32]);

impl fmt::Debug for SceneHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SceneHash({self})")
    }
}

impl fmt::Display for SceneHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Indexed triangle mesh. Immutable once built; construction drops
/// degenerate triangles and validates indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<DVec3>,
    triangles: Vec<[u32; 3]>,
    bounds: Aabb,
}

impl TriangleMesh {
    /// Builds a mesh, returning it together with the number of degenerate
    /// triangles that were filtered out.
    pub fn new(
        vertices: Vec<DVec3>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<(Self, usize), GeometryError> {
        let count = vertices.len();
        let mut kept = Vec::with_capacity(triangles.len());
        let mut dropped = 0;
        for (i, tri) in triangles.into_iter().enumerate() {
            for &index in &tri {
                if index as usize >= count {
                    return Err(GeometryError::IndexOutOfRange {
                        triangle: i,
                        index,
                        count,
                    });
                }
            }
            let [a, b, c] = tri.map(|k| vertices[k as usize]);
            if 0.5 * (b - a).cross(c - a).length() > DEGENERATE_AREA {
                kept.push(tri);
            } else {
                dropped += 1;
            }
        }
        let bounds = Aabb::from_points(&vertices);
        Ok((
            TriangleMesh {
                vertices,
                triangles: kept,
                bounds,
            },
            dropped,
        ))
    }

    pub fn empty() -> Self {
        TriangleMesh {
            vertices: Vec::new(),
            triangles: Vec::new(),
            bounds: Aabb::EMPTY,
        }
    }

    /// Axis-aligned cube of the given side length centered at `center`,
    /// 8 vertices and 12 outward-facing triangles.
    pub fn cube(center: DVec3, side: f64) -> Self {
        let mut b = procedural::MeshBuilder::default();
        let h = DVec3::splat(0.5 * side);
        b.add_box(center - h, center + h);
        b.finish()
    }

    /// Subdivided icosahedron with vertices on the sphere, outward-facing.
    /// Has `20 * 4^subdivisions` triangles.
    pub fn icosphere(center: DVec3, radius: f64, subdivisions: u32) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<DVec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| DVec3::new(x, y, z).normalize())
        .collect();
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid = std::collections::HashMap::new();
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<DVec3>| -> u32 {
                *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push((verts[a as usize] + verts[b as usize]).normalize());
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(tris.len() * 4);
            for [a, b, c] in tris {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            tris = next;
        }
        let verts = verts.into_iter().map(|v| center + v * radius).collect();
        TriangleMesh::new(verts, tris)
            .expect("icosphere indices are in range")
            .0
    }

    pub fn vertices(&self) -> &[DVec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn triangle(&self, i: usize) -> [DVec3; 3] {
        self.triangles[i].map(|k| self.vertices[k as usize])
    }

    /// Canonical little-endian encoding: counts, f64 vertex coordinates,
    /// u32 indices. Used for hashing and determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.vertices.len() * 24 + self.triangles.len() * 12);
        out.extend_from_slice(b"ODF-MESH");
        out.extend_from_slice(&(self.vertices.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for v in &self.vertices {
            for c in v.to_array() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        for t in &self.triangles {
            for i in t {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        out
    }

    pub fn content_hash(&self) -> SceneHash {
        let digest = Sha256::digest(self.to_bytes());
        let mut h = [0u8; 32];
        h.copy_from_slice(&digest);
        SceneHash(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_has_twelve_triangles_and_unit_bounds() {
        let m = TriangleMesh::cube(DVec3::ZERO, 1.0);
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangle_count(), 12);
        assert_eq!(m.bounds(), Aabb::new(DVec3::splat(-0.5), DVec3::splat(0.5)));
    }

    #[test]
    fn cube_triangles_face_outward() {
        let m = TriangleMesh::cube(DVec3::ZERO, 2.0);
        for i in 0..m.triangle_count() {
            let [a, b, c] = m.triangle(i);
            let n = (b - a).cross(c - a);
            let centroid = (a + b + c) / 3.0;
            assert!(n.dot(centroid) > 0.0, "triangle {i} faces inward");
        }
    }

    #[test]
    fn degenerate_and_out_of_range_triangles() {
        let v = vec![DVec3::ZERO, DVec3::X, DVec3::Y];
        let (m, dropped) = TriangleMesh::new(v.clone(), vec![[0, 1, 1], [0, 1, 2]]).unwrap();
        assert_eq!((m.triangle_count(), dropped), (1, 1));
        let err = TriangleMesh::new(v, vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::IndexOutOfRange { index: 3, .. }
        ));
    }

    #[test]
    fn bounds_contain_all_vertices() {
        let m = TriangleMesh::cube(DVec3::new(3.0, -1.0, 2.0), 0.7);
        for v in m.vertices() {
            assert!(m.bounds().contains(*v));
        }
    }

    #[test]
    fn hash_changes_with_geometry() {
        let a = TriangleMesh::cube(DVec3::ZERO, 1.0);
        let b = TriangleMesh::cube(DVec3::ZERO, 1.0 + 1e-9);
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = TriangleMesh::icosphere(DVec3::new(1.0, 2.0, 3.0), 2.0, 2);
        assert_eq!(m.triangle_count(), 320);
        assert_eq!(m.vertices().len(), 162);
        for i in 0..m.triangle_count() {
            let [a, b, c] = m.triangle(i);
            let n = (b - a).cross(c - a);
            assert!(n.dot((a + b + c) / 3.0 - DVec3::new(1.0, 2.0, 3.0)) > 0.0);
        }
        for v in m.vertices() {
            assert!(((*v - DVec3::new(1.0, 2.0, 3.0)).length() - 2.0).abs() < 1e-12);
        }
    }
}
