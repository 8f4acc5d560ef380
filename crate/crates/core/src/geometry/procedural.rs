//! Deterministic procedural scenes standing in for production game levels.
//!
//! * box town: a compact block of buildings (axis-aligned boxes) on a ground plane,
//! * sparse field: small crates scattered over a wide open area,
//! * multi level: a stacked-floor building with stairwells, doors and windows.

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Aabb, GeometryError, TriangleMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneDescriptor {
    BoxTown {
        boxes: usize,
        /// Side of the square town area (m).
        extent: f64,
        min_size: f64,
        max_size: f64,
        min_height: f64,
        max_height: f64,
        /// Minimum clearance between buildings (m).
        gap: f64,
    },
    SparseField {
        /// Crates per 100 m² of ground.
        density: f64,
        extent: f64,
        min_size: f64,
        max_size: f64,
        max_height: f64,
    },
    MultiLevel {
        floors: usize,
        floor_height: f64,
        width: f64,
        depth: f64,
    },
}

impl SceneDescriptor {
    pub fn box_town(boxes: usize) -> Self {
        SceneDescriptor::BoxTown {
            boxes,
            extent: 60.0,
            min_size: 3.0,
            max_size: 9.0,
            min_height: 3.0,
            max_height: 12.0,
            gap: 2.0,
        }
    }

    pub fn sparse_field(density: f64) -> Self {
        SceneDescriptor::SparseField {
            density,
            extent: 100.0,
            min_size: 0.5,
            max_size: 1.5,
            max_height: 2.0,
        }
    }

    pub fn multi_level(floors: usize) -> Self {
        SceneDescriptor::MultiLevel {
            floors,
            floor_height: 3.0,
            width: 24.0,
            depth: 16.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SceneDescriptor::BoxTown { .. } => "box-town",
            SceneDescriptor::SparseField { .. } => "sparse-field",
            SceneDescriptor::MultiLevel { .. } => "multi-level",
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::Descriptor(m.to_string()));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            SceneDescriptor::BoxTown {
                extent,
                min_size,
                max_size,
                min_height,
                max_height,
                gap,
                ..
            } => {
                if !positive(extent) || !positive(min_size) || !positive(min_height) {
                    return bad("extent, sizes and heights must be positive");
                }
                if max_size < min_size || max_height < min_height {
                    return bad("max must not be below min");
                }
                if max_size >= extent {
                    return bad("boxes must be smaller than the town extent");
                }
                if !(gap >= 0.0) {
                    return bad("gap must be non-negative");
                }
            }
            SceneDescriptor::SparseField {
                density,
                extent,
                min_size,
                max_size,
                max_height,
            } => {
                if !(density >= 0.0) || !density.is_finite() {
                    return bad("density must be non-negative");
                }
                if !positive(extent) || !positive(min_size) || !positive(max_height) {
                    return bad("extent, sizes and height must be positive");
                }
                if max_size < min_size || max_size >= extent {
                    return bad("invalid crate size range");
                }
            }
            SceneDescriptor::MultiLevel {
                floors,
                floor_height,
                width,
                depth,
            } => {
                if floors == 0 {
                    return bad("at least one floor is required");
                }
                if floor_height < 2.5 || width < 8.0 || depth < 8.0 {
                    return bad("building needs floor height >= 2.5 m and footprint >= 8 m");
                }
            }
        }
        Ok(())
    }
}

/// A horizontal rectangle where agents stand, at floor height `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkRegion {
    pub min: DVec2,
    pub max: DVec2,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub mesh: TriangleMesh,
    pub walkable: Vec<WalkRegion>,
    /// Solid volumes that sampled positions must avoid.
    pub obstacles: Vec<Aabb>,
}

impl GeneratedScene {
    /// Uniform positions at `eye_height` above the walkable regions, outside
    /// all obstacles (with `clearance`), deterministic for a seed.
    pub fn sample_positions(
        &self,
        count: usize,
        eye_height: f64,
        clearance: f64,
        seed: u64,
    ) -> Vec<DVec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self
            .walkable
            .iter()
            .map(|r| (r.max - r.min).x * (r.max - r.min).y)
            .collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(count);
        if total <= 0.0 {
            return out;
        }
        let mut attempts = 0usize;
        while out.len() < count && attempts < count * 10_000 {
            attempts += 1;
            let mut pick = rng.random_range(0.0..total);
            let mut region = &self.walkable[0];
            for (r, a) in self.walkable.iter().zip(&areas) {
                region = r;
                if pick < *a {
                    break;
                }
                pick -= a;
            }
            let p = DVec3::new(
                rng.random_range(region.min.x..region.max.x),
                rng.random_range(region.min.y..region.max.y),
                region.z + eye_height,
            );
            // Positions are stored as f32 in every file format.
            let p = p.as_vec3().as_dvec3();
            if self
                .obstacles
                .iter()
                .any(|o| o.padded(clearance).contains(p))
            {
                continue;
            }
            out.push(p);
        }
        out
    }
}

#[derive(Default)]
pub(crate) struct MeshBuilder {
    vertices: Vec<DVec3>,
    triangles: Vec<[u32; 3]>,
}

impl MeshBuilder {
    fn push_vertex(&mut self, v: DVec3) -> u32 {
        self.vertices.push(v);
        (self.vertices.len() - 1) as u32
    }

    /// Planar quad with counter-clockwise corners (front face by right-hand rule).
    pub fn add_quad(&mut self, c: [DVec3; 4]) {
        let i = c.map(|v| self.push_vertex(v));
        self.triangles.push([i[0], i[1], i[2]]);
        self.triangles.push([i[0], i[2], i[3]]);
    }

    /// Closed box with outward-facing triangles.
    pub fn add_box(&mut self, lo: DVec3, hi: DVec3) {
        let base = self.vertices.len() as u32;
        for k in 0..8 {
            self.vertices.push(DVec3::new(
                if k & 1 == 0 { lo.x } else { hi.x },
                if k & 2 == 0 { lo.y } else { hi.y },
                if k & 4 == 0 { lo.z } else { hi.z },
            ));
        }
        // Corner k has bit0 = x, bit1 = y, bit2 = z.
        const FACES: [[u32; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
        }
    }

    /// Axis-aligned rectangle in the plane `axis = offset`, spanning `[a0,a1]`
    /// and `[b0,b1]` on the two remaining axes (in x,y,z order), minus a
    /// rectangular hole.
    fn add_rect_with_hole(
        &mut self,
        axis: usize,
        offset: f64,
        outer: [f64; 4],
        hole: Option<[f64; 4]>,
    ) {
        let [a0, a1, b0, b1] = outer;
        let mut rects = Vec::new();
        match hole {
            None => rects.push(outer),
            Some([h0, h1, g0, g1]) => {
                rects.push([a0, h0, b0, b1]);
                rects.push([h1, a1, b0, b1]);
                rects.push([h0, h1, b0, g0]);
                rects.push([h0, h1, g1, b1]);
            }
        }
        for [r0, r1, s0, s1] in rects {
            if r1 - r0 <= 1e-9 || s1 - s0 <= 1e-9 {
                continue;
            }
            let p = |a: f64, b: f64| match axis {
                0 => DVec3::new(offset, a, b),
                1 => DVec3::new(a, offset, b),
                _ => DVec3::new(a, b, offset),
            };
            self.add_quad([p(r0, s0), p(r1, s0), p(r1, s1), p(r0, s1)]);
        }
    }

    pub fn finish(self) -> TriangleMesh {
        // Builders only emit non-degenerate, in-range triangles.
        TriangleMesh::new(self.vertices, self.triangles)
            .expect("builder indices are in range")
            .0
    }
}

fn ground(b: &mut MeshBuilder, half: f64) {
    b.add_quad([
        DVec3::new(-half, -half, 0.0),
        DVec3::new(half, -half, 0.0),
        DVec3::new(half, half, 0.0),
        DVec3::new(-half, half, 0.0),
    ]);
}

/// Places non-overlapping footprints; fails if the area is too crowded.
fn place_boxes(
    rng: &mut ChaCha8Rng,
    count: usize,
    half: f64,
    size: (f64, f64),
    height: (f64, f64),
    gap: f64,
) -> Result<Vec<Aabb>, GeometryError> {
    let mut placed: Vec<Aabb> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while placed.len() < count {
        attempts += 1;
        if attempts > 1000 * (count + 10) {
            return Err(GeometryError::Descriptor(format!(
                "could only place {} of {count} boxes; reduce count or size",
                placed.len()
            )));
        }
        let sx = rng.random_range(size.0..=size.1);
        let sy = rng.random_range(size.0..=size.1);
        let h = rng.random_range(height.0..=height.1);
        let x = rng.random_range(-half..half - sx);
        let y = rng.random_range(-half..half - sy);
        let candidate = Aabb::new(DVec3::new(x, y, 0.0), DVec3::new(x + sx, y + sy, h));
        let grown = candidate.padded(gap);
        if placed.iter().any(|p| p.overlaps(&grown)) {
            continue;
        }
        placed.push(candidate);
    }
    Ok(placed)
}

pub fn generate_scene(desc: &SceneDescriptor, seed: u64) -> Result<GeneratedScene, GeometryError> {
    desc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = MeshBuilder::default();
    match *desc {
        SceneDescriptor::BoxTown {
            boxes,
            extent,
            min_size,
            max_size,
            min_height,
            max_height,
            gap,
        } => {
            let half = 0.5 * extent;
            ground(&mut b, half);
            let placed = place_boxes(
                &mut rng,
                boxes,
                half,
                (min_size, max_size),
                (min_height, max_height),
                gap,
            )?;
            for p in &placed {
                b.add_box(p.min, p.max);
            }
            Ok(GeneratedScene {
                mesh: b.finish(),
                walkable: vec![WalkRegion {
                    min: DVec2::splat(-half),
                    max: DVec2::splat(half),
                    z: 0.0,
                }],
                obstacles: placed,
            })
        }
        SceneDescriptor::SparseField {
            density,
            extent,
            min_size,
            max_size,
            max_height,
        } => {
            let half = 0.5 * extent;
            ground(&mut b, half);
            let count = (density * extent * extent / 100.0).round() as usize;
            let placed = place_boxes(
                &mut rng,
                count,
                half,
                (min_size, max_size),
                (0.25 * max_height, max_height),
                0.0,
            )?;
            for p in &placed {
                b.add_box(p.min, p.max);
            }
            Ok(GeneratedScene {
                mesh: b.finish(),
                walkable: vec![WalkRegion {
                    min: DVec2::splat(-half),
                    max: DVec2::splat(half),
                    z: 0.0,
                }],
                obstacles: placed,
            })
        }
        SceneDescriptor::MultiLevel {
            floors,
            floor_height,
            width,
            depth,
        } => Ok(multi_level(
            &mut b,
            &mut rng,
            floors,
            floor_height,
            width,
            depth,
        )),
    }
}

fn multi_level(
    b: &mut MeshBuilder,
    rng: &mut ChaCha8Rng,
    floors: usize,
    fh: f64,
    width: f64,
    depth: f64,
) -> GeneratedScene {
    let (hx, hy) = (0.5 * width, 0.5 * depth);
    // Ground apron around the building.
    b.add_quad([
        DVec3::new(-hx - 4.0, -hy - 4.0, 0.0),
        DVec3::new(hx + 4.0, -hy - 4.0, 0.0),
        DVec3::new(hx + 4.0, hy + 4.0, 0.0),
        DVec3::new(-hx - 4.0, hy + 4.0, 0.0),
    ]);
    let top = floors as f64 * fh;
    b.add_rect_with_hole(2, top, [-hx, hx, -hy, hy], None);

    let mut walkable = Vec::new();
    let mut obstacles = Vec::new();
    for k in 0..floors {
        let z0 = k as f64 * fh;
        let z1 = z0 + fh;
        // Stairwell hole in every slab above ground, alternating corners.
        if k > 0 {
            let sx = if k % 2 == 1 { hx - 5.0 } else { -hx + 1.0 };
            b.add_rect_with_hole(
                2,
                z0,
                [-hx, hx, -hy, hy],
                Some([sx, sx + 4.0, -hy + 1.0, -hy + 3.0]),
            );
        }
        // Outer walls: one window per wall, a door on the ground floor front.
        let win = |c: f64| [c - 0.8, c + 0.8, z0 + 1.0, z0 + 2.0];
        let wx = rng.random_range(-hx + 2.0..hx - 2.0);
        let wy = rng.random_range(-hy + 2.0..hy - 2.0);
        let front_hole = if k == 0 {
            [wx - 0.6, wx + 0.6, z0, z0 + 2.2]
        } else {
            win(wx)
        };
        b.add_rect_with_hole(1, -hy, [-hx, hx, z0, z1], Some(front_hole));
        b.add_rect_with_hole(1, hy, [-hx, hx, z0, z1], Some(win(-wx)));
        b.add_rect_with_hole(0, -hx, [-hy, hy, z0, z1], Some(win(wy)));
        b.add_rect_with_hole(0, hx, [-hy, hy, z0, z1], Some(win(-wy)));
        // Interior partition across x with a doorway.
        let px = rng.random_range(-0.3 * hx..0.3 * hx);
        let dy = rng.random_range(-hy + 2.0..hy - 2.0);
        b.add_rect_with_hole(
            0,
            px,
            [-hy, hy, z0, z1],
            Some([dy - 0.6, dy + 0.6, z0, z0 + 2.2]),
        );
        // A pillar per floor.
        let cx = rng.random_range(-hx + 2.0..hx - 2.0);
        let cy = rng.random_range(-hy + 2.0..hy - 2.0);
        let pillar = Aabb::new(
            DVec3::new(cx - 0.4, cy - 0.4, z0),
            DVec3::new(cx + 0.4, cy + 0.4, z1),
        );
        b.add_box(pillar.min, pillar.max);
        obstacles.push(pillar);
        // Keep sampled positions off walls.
        let wall = Aabb::new(DVec3::new(px - 0.3, -hy, z0), DVec3::new(px + 0.3, hy, z1));
        obstacles.push(wall);
        walkable.push(WalkRegion {
            min: DVec2::new(-hx + 0.5, -hy + 0.5),
            max: DVec2::new(hx - 0.5, hy - 0.5),
            z: z0,
        });
    }
    GeneratedScene {
        mesh: std::mem::take(b).finish(),
        walkable,
        obstacles,
    }
}
