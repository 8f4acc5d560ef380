use std::path::Path;

use glam::{DVec3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{read_file, write_file, FormatError, Reader, Writer};
use crate::geometry::{GeometryError, Scene, SceneHash};
use crate::sphere::FibonacciLattice;

pub const DATASET_MAGIC: [u8; 4] = *b"ODFD";
pub const DATASET_VERSION: u16 = 1;
/// Right-handed, z up. The only convention written so far.
pub const AXIS_Z_UP: u8 = 0;

/// Per-source ray distances along the lattice directions, in lattice order.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDataset {
    axis: u8,
    n: u32,
    clamp: f32,
    scene_hash: SceneHash,
    positions: Vec<Vec3>,
    distances: Vec<f32>,
}

impl RayDataset {
    pub fn new(
        n: u32,
        clamp: f32,
        scene_hash: SceneHash,
        positions: Vec<Vec3>,
        distances: Vec<f32>,
    ) -> Result<Self, FormatError> {
        let ds = RayDataset {
            axis: AXIS_Z_UP,
            n,
            clamp,
            scene_hash,
            positions,
            distances,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<(), FormatError> {
        if self.axis != AXIS_Z_UP {
            return Err(FormatError::Invariant(format!(
                "unknown axis convention {}",
                self.axis
            )));
        }
        if self.n == 0 {
            return Err(FormatError::Invariant(
                "lattice n must be at least 1".into(),
            ));
        }
        if !(self.clamp > 0.0) || !self.clamp.is_finite() {
            return Err(FormatError::Invariant(format!("bad clamp {}", self.clamp)));
        }
        let p = self.rays_per_source();
        if self.distances.len() != self.positions.len() * p {
            return Err(FormatError::Invariant(format!(
                "{} distances for {} sources of {p} rays",
                self.distances.len(),
                self.positions.len()
            )));
        }
        if let Some(i) = self.positions.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::Invariant(format!(
                "non-finite position in record {i}"
            )));
        }
        if let Some(i) = self
            .distances
            .iter()
            .position(|&d| !(d > 0.0 && d <= self.clamp))
        {
            return Err(FormatError::Invariant(format!(
                "distance {} in record {} outside (0, {}]",
                self.distances[i],
                i / p,
                self.clamp
            )));
        }
        Ok(())
    }

    pub fn axis(&self) -> u8 {
        self.axis
    }

    pub fn lattice_n(&self) -> u32 {
        self.n
    }

    pub fn rays_per_source(&self) -> usize {
        2 * self.n as usize + 1
    }

    pub fn clamp(&self) -> f32 {
        self.clamp
    }

    pub fn scene_hash(&self) -> SceneHash {
        self.scene_hash
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn positions_f64(&self) -> Vec<DVec3> {
        self.positions.iter().map(|p| p.as_dvec3()).collect()
    }

    /// All distances, `P` per source.
    pub fn distances(&self) -> &[f32] {
        &self.distances
    }

    pub fn record(&self, i: usize) -> (Vec3, &[f32]) {
        let p = self.rays_per_source();
        (self.positions[i], &self.distances[i * p..(i + 1) * p])
    }

    pub fn lattice(&self) -> FibonacciLattice {
        FibonacciLattice::new(self.n)
    }

    /// Keeps only the listed records, in the given order.
    pub fn subset(&self, indices: &[usize]) -> RayDataset {
        let p = self.rays_per_source();
        let mut distances = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            distances.extend_from_slice(self.record(i).1);
        }
        RayDataset {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            distances,
            ..*self
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&DATASET_MAGIC);
        w.u16(DATASET_VERSION);
        w.u8(self.axis);
        w.u8(0);
        w.u32(self.n);
        w.f32(self.clamp);
        w.bytes(&self.scene_hash.0);
        w.u32(self.positions.len() as u32);
        for i in 0..self.len() {
            let (p, d) = self.record(i);
            w.f32s(&p.to_array());
            w.f32s(d);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.header(DATASET_MAGIC, DATASET_VERSION)?;
        let axis = r.u8()?;
        let _reserved = r.u8()?;
        let n = r.u32()?;
        let clamp = r.f32()?;
        let scene_hash = SceneHash(r.array()?);
        let count = r.u32()? as usize;
        if n == 0 {
            return Err(FormatError::Invariant(
                "lattice n must be at least 1".into(),
            ));
        }
        let p = 2 * n as usize + 1;
        let mut positions = Vec::with_capacity(count.min(1 << 20));
        let mut distances = Vec::with_capacity(count.min(1 << 20) * p);
        for i in 0..count {
            r.record = Some(i as u64);
            let pos = r.f32s(3)?;
            positions.push(Vec3::from_slice(&pos));
            distances.extend(r.f32s(p)?);
        }
        r.record = None;
        r.finish()?;
        let ds = RayDataset {
            axis,
            n,
            clamp,
            scene_hash,
            positions,
            distances,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectReport {
    /// Indices of sources whose rays mostly see back faces, i.e. that sit
    /// inside solid geometry.
    pub inside_solid: Vec<usize>,
    pub rays: u64,
    pub hits: u64,
}

/// Raycasts every lattice direction from every source. Sources are rounded
/// to `f32` first so the stored positions are the ones actually cast from.
pub fn collect_rays(
    scene: &Scene,
    sources: &[DVec3],
    n: u32,
    clamp: f64,
) -> Result<(RayDataset, CollectReport), FormatError> {
    if sources.is_empty() {
        return Err(FormatError::Invariant("no source positions".into()));
    }
    if n == 0 {
        return Err(FormatError::Invariant(
            "lattice n must be at least 1".into(),
        ));
    }
    if !(clamp > 0.0) || !clamp.is_finite() {
        return Err(GeometryError::InvalidMaxDistance(clamp).into());
    }
    let clamp32 = clamp as f32;
    let lattice = FibonacciLattice::new(n);
    let dirs = lattice.directions();
    let positions: Vec<Vec3> = sources.iter().map(|p| p.as_vec3()).collect();
    let per_source: Vec<(Vec<f32>, u64, bool)> = positions
        .par_iter()
        .map(|p| {
            let origin = p.as_dvec3();
            let mut out = Vec::with_capacity(dirs.len());
            let mut hits = 0u64;
            let mut back = 0usize;
            for &d in dirs {
                let hit = scene.nearest(origin, d, clamp);
                if let Some(id) = hit.triangle {
                    hits += 1;
                    let [a, b, c] = scene.mesh().triangle(id as usize);
                    if (b - a).cross(c - a).dot(d) > 0.0 {
                        back += 1;
                    }
                }
                // Round down onto the f32 grid but stay strictly positive.
                let v = (hit.distance as f32).min(clamp32).max(f32::MIN_POSITIVE);
                out.push(v);
            }
            (out, hits, 2 * back > dirs.len())
        })
        .collect();
    let mut report = CollectReport {
        rays: (positions.len() * dirs.len()) as u64,
        ..Default::default()
    };
    let mut distances = Vec::with_capacity(positions.len() * dirs.len());
    for (i, (d, hits, inside)) in per_source.into_iter().enumerate() {
        distances.extend(d);
        report.hits += hits;
        if inside {
            report.inside_solid.push(i);
        }
    }
    if !report.inside_solid.is_empty() {
        log::warn!(
            "{} of {} sources appear to be inside solid geometry",
            report.inside_solid.len(),
            positions.len()
        );
    }
    let ds = RayDataset::new(n, clamp32, scene.hash(), positions, distances)?;
    Ok((ds, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AliasingAudit {
    /// Number of (ray, fraction) checks performed.
    pub checked: usize,
    pub max_error: f64,
}

/// Checks stored rays against the sliding identity: for a ray that hit at
/// `D`, casting again from `p + λ d` with `λ = f D` must hit at `D - λ`.
/// Draws `rays` random hit rays (with replacement) and tests every fraction
/// `f` on each.
pub fn aliasing_audit(
    scene: &Scene,
    dataset: &RayDataset,
    rays: usize,
    fractions: &[f64],
    seed: u64,
) -> AliasingAudit {
    let lattice = dataset.lattice();
    let dirs = lattice.directions();
    let p = dataset.rays_per_source();
    let clamp = dataset.clamp();
    let candidates: Vec<usize> = (0..dataset.distances().len())
        .filter(|&k| dataset.distances()[k] < clamp)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = AliasingAudit {
        checked: 0,
        max_error: 0.0,
    };
    if candidates.is_empty() {
        return audit;
    }
    for _ in 0..rays {
        let k = candidates[rng.random_range(0..candidates.len())];
        let (pos, dist) = dataset.record(k / p);
        let (origin, d) = (pos.as_dvec3(), dirs[k % p]);
        let big_d = dist[k % p] as f64;
        for &f in fractions {
            let lambda = f * big_d;
            let hit = scene.nearest(origin + lambda * d, d, clamp as f64);
            audit.max_error = audit.max_error.max((hit.distance - (big_d - lambda)).abs());
            audit.checked += 1;
        }
    }
    audit
}
