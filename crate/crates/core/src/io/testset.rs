use std::path::Path;

use glam::{DVec3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{read_file, write_file, FormatError, Reader, Writer};
use crate::geometry::{Aabb, Scene, SceneHash};

pub const TESTSET_MAGIC: [u8; 4] = *b"ODFV";
pub const TESTSET_VERSION: u16 = 1;
/// Targets closer than this to their source are resampled.
pub const MIN_TARGET_DISTANCE: f64 = 0.01;
/// Rejection-sampling budget per requested target.
const ATTEMPTS_PER_TARGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPair {
    pub source: Vec3,
    pub target: Vec3,
    pub visible: bool,
}

/// Labelled source/target pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityTestSet {
    pub scene_hash: SceneHash,
    pub pairs: Vec<TestPair>,
}

impl VisibilityTestSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.visible).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&TESTSET_MAGIC);
        w.u16(TESTSET_VERSION);
        w.u16(0);
        w.bytes(&self.scene_hash.0);
        w.u32(self.pairs.len() as u32);
        for p in &self.pairs {
            w.f32s(&p.source.to_array());
            w.f32s(&p.target.to_array());
            w.u8(p.visible as u8);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.header(TESTSET_MAGIC, TESTSET_VERSION)?;
        let _reserved = r.u16()?;
        let scene_hash = SceneHash(r.array()?);
        let count = r.u32()? as usize;
        let mut pairs = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            r.record = Some(i as u64);
            let s = Vec3::from_slice(&r.f32s(3)?);
            let t = Vec3::from_slice(&r.f32s(3)?);
            let visible = match r.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(FormatError::Invariant(format!(
                        "label {other} in record {i}"
                    )))
                }
            };
            if !s.is_finite() || !t.is_finite() || s == t {
                return Err(FormatError::Invariant(format!("bad pair in record {i}")));
            }
            pairs.push(TestPair {
                source: s,
                target: t,
                visible,
            });
        }
        r.record = None;
        r.finish()?;
        Ok(VisibilityTestSet { scene_hash, pairs })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TestSetReport {
    pub visible: usize,
    pub occluded: usize,
    /// Candidate targets rejected for being too near or beyond the clamp.
    pub rejected: usize,
    /// Requested targets that could not be placed within the attempt budget.
    pub shortfall: usize,
}

impl TestSetReport {
    pub fn visible_fraction(&self) -> f64 {
        let n = self.visible + self.occluded;
        if n == 0 {
            0.0
        } else {
            self.visible as f64 / n as f64
        }
    }
}

/// Draws `per_source` targets uniformly in the box spanned by the scene and
/// the sources, keeping those within `[0.01, clamp]` of their source, and
/// labels each pair with the raycast oracle. Positions are rounded to `f32`
/// before labelling. Each source has its own random stream, so the result
/// does not depend on thread scheduling.
pub fn build_test_set(
    scene: &Scene,
    sources: &[DVec3],
    per_source: usize,
    seed: u64,
    clamp: f64,
) -> (VisibilityTestSet, TestSetReport) {
    let mut region = scene.bounds();
    for s in sources {
        region.grow(*s);
    }
    let region = widen(region);
    let per: Vec<(Vec<TestPair>, usize, usize)> = sources
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let src = s.as_vec3();
            let sd = src.as_dvec3();
            let mut pairs = Vec::with_capacity(per_source);
            let mut rejected = 0;
            let mut attempts = 0;
            while pairs.len() < per_source && attempts < per_source * ATTEMPTS_PER_TARGET {
                attempts += 1;
                let t = DVec3::new(
                    rng.random_range(region.min.x..=region.max.x),
                    rng.random_range(region.min.y..=region.max.y),
                    rng.random_range(region.min.z..=region.max.z),
                )
                .as_vec3();
                let td = t.as_dvec3();
                let dist = sd.distance(td);
                if !(MIN_TARGET_DISTANCE..=clamp).contains(&dist) {
                    rejected += 1;
                    continue;
                }
                let visible = scene
                    .oracle_visibility(sd, td)
                    .expect("pair is at least the minimum distance apart");
                pairs.push(TestPair {
                    source: src,
                    target: t,
                    visible,
                });
            }
            let short = per_source - pairs.len();
            (pairs, rejected, short)
        })
        .collect();
    let mut report = TestSetReport::default();
    let mut pairs = Vec::with_capacity(sources.len() * per_source);
    for (p, rejected, short) in per {
        report.rejected += rejected;
        report.shortfall += short;
        pairs.extend(p);
    }
    report.visible = pairs.iter().filter(|p| p.visible).count();
    report.occluded = pairs.len() - report.visible;
    if report.shortfall > 0 {
        log::warn!("{} targets could not be placed", report.shortfall);
    }
    (
        VisibilityTestSet {
            scene_hash: scene.hash(),
            pairs,
        },
        report,
    )
}

fn widen(b: Aabb) -> Aabb {
    if b.is_empty() {
        return Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0));
    }
    let mut out = b;
    for a in 0..3 {
        if out.max[a] - out.min[a] < 1.0 {
            let c = 0.5 * (out.max[a] + out.min[a]);
            out.min[a] = c - 0.5;
            out.max[a] = c + 0.5;
        }
    }
    out
}
