use std::path::Path;

use glam::DVec3;

use super::{read_file, write_file, FormatError, Reader, Writer};
use crate::encoding::{
    FfmConfig, FourierFeatures, Grid2dConfig, HashGrid3d, HashGridConfig, LevelSpacing,
    MultiResGrid2d, PeConfig, ShConfig, HASH_PRIMES,
};
use crate::geometry::{Aabb, SceneHash};
use crate::nn::{Activation, Mlp};
use crate::odf::{DirectionEncoder, OdfAtlas, OdfModel, PositionEncoder, TrainingMeta};
use crate::partition::{PartitionKind, PartitionScheme};
use crate::sphere::Projection;

pub const MODEL_MAGIC: [u8; 4] = *b"ODFM";
pub const MODEL_VERSION: u16 = 1;

/// A trained atlas together with the scene it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasFile {
    pub scene_hash: SceneHash,
    pub atlas: OdfAtlas,
}

impl AtlasFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        write_atlas(&self.atlas, self.scene_hash)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        read_atlas(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn vec3(w: &mut Writer, v: DVec3) {
    w.f64s(&v.to_array());
}

fn read_vec3(r: &mut Reader) -> Result<DVec3, FormatError> {
    Ok(DVec3::new(r.f64()?, r.f64()?, r.f64()?))
}

fn read_aabb(r: &mut Reader) -> Result<Aabb, FormatError> {
    Ok(Aabb::new(read_vec3(r)?, read_vec3(r)?))
}

fn invariant(e: impl std::fmt::Display) -> FormatError {
    FormatError::Invariant(e.to_string())
}

pub fn write_atlas(atlas: &OdfAtlas, scene_hash: SceneHash) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    w.u16(0);
    w.bytes(&scene_hash.0);
    for p in HASH_PRIMES {
        w.u64(p);
    }
    w.f64(atlas.bias());

    let s = atlas.scheme();
    w.u8(s.kind().tag());
    vec3(&mut w, s.origin());
    vec3(&mut w, s.max());
    vec3(&mut w, s.cell_size());
    for d in s.dims() {
        w.u32(d);
    }
    w.u32(s.active_cells().len() as u32);
    for &c in s.active_cells() {
        w.u32(c);
    }

    w.u32(atlas.models().len() as u32);
    for m in atlas.models() {
        write_model(&mut w, m);
    }
    w.buf
}

fn write_model(w: &mut Writer, m: &OdfModel<f32>) {
    w.u32(m.partition());
    vec3(w, m.bounds().min);
    vec3(w, m.bounds().max);
    w.f64(m.clamp());
    match m.position_encoder() {
        PositionEncoder::None => w.u8(0),
        PositionEncoder::Pe(c) => {
            w.u8(1);
            w.u32(c.n_freq);
        }
        PositionEncoder::Hash(g) => {
            w.u8(2);
            let c = g.config();
            for v in [
                c.levels,
                c.features,
                c.log2_table_size,
                c.base_resolution,
                c.max_resolution,
            ] {
                w.u32(v);
            }
            vec3(w, g.bounds().min);
            vec3(w, g.bounds().max);
            w.u64(g.features().len() as u64);
            w.f32s(g.features());
        }
        PositionEncoder::Ffm(f) => {
            w.u8(3);
            let c = f.config();
            w.u32(c.features);
            w.f64(c.sigma);
            w.u64(c.seed);
            w.f64s(f.matrix());
        }
    }
    match m.direction_encoder() {
        DirectionEncoder::None => w.u8(0),
        DirectionEncoder::Grid(g) => {
            w.u8(1);
            let c = g.config();
            for v in [
                c.levels,
                c.features,
                c.coarsest[0],
                c.coarsest[1],
                c.finest[0],
                c.finest[1],
            ] {
                w.u32(v);
            }
            w.u8(c.spacing.tag());
            w.u8(c.projection.tag());
            w.u64(g.features().len() as u64);
            w.f32s(g.features());
        }
        DirectionEncoder::Sh(c) => {
            w.u8(2);
            w.u32(c.degree);
        }
    }
    let mlp = m.mlp();
    w.u8(match mlp.activation() {
        Activation::Relu => 0,
    });
    w.u32(mlp.sizes().len() as u32);
    for &s in mlp.sizes() {
        w.u32(s as u32);
    }
    w.u64(mlp.params().len() as u64);
    w.f32s(mlp.params());

    let meta = m.meta();
    w.u64(meta.seed);
    w.f64(meta.lr);
    w.f64(meta.weight_decay);
    w.u32(meta.epochs);
    w.u32(meta.batch_size);
    w.u64(meta.steps);
    w.u32(meta.sources);
    w.u64(meta.rays);
    w.f64(meta.final_mse);
}

pub fn read_atlas(bytes: &[u8]) -> Result<AtlasFile, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(MODEL_MAGIC, MODEL_VERSION)?;
    let _reserved = r.u16()?;
    let scene_hash = SceneHash(r.array()?);
    for p in HASH_PRIMES {
        let found = r.u64()?;
        if found != p {
            return Err(invariant(format!("hash prime {found} differs from {p}")));
        }
    }
    let bias = r.f64()?;
    if !bias.is_finite() {
        return Err(invariant("non-finite bias"));
    }

    let kind = r.u8()?;
    let kind = PartitionKind::from_tag(kind)
        .ok_or_else(|| invariant(format!("unknown partition kind {kind}")))?;
    let origin = read_vec3(&mut r)?;
    let max = read_vec3(&mut r)?;
    let cell = read_vec3(&mut r)?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let n_active = r.u32()? as usize;
    let mut active = Vec::with_capacity(n_active.min(1 << 20));
    for _ in 0..n_active {
        active.push(r.u32()?);
    }
    let scheme =
        PartitionScheme::from_parts(kind, origin, max, cell, dims, active).map_err(invariant)?;

    let count = r.u32()? as usize;
    let mut models = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        r.record = Some(i as u64);
        models.push(read_model(&mut r)?);
    }
    r.record = None;
    r.finish()?;
    let atlas = OdfAtlas::new(scheme, models)
        .map_err(invariant)?
        .with_bias(bias);
    Ok(AtlasFile { scene_hash, atlas })
}

fn read_model(r: &mut Reader) -> Result<OdfModel<f32>, FormatError> {
    let partition = r.u32()?;
    let bounds = read_aabb(r)?;
    let clamp = r.f64()?;
    let position = match r.u8()? {
        0 => PositionEncoder::None,
        1 => PositionEncoder::Pe(PeConfig { n_freq: r.u32()? }),
        2 => {
            let c = HashGridConfig {
                levels: r.u32()?,
                features: r.u32()?,
                log2_table_size: r.u32()?,
                base_resolution: r.u32()?,
                max_resolution: r.u32()?,
            };
            let b = read_aabb(r)?;
            let len = r.u64()? as usize;
            let table = r.f32s(len)?;
            PositionEncoder::Hash(HashGrid3d::from_features(c, b, table).map_err(invariant)?)
        }
        3 => {
            let c = FfmConfig {
                features: r.u32()?,
                sigma: r.f64()?,
                seed: r.u64()?,
            };
            let matrix = r.f64s(3 * c.features as usize)?;
            PositionEncoder::Ffm(FourierFeatures::from_matrix(c, matrix).map_err(invariant)?)
        }
        t => return Err(invariant(format!("unknown position encoder {t}"))),
    };
    let direction = match r.u8()? {
        0 => DirectionEncoder::None,
        1 => {
            let v: Vec<u32> = (0..6).map(|_| r.u32()).collect::<Result<_, _>>()?;
            let spacing = r.u8()?;
            let projection = r.u8()?;
            let c = Grid2dConfig {
                levels: v[0],
                features: v[1],
                coarsest: [v[2], v[3]],
                finest: [v[4], v[5]],
                spacing: LevelSpacing::from_tag(spacing)
                    .ok_or_else(|| invariant(format!("unknown level spacing {spacing}")))?,
                projection: Projection::from_tag(projection)
                    .ok_or_else(|| invariant(format!("unknown projection {projection}")))?,
            };
            let len = r.u64()? as usize;
            let table = r.f32s(len)?;
            DirectionEncoder::Grid(MultiResGrid2d::from_features(c, table).map_err(invariant)?)
        }
        2 => {
            let c = ShConfig { degree: r.u32()? };
            c.validate().map_err(invariant)?;
            DirectionEncoder::Sh(c)
        }
        t => return Err(invariant(format!("unknown direction encoder {t}"))),
    };
    let act = r.u8()?;
    if act != 0 {
        return Err(invariant(format!("unknown activation {act}")));
    }
    let n_sizes = r.u32()? as usize;
    if n_sizes > 1024 {
        return Err(invariant(format!("{n_sizes} layers")));
    }
    let sizes: Vec<usize> = (0..n_sizes)
        .map(|_| r.u32().map(|s| s as usize))
        .collect::<Result<_, _>>()?;
    let len = r.u64()? as usize;
    let params = r.f32s(len)?;
    let mlp = Mlp::from_params(&sizes, params).map_err(invariant)?;
    let meta = TrainingMeta {
        seed: r.u64()?,
        lr: r.f64()?,
        weight_decay: r.f64()?,
        epochs: r.u32()?,
        batch_size: r.u32()?,
        steps: r.u64()?,
        sources: r.u32()?,
        rays: r.u64()?,
        final_mse: r.f64()?,
    };
    OdfModel::from_parts(partition, bounds, position, direction, mlp, clamp, meta)
        .map_err(invariant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::ShConfig;
    use crate::nn::MlpShape;
    use crate::odf::{DirectionEncoding, ModelConfig, PositionEncoding};
    use crate::partition::Resolution;

    fn atlas(cfg: &ModelConfig) -> OdfAtlas {
        let positions = [DVec3::new(0.0, 0.0, 1.0), DVec3::new(9.0, 4.0, 1.0)];
        let scheme = PartitionScheme::build(
            &positions,
            PartitionKind::Grid2d,
            Resolution::Cells([2, 2, 1]),
        )
        .unwrap();
        let models = scheme
            .active_cells()
            .iter()
            .map(|&id| {
                OdfModel::<f64>::new(id, scheme.cell_bounds(id), cfg, 5)
                    .unwrap()
                    .freeze()
            })
            .collect();
        OdfAtlas::new(scheme, models).unwrap().with_bias(0.25)
    }

    fn small() -> ModelConfig {
        ModelConfig {
            position: PositionEncoding::Hash(HashGridConfig {
                levels: 2,
                log2_table_size: 6,
                ..Default::default()
            }),
            direction: DirectionEncoding::Grid(Grid2dConfig {
                levels: 2,
                coarsest: [8, 4],
                finest: [16, 8],
                ..Default::default()
            }),
            mlp: MlpShape::new(8, 2),
            clamp: 50.0,
        }
    }

    #[test]
    fn round_trip_every_encoder() {
        let configs = [
            small(),
            ModelConfig {
                position: PositionEncoding::Ffm(FfmConfig {
                    features: 4,
                    ..Default::default()
                }),
                direction: DirectionEncoding::Sh(ShConfig { degree: 3 }),
                ..small()
            },
            ModelConfig {
                position: PositionEncoding::Pe(PeConfig { n_freq: 2 }),
                ..small()
            },
            ModelConfig::no_mapping(MlpShape::new(4, 1), 100.0),
        ];
        for cfg in &configs {
            let a = atlas(cfg);
            let file = AtlasFile {
                scene_hash: SceneHash([3; 32]),
                atlas: a,
            };
            let bytes = file.to_bytes();
            let back = AtlasFile::from_bytes(&bytes).unwrap();
            assert_eq!(back, file);
            assert_eq!(back.atlas.bias(), 0.25);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let file = AtlasFile {
            scene_hash: SceneHash::default(),
            atlas: atlas(&small()),
        };
        let bytes = file.to_bytes();
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(
            AtlasFile::from_bytes(&bad),
            Err(FormatError::UnsupportedVersion { .. })
        ));
        match AtlasFile::from_bytes(&bytes[..bytes.len() - 20]) {
            Err(FormatError::Truncated { record, .. }) => assert_eq!(record, Some(1)),
            other => panic!("{other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            AtlasFile::from_bytes(&extra),
            Err(FormatError::TrailingBytes(1))
        ));
        // Perturb the first hash prime.
        let mut bad = bytes;
        bad[8 + 32] ^= 1;
        assert!(matches!(
            AtlasFile::from_bytes(&bad),
            Err(FormatError::Invariant(_))
        ));
    }
}
