//! Per-partition ODF models, their training, and the partitioned atlas that
//! answers visibility queries.

use std::sync::atomic::{AtomicU64, Ordering};

use glam::DVec3;
use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{
    pe_encode_into, sh_eval_into, EncodingError, FfmConfig, FourierFeatures, Grid2dConfig,
    HashGrid3d, HashGridConfig, MultiResGrid2d, PeConfig, ShConfig,
};
use crate::geometry::{Aabb, UNIT_TOLERANCE};
use crate::nn::{
    adam_step, mse_loss_batch, split_tensors, split_tensors_ref, AdamConfig, AdamState,
    BatchWorkspace, Mlp, MlpShape, NnError, Scratch, TensorSpec,
};
use crate::partition::{PartitionError, PartitionId, PartitionScheme};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum OdfError {
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no training rays")]
    EmptyRays,
    #[error("data integrity: {0}")]
    DataIntegrity(String),
    #[error("direction is not unit length (norm {norm})")]
    NonUnitDirection { norm: f64 },
    #[error("position ({:.3}, {:.3}, {:.3}) is outside partition {partition}", .point.x, .point.y, .point.z)]
    OutsidePartition {
        partition: PartitionId,
        point: DVec3,
    },
    #[error("source and target coincide")]
    DegeneratePair,
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PositionEncoding {
    /// Raw position normalised to `[-1, 1]^3` in the partition box.
    None,
    Pe(PeConfig),
    Hash(HashGridConfig),
    Ffm(FfmConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DirectionEncoding {
    /// Raw unit direction.
    None,
    Grid(Grid2dConfig),
    Sh(ShConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub position: PositionEncoding,
    pub direction: DirectionEncoding,
    pub mlp: MlpShape,
    /// Distances are regressed as `d / clamp` and clamped to `[0, clamp]` on output.
    pub clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            position: PositionEncoding::Pe(PeConfig::default()),
            direction: DirectionEncoding::Grid(Grid2dConfig::default()),
            mlp: MlpShape::new(128, 4),
            clamp: crate::geometry::DEFAULT_CLAMP_DISTANCE,
        }
    }
}

impl ModelConfig {
    /// The raw-input baseline with the same MLP.
    pub fn no_mapping(mlp: MlpShape, clamp: f64) -> Self {
        ModelConfig {
            position: PositionEncoding::None,
            direction: DirectionEncoding::None,
            mlp,
            clamp,
        }
    }

    pub fn position_width(&self) -> usize {
        match self.position {
            PositionEncoding::None => 3,
            PositionEncoding::Pe(c) => c.output_dim(3),
            PositionEncoding::Hash(c) => c.output_dim(),
            PositionEncoding::Ffm(c) => c.output_dim(),
        }
    }

    pub fn direction_width(&self) -> usize {
        match self.direction {
            DirectionEncoding::None => 3,
            DirectionEncoding::Grid(c) => c.output_dim(),
            DirectionEncoding::Sh(c) => c.output_dim(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.position_width() + self.direction_width()
    }

    pub fn validate(&self) -> Result<(), OdfError> {
        if !(self.clamp > 0.0) || !self.clamp.is_finite() {
            return Err(OdfError::Config(format!(
                "clamp must be positive, got {}",
                self.clamp
            )));
        }
        if self.mlp.width == 0 {
            return Err(OdfError::Config("MLP width must be positive".into()));
        }
        match self.position {
            PositionEncoding::Hash(c) => c.validate()?,
            PositionEncoding::Ffm(c) => {
                FourierFeatures::new(c)?;
            }
            PositionEncoding::Pe(c) if c.n_freq == 0 => {
                return Err(OdfError::Config("PE needs at least one frequency".into()))
            }
            _ => {}
        }
        match self.direction {
            DirectionEncoding::Grid(c) => {
                c.resolutions()?;
            }
            DirectionEncoding::Sh(c) => c.validate()?,
            DirectionEncoding::None => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 4096,
            epochs: 30,
            seed: 0,
        }
    }
}

/// Training provenance stored with each model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub steps: u64,
    pub sources: u32,
    pub rays: u64,
    /// Mean normalised MSE over the last epoch.
    pub final_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub partition: PartitionId,
    /// Mean normalised MSE per epoch.
    pub epoch_loss: Vec<f64>,
    pub final_mse: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PositionEncoder<T> {
    None,
    Pe(PeConfig),
    Hash(HashGrid3d<T>),
    Ffm(FourierFeatures),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DirectionEncoder<T> {
    None,
    Grid(MultiResGrid2d<T>),
    Sh(ShConfig),
}

impl<T: Real> PositionEncoder<T> {
    pub fn output_dim(&self) -> usize {
        match self {
            PositionEncoder::None => 3,
            PositionEncoder::Pe(c) => c.output_dim(3),
            PositionEncoder::Hash(h) => h.output_dim(),
            PositionEncoder::Ffm(f) => f.output_dim(),
        }
    }

    pub fn learnable(&self) -> usize {
        match self {
            PositionEncoder::Hash(h) => h.features().len(),
            _ => 0,
        }
    }

    fn cast<U: Real>(&self) -> PositionEncoder<U> {
        match self {
            PositionEncoder::None => PositionEncoder::None,
            PositionEncoder::Pe(c) => PositionEncoder::Pe(*c),
            PositionEncoder::Hash(h) => PositionEncoder::Hash(h.cast()),
            PositionEncoder::Ffm(f) => PositionEncoder::Ffm(f.clone()),
        }
    }
}

impl<T: Real> DirectionEncoder<T> {
    pub fn output_dim(&self) -> usize {
        match self {
            DirectionEncoder::None => 3,
            DirectionEncoder::Grid(g) => g.output_dim(),
            DirectionEncoder::Sh(c) => c.output_dim(),
        }
    }

    pub fn learnable(&self) -> usize {
        match self {
            DirectionEncoder::Grid(g) => g.features().len(),
            _ => 0,
        }
    }

    fn cast<U: Real>(&self) -> DirectionEncoder<U> {
        match self {
            DirectionEncoder::None => DirectionEncoder::None,
            DirectionEncoder::Grid(g) => DirectionEncoder::Grid(g.cast()),
            DirectionEncoder::Sh(c) => DirectionEncoder::Sh(*c),
        }
    }
}

/// Reusable buffers for single queries.
#[derive(Debug, Default, Clone)]
pub struct QueryScratch<T> {
    input: Vec<T>,
    sh: Vec<f64>,
    mlp: Scratch<T>,
}

/// One partition's ODF: encoders, MLP, clamp distance and normalisation box.
#[derive(Debug, Clone, PartialEq)]
pub struct OdfModel<T> {
    partition: PartitionId,
    bounds: Aabb,
    position: PositionEncoder<T>,
    direction: DirectionEncoder<T>,
    mlp: Mlp<T>,
    clamp: f64,
    meta: TrainingMeta,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, partition: PartitionId, stream: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(partition as u64)) ^ stream)
}

/// Box used to normalise positions; degenerate axes are widened to 1 m.
fn normalisation_box(b: Aabb) -> Aabb {
    let mut out = b;
    for a in 0..3 {
        if !(b.max[a] > b.min[a]) {
            out.min[a] = b.min[a] - 0.5;
            out.max[a] = b.min[a] + 0.5;
        }
    }
    out
}

impl<T: Real> OdfModel<T> {
    /// Fresh, untrained model for a partition box.
    pub fn new(
        partition: PartitionId,
        bounds: Aabb,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self, OdfError> {
        config.validate()?;
        if bounds.is_empty() {
            return Err(OdfError::Config("empty partition bounds".into()));
        }
        let bounds = normalisation_box(bounds);
        let position = match config.position {
            PositionEncoding::None => PositionEncoder::None,
            PositionEncoding::Pe(c) => PositionEncoder::Pe(c),
            PositionEncoding::Hash(c) => {
                PositionEncoder::Hash(HashGrid3d::new(c, bounds, derive_seed(seed, partition, 1))?)
            }
            PositionEncoding::Ffm(c) => PositionEncoder::Ffm(FourierFeatures::new(c)?),
        };
        let direction = match config.direction {
            DirectionEncoding::None => DirectionEncoder::None,
            DirectionEncoding::Grid(c) => {
                DirectionEncoder::Grid(MultiResGrid2d::new(c, derive_seed(seed, partition, 2))?)
            }
            DirectionEncoding::Sh(c) => DirectionEncoder::Sh(c),
        };
        let mlp = Mlp::new(
            &config.mlp.layer_sizes(config.input_width()),
            derive_seed(seed, partition, 3),
        )?;
        Ok(OdfModel {
            partition,
            bounds,
            position,
            direction,
            mlp,
            clamp: config.clamp,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    /// Assembles a model from stored parts, checking widths.
    pub fn from_parts(
        partition: PartitionId,
        bounds: Aabb,
        position: PositionEncoder<T>,
        direction: DirectionEncoder<T>,
        mlp: Mlp<T>,
        clamp: f64,
        meta: TrainingMeta,
    ) -> Result<Self, OdfError> {
        let width = position.output_dim() + direction.output_dim();
        if mlp.input_width() != width {
            return Err(OdfError::Nn(NnError::WidthMismatch {
                expected: width,
                got: mlp.input_width(),
            }));
        }
        if !(clamp > 0.0) || bounds.is_empty() {
            return Err(OdfError::Config("bad clamp or bounds".into()));
        }
        Ok(OdfModel {
            partition,
            bounds,
            position,
            direction,
            mlp,
            clamp,
            meta,
        })
    }

    pub fn partition(&self) -> PartitionId {
        self.partition
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn position_encoder(&self) -> &PositionEncoder<T> {
        &self.position
    }

    pub fn direction_encoder(&self) -> &DirectionEncoder<T> {
        &self.direction
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    /// Learnable parameters: encoder tables plus MLP weights and biases.
    pub fn param_count(&self) -> usize {
        self.position.learnable() + self.direction.learnable() + self.mlp.param_count()
    }

    pub fn cast<U: Real>(&self) -> OdfModel<U> {
        OdfModel {
            partition: self.partition,
            bounds: self.bounds,
            position: self.position.cast(),
            direction: self.direction.cast(),
            mlp: self.mlp.cast(),
            clamp: self.clamp,
            meta: self.meta,
        }
    }

    /// f32 copy for inference.
    pub fn freeze(&self) -> OdfModel<f32> {
        self.cast()
    }

    fn centred(&self, p: DVec3) -> [f64; 3] {
        let c = self.bounds.center();
        let h = self.bounds.extent() * 0.5;
        [(p.x - c.x) / h.x, (p.y - c.y) / h.y, (p.z - c.z) / h.z]
    }

    fn unit(&self, p: DVec3) -> DVec3 {
        (p - self.bounds.min) / self.bounds.extent()
    }

    fn encode_position(&self, p: DVec3, out: &mut [T]) {
        match &self.position {
            PositionEncoder::None => {
                for (o, v) in out.iter_mut().zip(self.centred(p)) {
                    *o = T::of(v);
                }
            }
            PositionEncoder::Pe(c) => pe_encode_into(&self.centred(p), c.n_freq, out),
            PositionEncoder::Hash(h) => {
                h.encode_into(p, out);
            }
            PositionEncoder::Ffm(f) => f.encode_into(self.unit(p), out),
        }
    }

    fn encode_direction(&self, d: DVec3, out: &mut [T], sh: &mut Vec<f64>) {
        match &self.direction {
            DirectionEncoder::None => {
                out[0] = T::of(d.x);
                out[1] = T::of(d.y);
                out[2] = T::of(d.z);
            }
            DirectionEncoder::Grid(g) => g.encode_into(d, out),
            DirectionEncoder::Sh(c) => {
                sh.resize(c.output_dim(), 0.0);
                sh_eval_into(d, c.degree, sh);
                for (o, v) in out.iter_mut().zip(sh.iter()) {
                    *o = T::of(*v);
                }
            }
        }
    }

    /// Writes the MLP input for `(p, d)`; `out.len()` must be the input width.
    pub fn encode_into(&self, p: DVec3, d: DVec3, out: &mut [T], scratch_sh: &mut Vec<f64>) {
        let pw = self.position.output_dim();
        let (a, b) = out.split_at_mut(pw);
        self.encode_position(p, a);
        self.encode_direction(d, b, scratch_sh);
    }

    #[inline]
    fn denormalise(&self, y: f64) -> f64 {
        (y * self.clamp).clamp(0.0, self.clamp)
    }

    /// Unchecked query: one encode and one MLP forward pass.
    #[inline]
    pub fn distance_with(&self, p: DVec3, d: DVec3, scratch: &mut QueryScratch<T>) -> f64 {
        let QueryScratch { input, sh, mlp } = scratch;
        input.resize(self.input_width(), T::zero());
        self.encode_into(p, d, input, sh);
        self.denormalise(self.mlp.forward_with(input, mlp).f64())
    }

    /// Distance in metres along unit `d` from `p`, in `[0, clamp]`.
    pub fn query_distance(&self, p: DVec3, d: DVec3) -> Result<f64, OdfError> {
        check_unit(d)?;
        if !self.bounds.padded(1e-6).contains(p) {
            return Err(OdfError::OutsidePartition {
                partition: self.partition,
                point: p,
            });
        }
        Ok(self.distance_with(p, d, &mut QueryScratch::default()))
    }
}

fn check_unit(d: DVec3) -> Result<(), OdfError> {
    let norm = d.length();
    if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
        return Err(OdfError::NonUnitDirection { norm });
    }
    Ok(())
}

/// Rays of one partition: `distances[k * P + j]` is the hit distance from
/// `sources[k]` along `directions[j]`.
#[derive(Debug, Clone, Copy)]
pub struct RaySet<'a> {
    pub sources: &'a [DVec3],
    pub directions: &'a [DVec3],
    pub distances: &'a [f32],
}

impl RaySet<'_> {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    fn validate(&self, clamp: f64) -> Result<(), OdfError> {
        if self.sources.is_empty() || self.directions.is_empty() {
            return Err(OdfError::EmptyRays);
        }
        if self.distances.len() != self.sources.len() * self.directions.len() {
            return Err(OdfError::DataIntegrity(format!(
                "{} distances for {} sources x {} directions",
                self.distances.len(),
                self.sources.len(),
                self.directions.len()
            )));
        }
        if let Some(bad) = self
            .distances
            .iter()
            .position(|&x| !(x >= 0.0) || x as f64 > clamp * (1.0 + 1e-6))
        {
            return Err(OdfError::DataIntegrity(format!(
                "distance {} at ray {bad} is outside [0, {clamp}]",
                self.distances[bad]
            )));
        }
        Ok(())
    }
}

/// Per-input precomputation shared across training steps.
struct Prepared {
    pw: usize,
    dw: usize,
    pos_fixed: Vec<f64>,
    pos_slots: Vec<u32>,
    pos_weights: Vec<f64>,
    pos_span: usize,
    dir_fixed: Vec<f64>,
    dir_texels: Vec<u32>,
    dir_weights: Vec<f64>,
    dir_span: usize,
}

impl Prepared {
    fn new(model: &OdfModel<f64>, rays: &RaySet) -> Self {
        let pw = model.position.output_dim();
        let dw = model.direction.output_dim();
        let mut p = Prepared {
            pw,
            dw,
            pos_fixed: Vec::new(),
            pos_slots: Vec::new(),
            pos_weights: Vec::new(),
            pos_span: 0,
            dir_fixed: Vec::new(),
            dir_texels: Vec::new(),
            dir_weights: Vec::new(),
            dir_span: 0,
        };
        match &model.position {
            PositionEncoder::Hash(h) => {
                p.pos_span = 8 * h.resolutions().len();
                p.pos_slots = vec![0; rays.sources.len() * p.pos_span];
                p.pos_weights = vec![0.0; rays.sources.len() * p.pos_span];
                for (k, s) in rays.sources.iter().enumerate() {
                    let r = k * p.pos_span..(k + 1) * p.pos_span;
                    h.footprint_into(*s, &mut p.pos_slots[r.clone()], &mut p.pos_weights[r]);
                }
            }
            _ => {
                p.pos_fixed = vec![0.0; rays.sources.len() * pw];
                for (k, s) in rays.sources.iter().enumerate() {
                    model.encode_position(*s, &mut p.pos_fixed[k * pw..(k + 1) * pw]);
                }
            }
        }
        match &model.direction {
            DirectionEncoder::Grid(g) => {
                p.dir_span = 4 * g.resolutions().len();
                p.dir_texels = vec![0; rays.directions.len() * p.dir_span];
                p.dir_weights = vec![0.0; rays.directions.len() * p.dir_span];
                for (j, d) in rays.directions.iter().enumerate() {
                    let r = j * p.dir_span..(j + 1) * p.dir_span;
                    g.footprint_into(*d, &mut p.dir_texels[r.clone()], &mut p.dir_weights[r]);
                }
            }
            _ => {
                let mut sh = Vec::new();
                p.dir_fixed = vec![0.0; rays.directions.len() * dw];
                for (j, d) in rays.directions.iter().enumerate() {
                    model.encode_direction(*d, &mut p.dir_fixed[j * dw..(j + 1) * dw], &mut sh);
                }
            }
        }
        p
    }

    fn fill_row(&self, model: &OdfModel<f64>, k: usize, j: usize, row: &mut [f64]) {
        let (a, b) = row.split_at_mut(self.pw);
        match &model.position {
            PositionEncoder::Hash(h) => {
                let r = k * self.pos_span..(k + 1) * self.pos_span;
                h.gather(&self.pos_slots[r.clone()], &self.pos_weights[r], a);
            }
            _ => a.copy_from_slice(&self.pos_fixed[k * self.pw..(k + 1) * self.pw]),
        }
        match &model.direction {
            DirectionEncoder::Grid(g) => {
                let r = j * self.dir_span..(j + 1) * self.dir_span;
                g.gather(&self.dir_texels[r.clone()], &self.dir_weights[r], b);
            }
            _ => b.copy_from_slice(&self.dir_fixed[j * self.dw..(j + 1) * self.dw]),
        }
    }
}

/// Fits a fresh model to one partition's rays by minimising normalised MSE.
pub fn train_partition(
    partition: PartitionId,
    bounds: Aabb,
    rays: RaySet,
    config: &ModelConfig,
    train: &TrainConfig,
) -> Result<(OdfModel<f64>, TrainReport), OdfError> {
    rays.validate(config.clamp)?;
    let check_box = bounds.padded(1e-6 * (1.0 + bounds.extent().max_element()));
    if let Some(s) = rays.sources.iter().find(|s| !check_box.contains(**s)) {
        return Err(OdfError::DataIntegrity(format!(
            "source ({:.3}, {:.3}, {:.3}) lies outside partition {partition}",
            s.x, s.y, s.z
        )));
    }
    if train.batch_size == 0 {
        return Err(OdfError::Config("batch size must be positive".into()));
    }
    let mut model = OdfModel::<f64>::new(partition, bounds, config, train.seed)?;
    let report = fit(&mut model, rays, train)?;
    Ok((model, report))
}

/// Continues training an existing model (used by `train_partition`).
pub fn fit(
    model: &mut OdfModel<f64>,
    rays: RaySet,
    train: &TrainConfig,
) -> Result<TrainReport, OdfError> {
    rays.validate(model.clamp)?;
    let prep = Prepared::new(model, &rays);
    let p = rays.directions.len();
    let n = rays.len();
    let width = model.input_width();
    let inv_clamp = 1.0 / model.clamp;
    let targets: Vec<f64> = rays
        .distances
        .iter()
        .map(|&x| (x as f64 * inv_clamp).min(1.0))
        .collect();

    let mlp_specs = model.mlp.tensor_specs();
    let mut specs = mlp_specs.clone();
    let grid_len = model.direction.learnable();
    let hash_len = model.position.learnable();
    if grid_len > 0 {
        specs.push(TensorSpec::new(grid_len, false));
    }
    if hash_len > 0 {
        specs.push(TensorSpec::new(hash_len, false));
    }
    let mut adam = AdamState::new(train.adam, specs);
    let mut mlp_grad = vec![0.0; model.mlp.param_count()];
    let mut grid_grad = vec![0.0; grid_len];
    let mut hash_grad = vec![0.0; hash_len];
    let learn_inputs = grid_len > 0 || hash_len > 0;

    let batch = train.batch_size.min(n);
    let mut x = vec![0.0; batch * width];
    let mut y = vec![0.0; batch];
    let mut dy = vec![0.0; batch];
    let mut dx = vec![0.0; if learn_inputs { batch * width } else { 0 }];
    let mut ws = BatchWorkspace::default();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train.seed, model.partition, 4));
    let mut epoch_loss = Vec::with_capacity(train.epochs as usize);
    let (pos_span, dir_span) = (prep.pos_span, prep.dir_span);
    let pw = prep.pw;

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let rows = chunk.len();
            for (r, &idx) in chunk.iter().enumerate() {
                let (k, j) = (idx as usize / p, idx as usize % p);
                prep.fill_row(model, k, j, &mut x[r * width..(r + 1) * width]);
                y[r] = targets[idx as usize];
            }
            let preds = model.mlp.forward_batch(&x[..rows * width], rows, &mut ws)?;
            let loss = mse_loss_batch(preds, &y[..rows], &mut dy[..rows]);
            sum += loss * rows as f64;

            mlp_grad.fill(0.0);
            if learn_inputs {
                model.mlp.backward_batch(
                    &mut ws,
                    &dy[..rows],
                    &mut mlp_grad,
                    Some(&mut dx[..rows * width]),
                )?;
                grid_grad.fill(0.0);
                hash_grad.fill(0.0);
                for (r, &idx) in chunk.iter().enumerate() {
                    let (k, j) = (idx as usize / p, idx as usize % p);
                    let row = &dx[r * width..(r + 1) * width];
                    if let DirectionEncoder::Grid(g) = &model.direction {
                        let s = j * dir_span..(j + 1) * dir_span;
                        g.accumulate_grad(
                            &prep.dir_texels[s.clone()],
                            &prep.dir_weights[s],
                            &row[pw..],
                            &mut grid_grad,
                        );
                    }
                    if let PositionEncoder::Hash(h) = &model.position {
                        let s = k * pos_span..(k + 1) * pos_span;
                        h.accumulate_grad(
                            &prep.pos_slots[s.clone()],
                            &prep.pos_weights[s],
                            &row[..pw],
                            &mut hash_grad,
                        );
                    }
                }
            } else {
                model
                    .mlp
                    .backward_batch(&mut ws, &dy[..rows], &mut mlp_grad, None)?;
            }

            let OdfModel {
                mlp,
                direction,
                position,
                ..
            } = &mut *model;
            let mut tensors = split_tensors(mlp.params_mut(), &mlp_specs);
            let mut grads = split_tensors_ref(&mlp_grad, &mlp_specs);
            if let DirectionEncoder::Grid(g) = direction {
                tensors.push(g.features_mut());
                grads.push(&grid_grad);
            }
            if let PositionEncoder::Hash(h) = position {
                tensors.push(h.features_mut());
                grads.push(&hash_grad);
            }
            adam_step(&mut tensors, &grads, &mut adam)?;
        }
        let mean = sum / n as f64;
        debug!(
            "partition {} epoch {epoch}: mse {mean:.3e}",
            model.partition
        );
        epoch_loss.push(mean);
    }
    let final_mse = epoch_loss.last().copied().unwrap_or(f64::NAN);
    model.meta = TrainingMeta {
        seed: train.seed,
        lr: train.adam.lr,
        weight_decay: train.adam.weight_decay,
        epochs: model.meta.epochs + train.epochs,
        batch_size: train.batch_size as u32,
        steps: model.meta.steps + adam.step_count(),
        sources: rays.sources.len() as u32,
        rays: rays.len() as u64,
        final_mse,
    };
    Ok(TrainReport {
        partition: model.partition,
        epoch_loss,
        final_mse,
        steps: adam.step_count(),
    })
}

/// Mean normalised squared error of `model` over `rays`.
pub fn evaluate_mse<T: Real>(model: &OdfModel<T>, rays: RaySet) -> Result<f64, OdfError> {
    rays.validate(model.clamp)?;
    let width = model.input_width();
    let chunk = 1024;
    let mut x = vec![T::zero(); chunk * width];
    let mut ws = BatchWorkspace::default();
    let mut sh = Vec::new();
    let mut sum = 0.0;
    let p = rays.directions.len();
    let n = rays.len();
    let mut start = 0;
    while start < n {
        let rows = chunk.min(n - start);
        for r in 0..rows {
            let idx = start + r;
            let (k, j) = (idx / p, idx % p);
            model.encode_into(
                rays.sources[k],
                rays.directions[j],
                &mut x[r * width..(r + 1) * width],
                &mut sh,
            );
        }
        let preds = model.mlp.forward_batch(&x[..rows * width], rows, &mut ws)?;
        for (r, y) in preds.iter().enumerate() {
            let pred = model.denormalise(y.f64()) / model.clamp;
            let target = (rays.distances[start + r] as f64 / model.clamp).min(1.0);
            sum += (pred - target).powi(2);
        }
        start += rows;
    }
    Ok(sum / n as f64)
}

/// Anything that can answer a line-of-sight query.
pub trait VisibilityPredictor {
    fn predict_visibility(&self, s: DVec3, t: DVec3) -> Result<bool, OdfError>;
}

/// Reusable buffers for batched atlas inference.
#[derive(Debug, Default)]
pub struct BatchScratch {
    order: Vec<usize>,
    slots: Vec<usize>,
    x: Vec<f32>,
    sh: Vec<f64>,
    ws: BatchWorkspace<f32>,
}

/// A partition scheme with one frozen model per active cell.
#[derive(Debug)]
pub struct OdfAtlas {
    scheme: PartitionScheme,
    models: Vec<OdfModel<f32>>,
    bias: f64,
    counters: Option<Box<[AtomicU64]>>,
}

impl Clone for OdfAtlas {
    fn clone(&self) -> Self {
        OdfAtlas {
            scheme: self.scheme.clone(),
            models: self.models.clone(),
            bias: self.bias,
            counters: self.counters.as_ref().map(|c| {
                c.iter()
                    .map(|a| AtomicU64::new(a.load(Ordering::Relaxed)))
                    .collect()
            }),
        }
    }
}

impl PartialEq for OdfAtlas {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme && self.models == other.models && self.bias == other.bias
    }
}

impl OdfAtlas {
    /// `models` must hold exactly one model per active cell, in any order.
    pub fn new(scheme: PartitionScheme, mut models: Vec<OdfModel<f32>>) -> Result<Self, OdfError> {
        models.sort_by_key(|m| m.partition);
        let ids: Vec<PartitionId> = models.iter().map(|m| m.partition).collect();
        if ids != scheme.active_cells() {
            return Err(OdfError::DataIntegrity(format!(
                "atlas has models for {} partitions, scheme has {} active cells (or ids differ)",
                ids.len(),
                scheme.len()
            )));
        }
        Ok(OdfAtlas {
            scheme,
            models,
            bias: 0.0,
            counters: None,
        })
    }

    /// Enables per-model access counters.
    pub fn with_instrumentation(mut self) -> Self {
        self.counters = Some((0..self.models.len()).map(|_| AtomicU64::new(0)).collect());
        self
    }

    /// Safety margin subtracted from predicted distances (default 0).
    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn scheme(&self) -> &PartitionScheme {
        &self.scheme
    }

    pub fn models(&self) -> &[OdfModel<f32>] {
        &self.models
    }

    pub fn model(&self, id: PartitionId) -> Option<&OdfModel<f32>> {
        self.scheme.slot_of(id).map(|i| &self.models[i])
    }

    /// Per-model access counts in active-cell order, if instrumented.
    pub fn access_counts(&self) -> Option<Vec<u64>> {
        self.counters
            .as_ref()
            .map(|c| c.iter().map(|a| a.load(Ordering::Relaxed)).collect())
    }

    pub fn reset_counters(&self) {
        if let Some(c) = &self.counters {
            for a in c.iter() {
                a.store(0, Ordering::Relaxed);
            }
        }
    }

    /// Locates the model owning `s`, bumping its counter.
    #[inline]
    pub fn locate(&self, s: DVec3) -> Result<usize, OdfError> {
        let id = self.scheme.partition_of(s)?;
        let slot = self.scheme.slot_of(id).expect("active cell has a model");
        if let Some(c) = &self.counters {
            c[slot].fetch_add(1, Ordering::Relaxed);
        }
        Ok(slot)
    }

    pub fn query_distance(&self, s: DVec3, d: DVec3) -> Result<f64, OdfError> {
        check_unit(d)?;
        let slot = self.locate(s)?;
        Ok(self.models[slot].distance_with(s, d, &mut QueryScratch::default()))
    }

    /// Visibility from `s` to `t` reusing caller buffers.
    #[inline]
    pub fn predict_visibility_with(
        &self,
        s: DVec3,
        t: DVec3,
        scratch: &mut QueryScratch<f32>,
    ) -> Result<bool, OdfError> {
        let delta = t - s;
        let dist = delta.length();
        if dist == 0.0 {
            return Err(OdfError::DegeneratePair);
        }
        let slot = self.locate(s)?;
        let model = &self.models[slot];
        if dist > model.clamp {
            return Ok(false);
        }
        let pred = model.distance_with(s, delta / dist, scratch) - self.bias;
        Ok(pred > dist)
    }

    /// Batched visibility; queries are grouped by partition and each group
    /// runs as one GEMM pass. Errors abort the whole batch.
    pub fn predict_batch(
        &self,
        pairs: &[(DVec3, DVec3)],
        out: &mut Vec<bool>,
        scratch: &mut BatchScratch,
    ) -> Result<(), OdfError> {
        out.clear();
        out.resize(pairs.len(), false);
        let BatchScratch {
            order,
            slots,
            x,
            sh,
            ws,
        } = scratch;
        slots.clear();
        for (s, t) in pairs {
            if *s == *t {
                return Err(OdfError::DegeneratePair);
            }
            slots.push(self.locate(*s)?);
        }
        order.clear();
        order.extend(0..pairs.len());
        order.sort_by_key(|&i| slots[i]);
        let mut start = 0;
        while start < order.len() {
            let slot = slots[order[start]];
            let mut end = start;
            while end < order.len() && slots[order[end]] == slot {
                end += 1;
            }
            let model = &self.models[slot];
            let width = model.input_width();
            let group = &order[start..end];
            x.resize(group.len() * width, 0.0);
            for (r, &i) in group.iter().enumerate() {
                let (s, t) = pairs[i];
                let d = (t - s).normalize();
                model.encode_into(s, d, &mut x[r * width..(r + 1) * width], sh);
            }
            let preds = model
                .mlp
                .forward_batch(&x[..group.len() * width], group.len(), ws)?;
            for (&i, y) in group.iter().zip(preds) {
                let (s, t) = pairs[i];
                let dist = (t - s).length();
                out[i] = dist <= model.clamp && model.denormalise(*y as f64) - self.bias > dist;
            }
            start = end;
        }
        Ok(())
    }

    /// Learnable parameters summed over all partitions.
    pub fn param_count(&self) -> usize {
        self.models.iter().map(|m| m.param_count()).sum()
    }
}

impl VisibilityPredictor for OdfAtlas {
    fn predict_visibility(&self, s: DVec3, t: DVec3) -> Result<bool, OdfError> {
        self.predict_visibility_with(s, t, &mut QueryScratch::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::LevelSpacing;
    use crate::partition::{PartitionKind, Resolution};
    use crate::sphere::fibonacci_directions;

    fn small_grid() -> Grid2dConfig {
        Grid2dConfig {
            levels: 4,
            features: 2,
            coarsest: [8, 4],
            finest: [32, 16],
            spacing: LevelSpacing::Linear,
            ..Default::default()
        }
    }

    fn unit_box() -> Aabb {
        Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0))
    }

    #[test]
    fn config_widths() {
        let c = ModelConfig::default();
        assert_eq!(c.input_width(), 68);
        assert_eq!(
            ModelConfig::no_mapping(MlpShape::new(128, 4), 100.0).input_width(),
            6
        );
        let m = OdfModel::<f64>::new(
            0,
            unit_box(),
            &ModelConfig::no_mapping(MlpShape::new(128, 4), 100.0),
            0,
        )
        .unwrap();
        assert_eq!(m.param_count(), 50_561);
    }

    #[test]
    fn zero_model_answers_zero() {
        let mut m = OdfModel::<f64>::new(0, unit_box(), &ModelConfig::default(), 1).unwrap();
        m.mlp_mut().params_mut().fill(0.0);
        let d = m.query_distance(DVec3::ZERO, DVec3::X).unwrap();
        assert_eq!(d, 0.0);
        assert!(matches!(
            m.query_distance(DVec3::splat(5.0), DVec3::X),
            Err(OdfError::OutsidePartition { .. })
        ));
        assert!(m.query_distance(DVec3::ZERO, DVec3::splat(1.0)).is_err());
    }

    #[test]
    fn output_is_clamped() {
        let mut m = OdfModel::<f64>::new(0, unit_box(), &ModelConfig::default(), 1).unwrap();
        let b = m.mlp().bias_ranges().last().unwrap();
        m.mlp_mut().params_mut()[b.start] = 5.0;
        assert_eq!(m.query_distance(DVec3::ZERO, DVec3::Y).unwrap(), 100.0);
        m.mlp_mut().params_mut()[b.start] = -5.0;
        assert_eq!(m.query_distance(DVec3::ZERO, DVec3::Y).unwrap(), 0.0);
    }

    #[test]
    fn empty_scene_learns_the_clamp() {
        let lattice = fibonacci_directions(200);
        let sources = [DVec3::ZERO];
        let distances = vec![100.0f32; lattice.len()];
        let rays = RaySet {
            sources: &sources,
            directions: lattice.directions(),
            distances: &distances,
        };
        let cfg = ModelConfig {
            direction: DirectionEncoding::Grid(small_grid()),
            mlp: MlpShape::new(32, 2),
            ..Default::default()
        };
        let train = TrainConfig {
            batch_size: 64,
            epochs: 40,
            ..Default::default()
        };
        let (model, report) = train_partition(0, unit_box(), rays, &cfg, &train).unwrap();
        assert!(report.final_mse < 1e-4, "{}", report.final_mse);
        let test = fibonacci_directions(97);
        let mse = evaluate_mse(
            &model.freeze(),
            RaySet {
                sources: &sources,
                directions: test.directions(),
                distances: &vec![100.0f32; test.len()],
            },
        )
        .unwrap();
        assert!(mse < 1e-4, "{mse}");
        assert!(report.epoch_loss[0] > report.final_mse);
    }

    #[test]
    fn training_rejects_bad_input() {
        let lattice = fibonacci_directions(10);
        let cfg = ModelConfig::default();
        let train = TrainConfig::default();
        let empty = RaySet {
            sources: &[],
            directions: lattice.directions(),
            distances: &[],
        };
        assert!(matches!(
            train_partition(0, unit_box(), empty, &cfg, &train),
            Err(OdfError::EmptyRays)
        ));
        let far = [DVec3::splat(3.0)];
        let d = vec![1.0f32; lattice.len()];
        let outside = RaySet {
            sources: &far,
            directions: lattice.directions(),
            distances: &d,
        };
        assert!(matches!(
            train_partition(0, unit_box(), outside, &cfg, &train),
            Err(OdfError::DataIntegrity(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let lattice = fibonacci_directions(50);
        let sources = [DVec3::ZERO, DVec3::new(0.5, 0.2, 0.0)];
        let distances: Vec<f32> = (0..2 * lattice.len())
            .map(|i| 1.0 + (i % 7) as f32)
            .collect();
        let rays = RaySet {
            sources: &sources,
            directions: lattice.directions(),
            distances: &distances,
        };
        let cfg = ModelConfig {
            position: PositionEncoding::Hash(HashGridConfig {
                levels: 2,
                log2_table_size: 8,
                base_resolution: 2,
                max_resolution: 4,
                ..Default::default()
            }),
            direction: DirectionEncoding::Grid(small_grid()),
            mlp: MlpShape::new(16, 2),
            clamp: 10.0,
        };
        let train = TrainConfig {
            batch_size: 32,
            epochs: 2,
            seed: 9,
            ..Default::default()
        };
        let (a, _) = train_partition(3, unit_box(), rays, &cfg, &train).unwrap();
        let (b, _) = train_partition(3, unit_box(), rays, &cfg, &train).unwrap();
        assert_eq!(a, b);
    }

    fn toy_atlas(value: f64) -> OdfAtlas {
        let pts = [DVec3::new(0.0, 0.0, 0.0), DVec3::new(10.0, 10.0, 0.0)];
        let scheme =
            PartitionScheme::build(&pts, PartitionKind::Grid2d, Resolution::Cells([2, 2, 1]))
                .unwrap();
        let models = scheme
            .active_cells()
            .iter()
            .map(|&id| {
                let mut m = OdfModel::<f64>::new(
                    id,
                    scheme.cell_bounds(id),
                    &ModelConfig {
                        mlp: MlpShape::new(8, 1),
                        ..Default::default()
                    },
                    0,
                )
                .unwrap();
                m.mlp_mut().params_mut().fill(0.0);
                let b = m.mlp().bias_ranges().last().unwrap();
                m.mlp_mut().params_mut()[b.start] = value / 100.0;
                m.freeze()
            })
            .collect();
        OdfAtlas::new(scheme, models)
            .unwrap()
            .with_instrumentation()
    }

    #[test]
    fn visibility_is_strict() {
        let atlas = toy_atlas(10.0);
        let s = DVec3::ZERO;
        assert!(atlas
            .predict_visibility(s, DVec3::new(3.0, 0.0, 0.0))
            .unwrap());
        assert!(!atlas
            .predict_visibility(s, DVec3::new(12.0, 0.0, 0.0))
            .unwrap());
        // f32 rounding of 0.1 decides the exact boundary; use the model's own value.
        let exact = atlas.query_distance(s, DVec3::X).unwrap();
        assert!(!atlas
            .predict_visibility(s, DVec3::new(exact, 0.0, 0.0))
            .unwrap());
        assert!(atlas
            .predict_visibility(s, DVec3::new(exact * (1.0 - 1e-9), 0.0, 0.0))
            .unwrap());
        assert!(matches!(
            atlas.predict_visibility(s, s),
            Err(OdfError::DegeneratePair)
        ));
        assert!(matches!(
            atlas.predict_visibility(DVec3::splat(100.0), s),
            Err(OdfError::Partition(PartitionError::NoCoverage(_)))
        ));
        let biased = toy_atlas(10.0).with_bias(8.0);
        assert!(!biased
            .predict_visibility(s, DVec3::new(3.0, 0.0, 0.0))
            .unwrap());
    }

    #[test]
    fn beyond_clamp_is_never_visible() {
        let atlas = toy_atlas(100.0);
        assert!(!atlas
            .predict_visibility(DVec3::ZERO, DVec3::new(101.0, 0.0, 0.0))
            .unwrap());
    }

    #[test]
    fn one_model_per_query() {
        let atlas = toy_atlas(10.0);
        for i in 0..50 {
            let t = DVec3::new(i as f64 * 0.3, 10.0 - i as f64 * 0.2, 1.0);
            atlas
                .predict_visibility(DVec3::new(9.0, 9.0, 0.0), t)
                .unwrap();
        }
        let counts = atlas.access_counts().unwrap();
        assert_eq!(counts.iter().sum::<u64>(), 50);
        assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn batch_matches_single_queries() {
        let atlas = toy_atlas(6.0);
        let pairs: Vec<(DVec3, DVec3)> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 {
                    DVec3::new(1.0, 1.0, 0.0)
                } else {
                    DVec3::new(9.0, 8.0, 0.0)
                };
                (s, s + DVec3::new(i as f64 * 0.25 + 0.1, 0.0, 0.0))
            })
            .collect();
        let mut out = Vec::new();
        atlas
            .predict_batch(&pairs, &mut out, &mut BatchScratch::default())
            .unwrap();
        for ((s, t), got) in pairs.iter().zip(&out) {
            assert_eq!(*got, atlas.predict_visibility(*s, *t).unwrap());
        }
        assert!(out.iter().any(|&v| v) && out.iter().any(|&v| !v));
    }

    #[test]
    fn atlas_requires_complete_models() {
        let atlas = toy_atlas(1.0);
        let scheme = atlas.scheme().clone();
        let one = vec![atlas.models()[0].clone()];
        assert!(OdfAtlas::new(scheme, one).is_err());
    }
}
