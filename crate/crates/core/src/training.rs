//! Whole-scene training: split a ray dataset by partition and fit one model
//! per active cell.

use rayon::prelude::*;

use crate::io::RayDataset;
use crate::odf::{
    train_partition, ModelConfig, OdfAtlas, OdfError, RaySet, TrainConfig, TrainReport,
};
use crate::partition::{PartitionId, PartitionScheme};
use glam::DVec3;

/// Source indices of `dataset` grouped by the active cell that contains them,
/// in ascending cell order.
pub fn group_sources(
    scheme: &PartitionScheme,
    positions: &[DVec3],
) -> Result<Vec<(PartitionId, Vec<usize>)>, OdfError> {
    let mut groups: Vec<(PartitionId, Vec<usize>)> = scheme
        .active_cells()
        .iter()
        .map(|&id| (id, Vec::new()))
        .collect();
    for (i, p) in positions.iter().enumerate() {
        let id = scheme.partition_of(*p)?;
        let slot = scheme
            .slot_of(id)
            .expect("partition_of returns active cells");
        groups[slot].1.push(i);
    }
    Ok(groups)
}

/// Trains every active partition of `scheme` on the dataset sources it
/// contains, using at most `workers` threads, and returns the frozen atlas.
///
/// The model clamp is taken from the dataset. Active cells with no sources
/// are an error since the atlas must cover every active cell.
pub fn train_atlas(
    dataset: &RayDataset,
    scheme: &PartitionScheme,
    config: &ModelConfig,
    train: &TrainConfig,
    workers: usize,
) -> Result<(OdfAtlas, Vec<TrainReport>), OdfError> {
    let config = ModelConfig {
        clamp: dataset.clamp() as f64,
        ..*config
    };
    config.validate()?;
    let positions = dataset.positions_f64();
    let groups = group_sources(scheme, &positions)?;
    if let Some((id, _)) = groups.iter().find(|(_, g)| g.is_empty()) {
        return Err(OdfError::DataIntegrity(format!(
            "active partition {id} has no sources"
        )));
    }
    let lattice = dataset.lattice();
    let directions = lattice.directions();
    let run = |(id, members): &(PartitionId, Vec<usize>)| {
        let sub = dataset.subset(members);
        let sources = sub.positions_f64();
        let rays = RaySet {
            sources: &sources,
            directions,
            distances: sub.distances(),
        };
        let (model, report) = train_partition(*id, scheme.cell_bounds(*id), rays, &config, train)?;
        log::info!(
            "partition {id}: {} sources, final mse {:.3e}",
            members.len(),
            report.final_mse
        );
        Ok::<_, OdfError>((model.freeze(), report))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| OdfError::Config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| groups.par_iter().map(run).collect::<Result<_, _>>())?;
    let (models, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((OdfAtlas::new(scheme.clone(), models)?, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Scene, TriangleMesh};
    use crate::io::collect_rays;
    use crate::nn::MlpShape;
    use crate::odf::VisibilityPredictor;
    use crate::partition::{PartitionKind, Resolution};

    #[test]
    fn trains_one_model_per_active_cell() {
        let scene = Scene::new(TriangleMesh::cube(DVec3::new(5.0, 5.0, 0.0), 1.0));
        let sources = [
            DVec3::new(0.0, 0.0, 0.0),
            DVec3::new(0.5, 0.5, 0.0),
            DVec3::new(9.0, 9.0, 0.0),
        ];
        let (ds, _) = collect_rays(&scene, &sources, 20, 20.0).unwrap();
        let scheme = PartitionScheme::build(
            &ds.positions_f64(),
            PartitionKind::Grid2d,
            Resolution::Cells([2, 2, 1]),
        )
        .unwrap();
        assert_eq!(scheme.active_cells().len(), 2);
        let cfg = ModelConfig::no_mapping(MlpShape::new(8, 1), 100.0);
        let train = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..Default::default()
        };
        let (atlas, reports) = train_atlas(&ds, &scheme, &cfg, &train, 2).unwrap();
        assert_eq!(atlas.models().len(), 2);
        assert_eq!(reports.len(), 2);
        assert_eq!(atlas.models()[0].clamp(), 20.0);
        assert_eq!(atlas.models()[0].meta().sources, 2);
        let (again, _) = train_atlas(&ds, &scheme, &cfg, &train, 1).unwrap();
        assert_eq!(again, atlas);
        atlas
            .predict_visibility(sources[0], DVec3::new(1.0, 0.0, 0.0))
            .unwrap();
    }
}
