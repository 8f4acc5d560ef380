use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use odf_core::eval::report::{
    svg_bar_chart, svg_line_chart, write_memory_csv, write_metrics_csv, write_throughput_csv,
    write_timing_csv, Series,
};
use odf_core::eval::{
    bench_latency, bench_throughput, estimate_memory, evaluate, megabytes, LatencyMode,
    LatencySamples, OraclePredictor,
};
use odf_core::geometry::{generate_scene, load_mesh, write_obj, GeneratedScene, Scene};
use odf_core::io::{
    build_test_set, collect_rays, AtlasFile, RayDataset, VisibilityTestSet, DATASET_MAGIC,
    MODEL_MAGIC, TESTSET_MAGIC,
};
use odf_core::odf::{DirectionEncoder, PositionEncoder, QueryScratch};
use odf_core::partition::PartitionScheme;
use odf_core::training::train_atlas;
use odf_core::DVec3;

use crate::config::RunConfig;
use crate::error::CliError;

struct LoadedScene {
    scene: Scene,
    generated: Option<GeneratedScene>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

fn load_obj(path: &Path) -> Result<Scene, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let (mesh, report) = load_mesh(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if report.dropped_degenerate > 0 {
        log::warn!(
            "{}: dropped {} degenerate triangles",
            path.display(),
            report.dropped_degenerate
        );
    }
    Ok(Scene::new(mesh))
}

fn load_scene(cfg: &RunConfig) -> Result<Option<LoadedScene>, CliError> {
    match (&cfg.scene.obj, &cfg.scene.procedural) {
        (Some(_), Some(_)) => Err(CliError::Input(
            "scene has both an OBJ path and a procedural descriptor".into(),
        )),
        (Some(path), None) => Ok(Some(LoadedScene {
            scene: load_obj(path)?,
            generated: None,
        })),
        (None, Some(desc)) => {
            let g = generate_scene(desc, cfg.scene.seed)?;
            Ok(Some(LoadedScene {
                scene: Scene::new(g.mesh.clone()),
                generated: Some(g),
            }))
        }
        (None, None) => Ok(None),
    }
}

fn require_scene(cfg: &RunConfig) -> Result<LoadedScene, CliError> {
    load_scene(cfg)?.ok_or_else(|| {
        CliError::Input("no scene given (use --obj, --procedural or [scene] in the config)".into())
    })
}

fn read_sources(path: &Path) -> Result<Vec<DVec3>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Input(format!(
                "{}:{}: expected three finite coordinates",
                path.display(),
                i + 1
            )));
        }
        out.push(DVec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

fn sources(cfg: &RunConfig, scene: &LoadedScene) -> Result<Vec<DVec3>, CliError> {
    let c = &cfg.collect;
    let out = match (&c.sources_file, &scene.generated) {
        (Some(path), _) => read_sources(path)?,
        (None, Some(g)) => {
            let s = g.sample_positions(c.sources, c.eye_height, c.clearance, c.source_seed);
            if s.len() < c.sources {
                log::warn!("placed only {} of {} sources", s.len(), c.sources);
            }
            s
        }
        (None, None) => {
            return Err(CliError::Input(
                "OBJ scenes need a sources file (--sources-file)".into(),
            ))
        }
    };
    if out.is_empty() {
        return Err(CliError::Input("no source positions".into()));
    }
    Ok(out)
}

pub fn gen_scene(cfg: &RunConfig, out: &Path, sources_out: Option<&Path>) -> Result<(), CliError> {
    if cfg.scene.procedural.is_none() {
        return Err(CliError::Input(
            "gen-scene needs a procedural descriptor (--procedural or [scene.procedural])".into(),
        ));
    }
    let scene = require_scene(cfg)?;
    let g = scene.generated.as_ref().expect("procedural scene");
    let mut w = create(out)?;
    write_obj(&g.mesh, &mut w).map_err(|e| io_err(out, e))?;
    w.flush().map_err(|e| io_err(out, e))?;
    println!(
        "{}: {} triangles, scene hash {}",
        out.display(),
        scene.scene.triangle_count(),
        scene.scene.hash()
    );
    if let Some(path) = sources_out {
        let pts = sources(cfg, &scene)?;
        let mut w = create(path)?;
        for p in &pts {
            writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
        println!("{}: {} source positions", path.display(), pts.len());
    }
    cfg.emit("gen-scene", out)?;
    Ok(())
}

pub fn collect(cfg: &RunConfig, dataset_path: &Path, tests_path: &Path) -> Result<(), CliError> {
    let scene = require_scene(cfg)?;
    let srcs = sources(cfg, &scene)?;
    let c = &cfg.collect;
    let (dataset, report) = collect_rays(&scene.scene, &srcs, c.lattice_n, c.clamp)?;
    if !report.inside_solid.is_empty() {
        log::warn!(
            "{} sources appear to be inside solid geometry: {:?}",
            report.inside_solid.len(),
            report.inside_solid
        );
    }
    let (tests, balance) = build_test_set(
        &scene.scene,
        &dataset.positions_f64(),
        c.tests_per_source,
        c.test_seed,
        c.clamp,
    );
    dataset.save(dataset_path)?;
    tests.save(tests_path)?;
    println!(
        "{}: {} sources x {} distances, {} rays, {} hits ({:.1}%), {} sources inside solids",
        dataset_path.display(),
        dataset.len(),
        dataset.rays_per_source(),
        report.rays,
        report.hits,
        100.0 * report.hits as f64 / report.rays.max(1) as f64,
        report.inside_solid.len()
    );
    println!(
        "{}: {} pairs, {} visible, {} occluded ({:.1}% visible), {} unplaced",
        tests_path.display(),
        tests.len(),
        balance.visible,
        balance.occluded,
        100.0 * balance.visible_fraction(),
        balance.shortfall
    );
    cfg.emit("collect", dataset_path)?;
    Ok(())
}

pub fn train(
    cfg: &RunConfig,
    workers: usize,
    dataset_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let dataset = RayDataset::load(dataset_path)?;
    if let Some(scene) = load_scene(cfg)? {
        let hash = scene.scene.hash();
        if hash != dataset.scene_hash() {
            return Err(CliError::Integrity(format!(
                "{} was collected from scene {}, not the given scene {hash}; refusing to train",
                dataset_path.display(),
                dataset.scene_hash()
            )));
        }
    }
    let scheme = PartitionScheme::build(
        &dataset.positions_f64(),
        cfg.partition.kind,
        cfg.partition.resolution,
    )?;
    println!(
        "training {} partitions ({} sources, {} rays each) with {workers} workers",
        scheme.len(),
        dataset.len(),
        dataset.rays_per_source()
    );
    let (atlas, reports) =
        train_atlas(&dataset, &scheme, &cfg.model, &cfg.train.to_core(), workers)?;
    let atlas = atlas.with_bias(cfg.train.bias);

    let mut log_path = out.as_os_str().to_owned();
    log_path.push(".log.csv");
    let log_path = PathBuf::from(log_path);
    let mut log = create(&log_path)?;
    writeln!(log, "partition,epoch,loss").map_err(|e| io_err(&log_path, e))?;
    for r in &reports {
        for (e, loss) in r.epoch_loss.iter().enumerate() {
            writeln!(log, "{},{},{loss:.6e}", r.partition, e + 1)
                .map_err(|e| io_err(&log_path, e))?;
        }
        println!(
            "partition {:>5}: final MSE {:.4e} after {} steps",
            r.partition, r.final_mse, r.steps
        );
    }
    log.flush().map_err(|e| io_err(&log_path, e))?;

    let file = AtlasFile {
        scene_hash: dataset.scene_hash(),
        atlas,
    };
    file.save(out)?;
    println!(
        "{}: {} models, {} parameters",
        out.display(),
        file.atlas.models().len(),
        file.atlas.param_count()
    );
    cfg.emit("train", out)?;
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_matching(
    model: &Path,
    tests: &VisibilityTestSet,
    tests_path: &Path,
) -> Result<AtlasFile, CliError> {
    let file = AtlasFile::load(model)?;
    if file.scene_hash != tests.scene_hash {
        return Err(CliError::Integrity(format!(
            "{} belongs to scene {} but {} to scene {}",
            model.display(),
            file.scene_hash,
            tests_path.display(),
            tests.scene_hash
        )));
    }
    Ok(file)
}

pub fn eval(
    cfg: &RunConfig,
    models: &[PathBuf],
    tests_path: &Path,
    oracle: bool,
    out: &Path,
) -> Result<(), CliError> {
    let tests = VisibilityTestSet::load(tests_path)?;
    if tests.is_empty() {
        return Err(CliError::Input(format!(
            "{} has no test pairs",
            tests_path.display()
        )));
    }
    let mut rows = Vec::new();
    for path in models {
        let file = load_matching(path, &tests, tests_path)?;
        let mut m = evaluate(&stem(path), &file.atlas, &tests)?;
        m.params = Some(file.atlas.param_count() as u64);
        rows.push(m);
    }
    if oracle {
        let scene = require_scene(cfg)?;
        if scene.scene.hash() != tests.scene_hash {
            return Err(CliError::Integrity(format!(
                "the given scene does not match {}",
                tests_path.display()
            )));
        }
        let predictor = OraclePredictor {
            scene: &scene.scene,
            clamp: cfg.collect.clamp,
        };
        rows.push(evaluate("raycast", &predictor, &tests)?);
    }
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<20} {:>8} {:>9} {:>8} {:>8} {:>10}",
        "label", "accuracy", "precision", "recall", "f1", "mean_us"
    );
    for m in &rows {
        println!(
            "{:<20} {:>8.4} {:>9} {:>8} {:>8} {:>10}",
            m.label,
            m.accuracy,
            na(m.precision),
            na(m.recall),
            na(m.f1),
            na(m.time_mean_us)
        );
    }
    write_metrics_csv(create(out)?, &rows)?;
    cfg.emit("eval", out)?;
    Ok(())
}

pub struct BenchOptions<'a> {
    pub models: &'a [PathBuf],
    pub tests: &'a [PathBuf],
    pub scenes: &'a [PathBuf],
    pub cold: bool,
    pub memory: bool,
    pub out_dir: &'a Path,
}

fn pairs_of(tests: &VisibilityTestSet) -> Vec<(DVec3, DVec3)> {
    tests
        .pairs
        .iter()
        .map(|p| (p.source.as_dvec3(), p.target.as_dvec3()))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn bench(cfg: &RunConfig, opts: &BenchOptions) -> Result<(), CliError> {
    if opts.tests.len() != 1 && opts.tests.len() != opts.models.len() {
        return Err(CliError::Input(
            "give one test set, or one per model".into(),
        ));
    }
    let test_sets = opts
        .tests
        .iter()
        .map(|p| {
            let t = VisibilityTestSet::load(p)?;
            if t.is_empty() {
                return Err(CliError::Input(format!(
                    "{} has no test pairs",
                    p.display()
                )));
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    std::fs::create_dir_all(opts.out_dir).map_err(|e| io_err(opts.out_dir, e))?;
    let latency = cfg.bench.latency();
    let min_time = Duration::from_millis(cfg.bench.min_time_ms);

    let mut timing = Vec::new();
    let mut throughput = Vec::new();
    for (i, path) in opts.models.iter().enumerate() {
        let k = if test_sets.len() == 1 { 0 } else { i };
        let file = load_matching(path, &test_sets[k], &opts.tests[k])?;
        let atlas = &file.atlas;
        let pairs = pairs_of(&test_sets[k]);
        let label = stem(path);
        let scene_label = stem(&opts.tests[k]);
        let mut modes = vec![LatencyMode::Warm];
        if opts.cold {
            modes.push(LatencyMode::Cold);
        }
        for mode in modes {
            let mut scratch = QueryScratch::default();
            let mut j = 0;
            let mut failure = None;
            let samples = bench_latency(
                || {
                    j = (j + 1) % pairs.len();
                    let (s, t) = pairs[j];
                    atlas
                        .predict_visibility_with(s, t, &mut scratch)
                        .unwrap_or_else(|e| {
                            failure.get_or_insert(e);
                            false
                        })
                },
                mode,
                &latency,
            );
            if let Some(e) = failure {
                return Err(e.into());
            }
            println!(
                "{label} on {scene_label}: {} median {:.3} us (mean {:.3}, std {:.3})",
                mode.name(),
                samples.median(),
                samples.mean(),
                samples.std()
            );
            timing.push((scene_label.clone(), label.clone(), samples));
        }
        let pts = bench_throughput(atlas, &pairs, &cfg.bench.batch_sizes, min_time)?;
        throughput.push((label.clone(), pts));

        if opts.memory {
            let res: Vec<(u32, u32)> = cfg
                .bench
                .depth_resolutions
                .iter()
                .map(|r| (r[0], r[1]))
                .collect();
            let report = estimate_memory(atlas, &res, None);
            let path = opts.out_dir.join(format!("memory_{label}.csv"));
            write_memory_csv(create(&path)?, &report)?;
            println!(
                "{label}: models {:.3} MB; depth maps {}",
                megabytes(report.total_model_bytes()),
                report
                    .total_depth_bytes()
                    .iter()
                    .map(|(w, h, b)| format!("{w}x{h} {:.1} MB", megabytes(*b)))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
    }

    for path in opts.scenes {
        let scene = load_obj(path)?;
        let hash = scene.hash();
        let k = test_sets
            .iter()
            .position(|t| t.scene_hash == hash)
            .ok_or_else(|| {
                CliError::Integrity(format!("no test set was built from {}", path.display()))
            })?;
        let pairs = pairs_of(&test_sets[k]);
        let oracle = OraclePredictor {
            scene: &scene,
            clamp: cfg.collect.clamp,
        };
        let mut j = 0;
        let samples: LatencySamples = bench_latency(
            || {
                j = (j + 1) % pairs.len();
                let (s, t) = pairs[j];
                odf_core::odf::VisibilityPredictor::predict_visibility(&oracle, s, t)
                    .unwrap_or(false)
            },
            LatencyMode::Warm,
            &latency,
        );
        println!(
            "raycast on {} ({} triangles): warm median {:.3} us",
            stem(path),
            scene.triangle_count(),
            samples.median()
        );
        timing.push((stem(path), "raycast".to_string(), samples));
    }

    write_timing_csv(create(&opts.out_dir.join("timing.csv"))?, &timing)?;
    write_throughput_csv(create(&opts.out_dir.join("throughput.csv"))?, &throughput)?;
    let bars: Vec<(String, f64)> = timing
        .iter()
        .filter(|t| t.2.mode == LatencyMode::Warm)
        .map(|(scene, label, s)| (format!("{label} / {scene}"), s.median()))
        .collect();
    write_text(
        &opts.out_dir.join("latency.svg"),
        &svg_bar_chart("Warm query latency", "median latency (us)", &bars),
    )?;
    let series: Vec<Series> = throughput
        .iter()
        .map(|(label, pts)| Series {
            label: label.clone(),
            points: pts
                .iter()
                .map(|p| (p.batch as f64, p.ktests_per_s))
                .collect(),
        })
        .collect();
    write_text(
        &opts.out_dir.join("throughput.svg"),
        &svg_line_chart(
            "Batched throughput",
            "batch size",
            "k tests / s",
            &series,
            true,
        ),
    )?;
    cfg.emit("bench", &opts.out_dir.join("run"))?;
    println!("reports written to {}", opts.out_dir.display());
    Ok(())
}

fn describe_model(file: &AtlasFile) {
    let atlas = &file.atlas;
    let s = atlas.scheme();
    println!("  scene hash {}", file.scene_hash);
    println!(
        "  partition {:?}, dims {:?}, cell {:.3?}, {} active, bias {}",
        s.kind(),
        s.dims(),
        s.cell_size().to_array(),
        s.len(),
        atlas.bias()
    );
    for m in atlas.models() {
        let pos = match m.position_encoder() {
            PositionEncoder::None => "raw",
            PositionEncoder::Pe(_) => "pe",
            PositionEncoder::Hash(_) => "hash",
            PositionEncoder::Ffm(_) => "ffm",
        };
        let dir = match m.direction_encoder() {
            DirectionEncoder::None => "raw",
            DirectionEncoder::Grid(_) => "grid",
            DirectionEncoder::Sh(_) => "sh",
        };
        let meta = m.meta();
        println!(
            "  model {:>5}: {pos}+{dir}, {} params, {} sources, {} epochs, final MSE {:.4e}",
            m.partition(),
            m.param_count(),
            meta.sources,
            meta.epochs,
            meta.final_mse
        );
    }
}

pub fn inspect(files: &[PathBuf]) -> Result<(), CliError> {
    for path in files {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let magic: [u8; 4] = bytes
            .get(..4)
            .and_then(|m| m.try_into().ok())
            .ok_or_else(|| CliError::Integrity(format!("{}: too short", path.display())))?;
        println!("{}: {} bytes", path.display(), bytes.len());
        if magic == DATASET_MAGIC {
            let d = RayDataset::from_bytes(&bytes)?;
            println!(
                "  ray dataset: n {}, {} rays per source, clamp {}, {} sources, scene hash {}",
                d.lattice_n(),
                d.rays_per_source(),
                d.clamp(),
                d.len(),
                d.scene_hash()
            );
        } else if magic == TESTSET_MAGIC {
            let t = VisibilityTestSet::from_bytes(&bytes)?;
            let visible = t.pairs.iter().filter(|p| p.visible).count();
            println!(
                "  test set: {} pairs, {visible} visible, scene hash {}",
                t.len(),
                t.scene_hash
            );
        } else if magic == MODEL_MAGIC {
            let f = AtlasFile::from_bytes(&bytes)?;
            println!(
                "  atlas: {} models, {} parameters",
                f.atlas.models().len(),
                f.atlas.param_count()
            );
            describe_model(&f);
        } else {
            return Err(CliError::Integrity(format!(
                "{}: unrecognised magic {:?}",
                path.display(),
                String::from_utf8_lossy(&magic)
            )));
        }
    }
    Ok(())
}
