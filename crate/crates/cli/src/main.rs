//! `odf`: scene generation, data collection, training, evaluation and
//! benchmarking for neural omnidirectional distance fields.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odf_core::encoding::{FfmConfig, Grid2dConfig, HashGridConfig, PeConfig, ShConfig};
use odf_core::geometry::SceneDescriptor;
use odf_core::nn::MlpShape;
use odf_core::odf::{DirectionEncoding, PositionEncoding};
use odf_core::partition::{PartitionKind, Resolution};

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "odf",
    version,
    about = "Neural omnidirectional distance fields for visibility queries"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for collection and training (default: all cores).
    #[arg(long, global = true, env = "ODF_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a procedural scene as OBJ, optionally with sampled agent positions.
    GenScene {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        sources: SourceArgs,
        #[arg(long, default_value = "scene.obj")]
        out: PathBuf,
        /// Also write sampled source positions (`x y z` per line).
        #[arg(long)]
        sources_out: Option<PathBuf>,
    },
    /// Cast lattice rays from every source and build a labelled visibility test set.
    Collect {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        sources: SourceArgs,
        /// Lattice parameter; each source gets 2n+1 rays.
        #[arg(long)]
        lattice_n: Option<u32>,
        /// Maximum ray distance (m).
        #[arg(long)]
        clamp: Option<f64>,
        /// Visibility test targets per source.
        #[arg(long)]
        tests_per_source: Option<usize>,
        /// Seed for test-target sampling.
        #[arg(long)]
        test_seed: Option<u64>,
        #[arg(long, default_value = "dataset.odfd")]
        dataset: PathBuf,
        #[arg(long, default_value = "tests.odfv")]
        tests: PathBuf,
    },
    /// Partition a dataset and train one model per active partition.
    Train {
        /// Ray dataset written by `collect`.
        #[arg(long)]
        dataset: PathBuf,
        /// Scene to check the dataset against; training is refused on mismatch.
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "model.odfm")]
        out: PathBuf,
    },
    /// Classification metrics of one or more atlases on a test set.
    Eval {
        /// Atlas file; repeat to compare several.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        tests: PathBuf,
        /// Add a raycast ground-truth row (needs the scene).
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Latency, throughput and memory reports with SVG plots.
    Bench {
        /// Atlas file; repeat for an MLP sweep.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        /// Test set supplying query pairs; give one, or one per model.
        #[arg(long, required = true)]
        tests: Vec<PathBuf>,
        /// OBJ scene to time the raycast oracle on; matched to a test set by hash.
        #[arg(long)]
        scene_file: Vec<PathBuf>,
        /// Skip cold-cache latency.
        #[arg(long)]
        no_cold: bool,
        /// Write memory reports.
        #[arg(long)]
        memory: bool,
        /// Latency samples per measurement.
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated ascending batch sizes.
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        #[arg(long, default_value = "bench")]
        out_dir: PathBuf,
    },
    /// Print the headers of dataset, test-set or model files.
    Inspect {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct SceneArgs {
    /// OBJ scene file.
    #[arg(long, conflicts_with = "procedural")]
    obj: Option<PathBuf>,
    /// Procedural scene: box-town[:boxes], sparse-field[:density] or multi-level[:floors].
    #[arg(long)]
    procedural: Option<String>,
    /// Seed for procedural generation.
    #[arg(long)]
    scene_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct SourceArgs {
    /// Number of sampled source positions.
    #[arg(long)]
    sources: Option<usize>,
    /// Source positions file (`x y z` per line) instead of sampling.
    #[arg(long)]
    sources_file: Option<PathBuf>,
    /// Seed for source sampling.
    #[arg(long)]
    source_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long, value_parser = ["grid2d", "voxel3d"])]
    partition: Option<String>,
    /// Cells per axis, e.g. 8,8,1.
    #[arg(long, value_delimiter = ',', conflicts_with = "cell_size")]
    cells: Option<Vec<u32>>,
    /// Cubic cell side (m).
    #[arg(long)]
    cell_size: Option<f64>,
    /// Position encoding: none, pe, hash or ffm.
    #[arg(long)]
    position: Option<String>,
    /// Direction encoding: none, grid or sh[:degree].
    #[arg(long)]
    direction: Option<String>,
    /// Hidden layers as WIDTHxDEPTH, e.g. 128x4.
    #[arg(long)]
    mlp: Option<String>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Rays per optimiser step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Decoupled weight decay on MLP weights.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Seed for initialisation and shuffling.
    #[arg(long)]
    train_seed: Option<u64>,
    /// Distance margin subtracted at query time (m).
    #[arg(long)]
    bias: Option<f64>,
}

fn parse_procedural(spec: &str) -> Result<SceneDescriptor, CliError> {
    let (kind, param) = match spec.split_once(':') {
        Some((k, p)) => (k, Some(p)),
        None => (spec, None),
    };
    let bad = || CliError::Input(format!("bad procedural scene parameter in `{spec}`"));
    match kind {
        "box-town" => Ok(SceneDescriptor::box_town(
            param
                .map(|p| p.parse().map_err(|_| bad()))
                .transpose()?
                .unwrap_or(20),
        )),
        "sparse-field" => Ok(SceneDescriptor::sparse_field(
            param
                .map(|p| p.parse().map_err(|_| bad()))
                .transpose()?
                .unwrap_or(5.0),
        )),
        "multi-level" => Ok(SceneDescriptor::multi_level(
            param
                .map(|p| p.parse().map_err(|_| bad()))
                .transpose()?
                .unwrap_or(3),
        )),
        _ => Err(CliError::Input(format!(
            "unknown procedural scene `{kind}` (box-town, sparse-field, multi-level)"
        ))),
    }
}

fn parse_mlp(spec: &str) -> Result<MlpShape, CliError> {
    let bad = || CliError::Input(format!("MLP shape `{spec}` is not WIDTHxDEPTH"));
    let (w, d) = spec.split_once('x').ok_or_else(bad)?;
    Ok(MlpShape::new(
        w.parse().map_err(|_| bad())?,
        d.parse().map_err(|_| bad())?,
    ))
}

fn parse_position(spec: &str) -> Result<PositionEncoding, CliError> {
    match spec {
        "none" => Ok(PositionEncoding::None),
        "pe" => Ok(PositionEncoding::Pe(PeConfig::default())),
        "hash" => Ok(PositionEncoding::Hash(HashGridConfig::default())),
        "ffm" => Ok(PositionEncoding::Ffm(FfmConfig::default())),
        _ => Err(CliError::Input(format!(
            "unknown position encoding `{spec}`"
        ))),
    }
}

fn parse_direction(spec: &str) -> Result<DirectionEncoding, CliError> {
    match spec.split_once(':') {
        None if spec == "none" => Ok(DirectionEncoding::None),
        None if spec == "grid" => Ok(DirectionEncoding::Grid(Grid2dConfig::default())),
        None if spec == "sh" => Ok(DirectionEncoding::Sh(ShConfig { degree: 4 })),
        Some(("sh", d)) => Ok(DirectionEncoding::Sh(ShConfig {
            degree: d
                .parse()
                .map_err(|_| CliError::Input(format!("bad SH degree in `{spec}`")))?,
        })),
        _ => Err(CliError::Input(format!(
            "unknown direction encoding `{spec}`"
        ))),
    }
}

impl SceneArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(p) = &self.obj {
            cfg.scene.obj = Some(p.clone());
            cfg.scene.procedural = None;
        }
        if let Some(spec) = &self.procedural {
            cfg.scene.procedural = Some(parse_procedural(spec)?);
            cfg.scene.obj = None;
        }
        if let Some(s) = self.scene_seed {
            cfg.scene.seed = s;
        }
        Ok(())
    }
}

impl SourceArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(n) = self.sources {
            cfg.collect.sources = n;
        }
        if let Some(p) = &self.sources_file {
            cfg.collect.sources_file = Some(p.clone());
        }
        if let Some(s) = self.source_seed {
            cfg.collect.source_seed = s;
        }
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        match self.partition.as_deref() {
            Some("grid2d") => cfg.partition.kind = PartitionKind::Grid2d,
            Some("voxel3d") => cfg.partition.kind = PartitionKind::Voxel3d,
            _ => {}
        }
        if let Some(c) = &self.cells {
            if c.len() != 3 {
                return Err(CliError::Input(
                    "--cells takes three counts, e.g. 8,8,1".into(),
                ));
            }
            cfg.partition.resolution = Resolution::Cells([c[0], c[1], c[2]]);
        }
        if let Some(s) = self.cell_size {
            cfg.partition.resolution = Resolution::CellSize(s);
        }
        if let Some(p) = &self.position {
            cfg.model.position = parse_position(p)?;
        }
        if let Some(d) = &self.direction {
            cfg.model.direction = parse_direction(d)?;
        }
        if let Some(m) = &self.mlp {
            cfg.model.mlp = parse_mlp(m)?;
        }
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.train_seed {
            t.seed = v;
        }
        if let Some(v) = self.bias {
            t.bias = v;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let workers = match cfg.workers {
        Some(0) => return Err(CliError::Input("worker count must be positive".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // Ignored if a pool already exists, which only happens in tests.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();

    match cli.command {
        Command::GenScene {
            scene,
            sources,
            out,
            sources_out,
        } => {
            scene.apply(&mut cfg)?;
            sources.apply(&mut cfg);
            commands::gen_scene(&cfg, &out, sources_out.as_deref())
        }
        Command::Collect {
            scene,
            sources,
            lattice_n,
            clamp,
            tests_per_source,
            test_seed,
            dataset,
            tests,
        } => {
            scene.apply(&mut cfg)?;
            sources.apply(&mut cfg);
            let c = &mut cfg.collect;
            c.lattice_n = lattice_n.unwrap_or(c.lattice_n);
            c.clamp = clamp.unwrap_or(c.clamp);
            c.tests_per_source = tests_per_source.unwrap_or(c.tests_per_source);
            c.test_seed = test_seed.unwrap_or(c.test_seed);
            commands::collect(&cfg, &dataset, &tests)
        }
        Command::Train {
            dataset,
            scene,
            model,
            out,
        } => {
            scene.apply(&mut cfg)?;
            model.apply(&mut cfg)?;
            commands::train(&cfg, workers, &dataset, &out)
        }
        Command::Eval {
            model,
            tests,
            oracle,
            scene,
            out,
        } => {
            scene.apply(&mut cfg)?;
            commands::eval(&cfg, &model, &tests, oracle, &out)
        }
        Command::Bench {
            model,
            tests,
            scene_file,
            no_cold,
            memory,
            reps,
            batch_sizes,
            out_dir,
        } => {
            if let Some(r) = reps {
                cfg.bench.reps = r;
            }
            if let Some(b) = batch_sizes {
                cfg.bench.batch_sizes = b;
            }
            let opts = commands::BenchOptions {
                models: &model,
                tests: &tests,
                scenes: &scene_file,
                cold: !no_cold,
                memory,
                out_dir: &out_dir,
            };
            commands::bench(&cfg, &opts)
        }
        Command::Inspect { files } => commands::inspect(&files),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
