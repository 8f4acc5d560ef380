//! Classification metrics, latency and throughput measurement, memory
//! accounting and report output.

mod bench;
mod memory;
mod metrics;
pub mod report;

use thiserror::Error;

pub use bench::{
    bench_latency, bench_throughput, timer_resolution, CacheEvictor, LatencyConfig, LatencyMode,
    LatencySamples, ThroughputPoint, DEFAULT_EVICTION_BYTES,
};
pub use memory::{
    depth_map_bytes, estimate_memory, grid_bytes, megabytes, MemoryReport, PartitionMemory,
};
pub use metrics::{classify_metrics, evaluate, Confusion, MetricsReport, OraclePredictor};

use crate::encoding::EncodingError;
use crate::odf::OdfError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("batch sizes must be positive and strictly ascending")]
    BatchSizes,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Odf(#[from] OdfError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
