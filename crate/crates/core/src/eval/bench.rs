use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::odf::{BatchScratch, OdfAtlas};
use crate::DVec3;

use super::EvalError;

/// Bytes streamed through between cold samples; larger than common
/// last-level caches.
pub const DEFAULT_EVICTION_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyMode {
    Cold,
    Warm,
}

impl LatencyMode {
    pub fn name(self) -> &'static str {
        match self {
            LatencyMode::Cold => "cold",
            LatencyMode::Warm => "warm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    /// Number of recorded samples.
    pub reps: usize,
    /// Warm mode: calls timed together per sample (the sample is their mean).
    pub inner: usize,
    /// Warm mode: untimed calls before sampling.
    pub warmup: usize,
    /// Cold mode: size of the eviction buffer.
    pub eviction_bytes: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            reps: 200,
            inner: 32,
            warmup: 1000,
            eviction_bytes: DEFAULT_EVICTION_BYTES,
        }
    }
}

/// Per-call latencies in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySamples {
    pub mode: LatencyMode,
    pub samples_us: Vec<f64>,
    /// Calls averaged into each sample.
    pub inner: usize,
    /// Set when the clock cannot resolve 1 µs.
    pub coarse_timer: bool,
}

impl LatencySamples {
    pub fn len(&self) -> usize {
        self.samples_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_us.is_empty()
    }

    pub fn percentile(&self, q: f64) -> f64 {
        let mut s = self.samples_us.clone();
        s.sort_by(f64::total_cmp);
        if s.is_empty() {
            return f64::NAN;
        }
        let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    }

    pub fn median(&self) -> f64 {
        self.percentile(0.5)
    }

    pub fn mean(&self) -> f64 {
        super::metrics::mean_std(&self.samples_us).0
    }

    pub fn std(&self) -> f64 {
        super::metrics::mean_std(&self.samples_us).1
    }

    pub fn min(&self) -> f64 {
        self.samples_us
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Streams a buffer through the cache hierarchy to flush it.
pub struct CacheEvictor {
    buf: Vec<u64>,
    round: u64,
}

impl CacheEvictor {
    pub fn new(bytes: usize) -> Self {
        CacheEvictor {
            buf: vec![0; bytes.div_ceil(8).max(1)],
            round: 0,
        }
    }

    pub fn evict(&mut self) {
        self.round = self.round.wrapping_add(1);
        let r = self.round;
        for (i, v) in self.buf.iter_mut().enumerate() {
            *v = v.wrapping_add(r ^ i as u64);
        }
        black_box(self.buf.iter().fold(0u64, |a, &b| a ^ b));
    }
}

/// Times `workload` on the calling thread.
///
/// Cold samples each time a single call made right after a cache eviction
/// pass. Warm samples time `inner` back-to-back calls after a warm-up and
/// record the per-call mean. The workload should be deterministic and free
/// of side effects beyond its own state.
pub fn bench_latency<R>(
    mut workload: impl FnMut() -> R,
    mode: LatencyMode,
    config: &LatencyConfig,
) -> LatencySamples {
    let coarse_timer = timer_resolution() > Duration::from_micros(1);
    let mut samples = Vec::with_capacity(config.reps);
    let inner = config.inner.max(1);
    match mode {
        LatencyMode::Cold => {
            let mut evictor = CacheEvictor::new(config.eviction_bytes);
            for _ in 0..config.reps {
                evictor.evict();
                let start = Instant::now();
                black_box(workload());
                samples.push(start.elapsed().as_secs_f64() * 1e6);
            }
        }
        LatencyMode::Warm => {
            for _ in 0..config.warmup {
                black_box(workload());
            }
            for _ in 0..config.reps {
                let start = Instant::now();
                for _ in 0..inner {
                    black_box(workload());
                }
                samples.push(start.elapsed().as_secs_f64() * 1e6 / inner as f64);
            }
        }
    }
    LatencySamples {
        mode,
        samples_us: samples,
        inner: if mode == LatencyMode::Warm { inner } else { 1 },
        coarse_timer,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub batch: usize,
    /// Thousands of visibility tests per second.
    pub ktests_per_s: f64,
}

/// Single-threaded batched inference rate for each batch size, cycling
/// through `pairs` for at least `min_time` per size.
pub fn bench_throughput(
    atlas: &OdfAtlas,
    pairs: &[(DVec3, DVec3)],
    batch_sizes: &[usize],
    min_time: Duration,
) -> Result<Vec<ThroughputPoint>, EvalError> {
    if batch_sizes.windows(2).any(|w| w[0] >= w[1]) || batch_sizes.first() == Some(&0) {
        return Err(EvalError::BatchSizes);
    }
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut scratch = BatchScratch::default();
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut points = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        buf.clear();
        buf.extend(pairs.iter().cycle().take(b.max(pairs.len())).copied());
        // Warm-up pass over the data.
        for chunk in buf.chunks(b) {
            atlas.predict_batch(chunk, &mut out, &mut scratch)?;
        }
        let start = Instant::now();
        let mut done = 0usize;
        while start.elapsed() < min_time {
            for chunk in buf.chunks_exact(b) {
                atlas.predict_batch(chunk, &mut out, &mut scratch)?;
                black_box(&out);
                done += b;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        points.push(ThroughputPoint {
            batch: b,
            ktests_per_s: done as f64 / secs / 1e3,
        });
    }
    Ok(points)
}
