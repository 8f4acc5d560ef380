//! CSV and SVG output.
//!
//! Metrics CSV columns, in order:
//! `label, accuracy, precision, recall, f1, params, time_mean_us,
//! time_std_us, tp, fp, fn, tn`. Undefined values are written as `NA`.
//!
//! Timing CSV: `scene, label, mode, samples, inner, median_us, mean_us,
//! std_us, min_us, coarse_timer`.
//!
//! Throughput CSV: `label, batch, ktests_per_s`.
//!
//! Memory CSV: `partition, positions`, then one `depth_<w>x<h>_bytes`
//! column per resolution, then `grid_bytes, hash_bytes, mlp_bytes,
//! model_bytes`.

use std::fmt::Write as _;
use std::io::{Read, Write};

use super::bench::{LatencySamples, ThroughputPoint};
use super::memory::MemoryReport;
use super::metrics::MetricsReport;
use super::EvalError;

pub const NA: &str = "NA";

pub const METRICS_HEADER: [&str; 12] = [
    "label",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "params",
    "time_mean_us",
    "time_std_us",
    "tp",
    "fp",
    "fn",
    "tn",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| NA.to_string())
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsReport]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let c = r.confusion;
        w.write_record([
            r.label.clone(),
            r.accuracy.to_string(),
            opt(r.precision),
            opt(r.recall),
            opt(r.f1),
            opt(r.params),
            opt(r.time_mean_us),
            opt(r.time_std_us),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed metrics line. Every numeric field may be missing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRow {
    pub label: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub params: Option<f64>,
    pub time_mean_us: Option<f64>,
    pub time_std_us: Option<f64>,
    pub counts: Option<[u64; 4]>,
}

impl MetricsRow {
    /// `|F1 - 2PR / (P + R)|`, when all three are present.
    pub fn f1_discrepancy(&self) -> Option<f64> {
        let (p, r, f) = (self.precision?, self.recall?, self.f1?);
        Some((f - 2.0 * p * r / (p + r)).abs())
    }
}

/// Reads a metrics CSV. Columns are matched by header name, so partial
/// tables (e.g. transcribed rows without counts) are accepted as long as
/// `label` is present.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, EvalError> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rd.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let label = col("label").ok_or_else(|| EvalError::Parse("missing label column".into()))?;
    let idx: Vec<Option<usize>> = METRICS_HEADER[1..].iter().map(|h| col(h)).collect();
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<Option<f64>, EvalError> {
            match idx[k].and_then(|i| rec.get(i)) {
                None | Some("") | Some(NA) => Ok(None),
                Some(s) => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| EvalError::Parse(format!("row {}: bad number {s:?}", line + 1))),
            }
        };
        let counts = match (num(7)?, num(8)?, num(9)?, num(10)?) {
            (Some(a), Some(b), Some(c), Some(d)) => Some([a, b, c, d].map(|v| v as u64)),
            _ => None,
        };
        rows.push(MetricsRow {
            label: rec.get(label).unwrap_or_default().to_string(),
            accuracy: num(0)?,
            precision: num(1)?,
            recall: num(2)?,
            f1: num(3)?,
            params: num(4)?,
            time_mean_us: num(5)?,
            time_std_us: num(6)?,
            counts,
        });
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(
    out: W,
    rows: &[(String, String, LatencySamples)],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scene",
        "label",
        "mode",
        "samples",
        "inner",
        "median_us",
        "mean_us",
        "std_us",
        "min_us",
        "coarse_timer",
    ])?;
    for (scene, label, s) in rows {
        w.write_record([
            scene.clone(),
            label.clone(),
            s.mode.name().to_string(),
            s.len().to_string(),
            s.inner.to_string(),
            format!("{:.4}", s.median()),
            format!("{:.4}", s.mean()),
            format!("{:.4}", s.std()),
            format!("{:.4}", s.min()),
            s.coarse_timer.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_throughput_csv<W: Write>(
    out: W,
    series: &[(String, Vec<ThroughputPoint>)],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "batch", "ktests_per_s"])?;
    for (label, pts) in series {
        for p in pts {
            w.write_record([
                label.clone(),
                p.batch.to_string(),
                format!("{:.3}", p.ktests_per_s),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_memory_csv<W: Write>(out: W, report: &MemoryReport) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let res: Vec<(u32, u32)> = report
        .partitions
        .first()
        .map(|p| p.depth_maps.iter().map(|&(w, h, _)| (w, h)).collect())
        .unwrap_or_default();
    let mut header = vec!["partition".to_string(), "positions".to_string()];
    header.extend(res.iter().map(|(w, h)| format!("depth_{w}x{h}_bytes")));
    header.extend(["grid_bytes", "hash_bytes", "mlp_bytes", "model_bytes"].map(String::from));
    w.write_record(&header)?;
    for p in &report.partitions {
        let mut rec = vec![p.partition.to_string(), p.positions.to_string()];
        rec.extend(p.depth_maps.iter().map(|d| d.2.to_string()));
        rec.extend(
            [p.grid_bytes, p.hash_bytes, p.mlp_bytes, p.model_bytes()].map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A named polyline for [`svg_line_chart`].
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];
const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Line chart with one polyline per series. `log_x` uses a base-2 axis,
/// which suits batch-size sweeps.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
) -> String {
    let fx = |x: f64| {
        if log_x {
            x.max(f64::MIN_POSITIVE).log2()
        } else {
            x
        }
    };
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y) in pts {
        x0 = x0.min(fx(x));
        x1 = x1.max(fx(x));
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let px = |x: f64| M + (fx(x) - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - y / (y1 * 1.05) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{M},{M} {M},{} {},{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for k in 0..=4 {
        let y = y1 * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            M - 5.0,
            py(y) + 4.0,
            y
        );
    }
    let mut ticks: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            H - M + 16.0,
            x
        );
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - M - 120.0,
            M + 16.0 * i as f64,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bar chart, one bar per label.
pub fn svg_bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let y1 = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12);
    let n = bars.len().max(1) as f64;
    let slot = (W - 2.0 * M) / n;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = v / (y1 * 1.05) * (H - 2.0 * M);
        let x = M + i as f64 * slot + 0.1 * slot;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
            H - M - h,
            0.8 * slot,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.4}</text>"#,
            x + 0.4 * slot,
            H - M - h - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + 0.4 * slot,
            H - M + 16.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
