//! Benchmark report model and its three renderings.
//!
//! CSV columns for latency rows: `type,direction,count,total_s,mean_us,p50_us,p99_us`.
//! The notification section, when present, is written as a second CSV block
//! with header `expected,delivered,initial_count,missed,duplicated,out_of_order,server_drops,client_overflow`.
//! JSON follows `schema/bench-report.schema.json`.

use std::fmt::Write as _;
use std::io;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Read,
    Write,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Read => "read",
            Direction::Write => "write",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub symbol: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub direction: Direction,
    pub count: u64,
    pub total_s: f64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

impl LatencyRow {
    /// Summarize per-op durations. Percentiles use the nearest-rank method.
    pub fn from_samples(symbol: &str, ty: &str, direction: Direction, samples: &[Duration]) -> Self {
        let mut ns: Vec<u64> = samples.iter().map(|d| d.as_nanos() as u64).collect();
        ns.sort_unstable();
        let total: u64 = ns.iter().sum();
        let count = ns.len() as u64;
        let us = |n: u64| n as f64 / 1e3;
        LatencyRow {
            symbol: symbol.to_owned(),
            ty: ty.to_owned(),
            direction,
            count,
            total_s: total as f64 / 1e9,
            mean_us: if count > 0 { us(total) / count as f64 } else { 0.0 },
            p50_us: us(nearest_rank(&ns, 0.50)),
            p99_us: us(nearest_rank(&ns, 0.99)),
        }
    }
}

/// Nearest-rank percentile of sorted data; 0 for empty input.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// Sum of measured per-op wall time.
    pub total_s: f64,
    pub encode_decode_s: f64,
    pub wire_wait_s: f64,
    pub other_s: f64,
}

impl AttributionReport {
    pub fn codec_share(&self) -> f64 {
        if self.total_s > 0.0 {
            self.encode_decode_s / self.total_s
        } else {
            0.0
        }
    }

    /// Relative gap between the sum of the parts and the total.
    pub fn conservation_error(&self) -> f64 {
        let parts = self.encode_decode_s + self.wire_wait_s + self.other_s;
        if self.total_s > 0.0 {
            (parts - self.total_s).abs() / self.total_s
        } else {
            parts.abs()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NotifyReport {
    pub symbol: String,
    pub clock: String,
    pub cycle_us: f64,
    pub expected: u64,
    pub delivered: u64,
    pub initial_count: u64,
    pub missed: u64,
    pub duplicated: u64,
    pub out_of_order: u64,
    /// Deliveries whose value fell outside the expected window.
    pub outside_window: u64,
    /// Every in-window delivery was exactly one above its predecessor.
    pub sequential: bool,
    pub server_drops: u64,
    pub client_overflow: u64,
    pub elapsed_s: f64,
    /// Real clock, embedded server only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_overruns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lateness_us: Option<f64>,
}

impl NotifyReport {
    pub fn missed_fraction(&self) -> f64 {
        if self.expected == 0 {
            0.0
        } else {
            self.missed as f64 / self.expected as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub warmup_ops: u64,
    pub ops_per_variable: u64,
    /// How write values were chosen.
    pub write_values: String,
    /// Highest number of simultaneously outstanding requests observed.
    pub max_in_flight: usize,
    pub rows: Vec<LatencyRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notification: Option<NotifyReport>,
}

impl Default for BenchReport {
    fn default() -> Self {
        BenchReport {
            schema_version: SCHEMA_VERSION,
            valid: true,
            error: None,
            warmup_ops: 0,
            ops_per_variable: 0,
            write_values: String::new(),
            max_in_flight: 0,
            rows: Vec::new(),
            attribution: None,
            notification: None,
        }
    }
}

impl BenchReport {
    pub fn row(&self, symbol: &str, direction: Direction) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.symbol == symbol && r.direction == direction)
    }

    /// Mean per-op latency over all rows, in microseconds.
    pub fn overall_mean_us(&self) -> f64 {
        let (total, count) = self
            .rows
            .iter()
            .fold((0.0, 0u64), |(t, c), r| (t + r.total_s, c + r.count));
        if count == 0 {
            0.0
        } else {
            total * 1e6 / count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

pub fn render(report: &BenchReport, format: ReportFormat) -> io::Result<String> {
    match format {
        ReportFormat::Table => Ok(render_table(report)),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map(|s| s + "\n")
            .map_err(io::Error::other),
    }
}

/// One line per variable with read/write totals side by side.
pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    if !report.rows.is_empty() {
        let mut symbols: Vec<(&str, &str)> = Vec::new();
        for r in &report.rows {
            if !symbols.iter().any(|(s, _)| *s == r.symbol) {
                symbols.push((&r.symbol, &r.ty));
            }
        }
        let pair = |sym: &str, f: &dyn Fn(&LatencyRow) -> String| {
            let get = |d| report.row(sym, d).map(f).unwrap_or_else(|| "-".into());
            format!("{}/{}", get(Direction::Read), get(Direction::Write))
        };
        let _ = writeln!(
            out,
            "Results for {} accesses per variable ({} warmup excluded)",
            report.ops_per_variable, report.warmup_ops
        );
        let _ = writeln!(
            out,
            "{:<10} {:>17} {:>19} {:>19} {:>19}",
            "Type", "total s r/w", "mean us r/w", "p50 us r/w", "p99 us r/w"
        );
        for (sym, ty) in symbols {
            let _ = writeln!(
                out,
                "{:<10} {:>17} {:>19} {:>19} {:>19}",
                ty,
                pair(sym, &|r| format!("{:.2}", r.total_s)),
                pair(sym, &|r| format!("{:.1}", r.mean_us)),
                pair(sym, &|r| format!("{:.1}", r.p50_us)),
                pair(sym, &|r| format!("{:.1}", r.p99_us)),
            );
        }
        let _ = writeln!(out, "overall mean {:.1} us/op, max in flight {}", report.overall_mean_us(), report.max_in_flight);
        let _ = writeln!(out, "write values: {}", report.write_values);
    }
    if let Some(a) = &report.attribution {
        let pct = |x: f64| if a.total_s > 0.0 { 100.0 * x / a.total_s } else { 0.0 };
        let _ = writeln!(out, "\nTime attribution over {:.3} s of measured ops", a.total_s);
        let _ = writeln!(out, "  encode/decode  {:>9.3} s  {:>5.1}%", a.encode_decode_s, pct(a.encode_decode_s));
        let _ = writeln!(out, "  wire wait      {:>9.3} s  {:>5.1}%", a.wire_wait_s, pct(a.wire_wait_s));
        let _ = writeln!(out, "  other          {:>9.3} s  {:>5.1}%", a.other_s, pct(a.other_s));
    }
    if let Some(n) = &report.notification {
        let _ = writeln!(out, "Notification completeness: {} at {} us, {} clock", n.symbol, n.cycle_us, n.clock);
        for (k, v) in [
            ("expected", n.expected),
            ("delivered", n.delivered),
            ("initial", n.initial_count),
            ("missed", n.missed),
            ("duplicated", n.duplicated),
            ("out of order", n.out_of_order),
            ("outside window", n.outside_window),
            ("server drops", n.server_drops),
            ("client overflow", n.client_overflow),
        ] {
            let _ = writeln!(out, "  {k:<16} {v}");
        }
        let _ = writeln!(out, "  {:<16} {}", "sequential", n.sequential);
        let _ = writeln!(out, "  {:<16} {:.3} s", "elapsed", n.elapsed_s);
        if let (Some(o), Some(l)) = (n.server_overruns, n.max_lateness_us) {
            let _ = writeln!(out, "  {:<16} {o} (max lateness {l:.0} us)", "overruns");
        }
    }
    if let Some(e) = &report.error {
        let _ = writeln!(out, "INVALID: {e}");
    }
    out
}

pub fn render_csv(report: &BenchReport) -> io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if !report.rows.is_empty() || report.notification.is_none() {
        w.write_record(["type", "direction", "count", "total_s", "mean_us", "p50_us", "p99_us"])?;
        for r in &report.rows {
            w.write_record([
                r.ty.clone(),
                r.direction.as_str().to_owned(),
                r.count.to_string(),
                format!("{:.6}", r.total_s),
                format!("{:.3}", r.mean_us),
                format!("{:.3}", r.p50_us),
                format!("{:.3}", r.p99_us),
            ])?;
        }
    }
    let mut out = w.into_inner().map_err(|e| e.into_error())?;
    if let Some(n) = &report.notification {
        if !out.is_empty() {
            out.push(b'\n');
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "expected",
            "delivered",
            "initial_count",
            "missed",
            "duplicated",
            "out_of_order",
            "server_drops",
            "client_overflow",
        ])?;
        w.write_record(
            [
                n.expected,
                n.delivered,
                n.initial_count,
                n.missed,
                n.duplicated,
                n.out_of_order,
                n.server_drops,
                n.client_overflow,
            ]
            .map(|v| v.to_string()),
        )?;
        out = w.into_inner().map_err(|e| e.into_error())?;
    }
    String::from_utf8(out).map_err(io::Error::other)
}
