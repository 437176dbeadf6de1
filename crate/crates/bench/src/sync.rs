//! Serial read/write latency benchmark.

use std::time::{Duration, Instant};

use adslab::client::{Attribution, Session};
use adslab::sim::SymbolInfo;
use adslab::TypedValue;

use crate::report::{AttributionReport, BenchReport, Direction, LatencyRow};
use crate::BenchError;

pub const DEFAULT_OPS: u64 = 10_000;
pub const DEFAULT_WARMUP: u64 = 100;
pub const WRITE_VALUES: &str = "op index converted to the variable type";

#[derive(Clone, Debug)]
pub struct SyncBenchSpec {
    pub variables: Vec<SymbolInfo>,
    pub ops_per_variable: u64,
    pub directions: Vec<Direction>,
    pub warmup_ops: u64,
    /// Split each variable's ops into this many chunks and visit every
    /// variable once per chunk. 1 runs each variable as a single block.
    pub rounds: u64,
}

impl SyncBenchSpec {
    pub fn new(variables: Vec<SymbolInfo>) -> Self {
        SyncBenchSpec {
            variables,
            ops_per_variable: DEFAULT_OPS,
            directions: vec![Direction::Read, Direction::Write],
            warmup_ops: DEFAULT_WARMUP,
            rounds: 1,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.variables.is_empty() {
            return Err(BenchError::Spec("no variables selected"));
        }
        if self.ops_per_variable == 0 {
            return Err(BenchError::Spec("ops per variable must be at least 1"));
        }
        if self.directions.is_empty() {
            return Err(BenchError::Spec("no direction selected"));
        }
        if self.rounds == 0 || self.rounds > self.ops_per_variable {
            return Err(BenchError::Spec("rounds must be between 1 and ops per variable"));
        }
        Ok(())
    }
}

fn delta(after: Attribution, before: Attribution) -> Attribution {
    Attribution {
        requests: after.requests - before.requests,
        encode_ns: after.encode_ns - before.encode_ns,
        decode_ns: after.decode_ns - before.decode_ns,
        wire_wait_ns: after.wire_wait_ns - before.wire_wait_ns,
    }
}

/// Run every variable and direction in order, one request at a time.
/// With `rounds > 1` the sequence is repeated per chunk of ops, and each
/// row gathers its samples from every round. A failing op stops the run;
/// the report then carries the samples taken so far and `valid == false`.
pub fn bench_sync(session: &Session, spec: &SyncBenchSpec) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    let mut report = BenchReport {
        warmup_ops: spec.warmup_ops,
        ops_per_variable: spec.ops_per_variable,
        write_values: WRITE_VALUES.into(),
        ..BenchReport::default()
    };
    session.reset_attribution();
    let mut codec_ns = 0u64;
    let mut wire_ns = 0u64;
    let pairs: Vec<(&SymbolInfo, Direction)> =
        spec.variables.iter().flat_map(|v| spec.directions.iter().map(move |&d| (v, d))).collect();
    let mut samples: Vec<Vec<Duration>> = vec![Vec::new(); pairs.len()];
    let ops = spec.ops_per_variable;

    'run: for round in 0..spec.rounds {
        let (lo, hi) = (ops * round / spec.rounds, ops * (round + 1) / spec.rounds);
        for (k, &(var, dir)) in pairs.iter().enumerate() {
            let ty = var.ty;
            let op = |i: u64| match dir {
                Direction::Read => session.read_value(&var.name, ty).map(drop),
                Direction::Write => session.write_value(&var.name, &TypedValue::from_index(ty, i)),
            };
            if round == 0 {
                for i in 0..spec.warmup_ops {
                    if let Err(e) = op(i) {
                        report.valid = false;
                        report.error = Some(format!("{} {} warmup op {i}: {e}", var.name, dir.as_str()));
                        break 'run;
                    }
                }
            }

            let writes: Vec<TypedValue> = match dir {
                Direction::Write => (lo..hi).map(|i| TypedValue::from_index(ty, i)).collect(),
                Direction::Read => Vec::new(),
            };
            let timed = |i: u64| match dir {
                Direction::Read => session.read_value(&var.name, ty).map(drop),
                Direction::Write => session.write_value(&var.name, &writes[(i - lo) as usize]),
            };
            let before = session.attribution();
            let mut failed = None;
            for i in lo..hi {
                let t = Instant::now();
                if let Err(e) = timed(i) {
                    failed = Some(format!("{} {} op {i}: {e}", var.name, dir.as_str()));
                    break;
                }
                samples[k].push(t.elapsed());
            }
            let a = delta(session.attribution(), before);
            codec_ns += a.encode_ns + a.decode_ns;
            wire_ns += a.wire_wait_ns;
            if failed.is_some() {
                report.valid = false;
                report.error = failed;
                break 'run;
            }
        }
    }

    let mut total = Duration::ZERO;
    for (&(var, dir), s) in pairs.iter().zip(&samples) {
        if s.is_empty() {
            continue;
        }
        total += s.iter().sum::<Duration>();
        report.rows.push(LatencyRow::from_samples(&var.name, &var.ty.label(), dir, s));
    }

    let total_s = total.as_secs_f64();
    let codec_s = codec_ns as f64 / 1e9;
    let wire_s = wire_ns as f64 / 1e9;
    report.attribution = Some(AttributionReport {
        total_s,
        encode_decode_s: codec_s,
        wire_wait_s: wire_s,
        other_s: (total_s - codec_s - wire_s).max(0.0),
    });
    report.max_in_flight = session.stats().max_in_flight;
    Ok(report)
}
