//! The symbol/task configuration document.
//!
//! ```text
//! # comment
//! [symbols]
//! MAIN.counter : DINT
//! MAIN.lrArr   : ARRAY[0..2] OF LREAL
//!
//! [task]
//! cycle_time = 100us
//! increment MAIN.counter
//! set MAIN.lrArr = 1.0, 2.0, 3.0
//! toggle MAIN.flag
//! ```
//!
//! Symbols get consecutive offsets in the PLC data area in declaration
//! order. At most one `[task]` section; without one the task runs an empty
//! program every [`DEFAULT_CYCLE_TIME`].

use std::collections::HashMap;
use std::time::Duration;

use thiserror::Error;

use crate::codec::index_group;
use crate::types::{PlcType, ScalarType, TypeError, TypedValue};

pub const DEFAULT_CYCLE_TIME: Duration = Duration::from_millis(10);
/// Shortest accepted cycle time.
pub const MIN_CYCLE_TIME: Duration = Duration::from_micros(50);

/// Bundled configuration: 14 scalar variables and 14 arrays of length 3.
pub const PAPER28_CONFIG: &str = include_str!("../../configs/paper28.cfg");
/// Bundled configuration: a DINT incremented once per 100 µs cycle.
pub const COUNTER_CONFIG: &str = include_str!("../../configs/counter.cfg");
/// Bundled configuration: both of the above in one program.
pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.cfg");

/// A PLC variable with its ADS address.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolInfo {
    pub name: String,
    pub index_group: u32,
    pub index_offset: u32,
    pub ty: PlcType,
    pub size: u32,
}

/// An operation of the cyclic program. Symbols are referenced by index into
/// the symbol table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProgramOp {
    /// Wrapping two's-complement increment of an integer scalar.
    Increment { symbol: usize },
    Set { symbol: usize, value: Vec<u8> },
    /// Flip a BOOL.
    Toggle { symbol: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskConfig {
    pub cycle_time: Duration,
    pub program: Vec<ProgramOp>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlcConfig {
    pub symbols: Vec<SymbolInfo>,
    pub task: TaskConfig,
}

impl PlcConfig {
    pub fn symbol(&self, name: &str) -> Option<&SymbolInfo> {
        self.symbols.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct ConfigError {
    pub line: usize,
    pub kind: ConfigErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigErrorKind {
    #[error("unknown section {0:?}")]
    UnknownSection(String),
    #[error("duplicate [task] section")]
    DuplicateTask,
    #[error("line outside any section")]
    NoSection,
    #[error("expected `name : TYPE`")]
    SymbolSyntax,
    #[error("invalid symbol name {0:?}")]
    SymbolName(String),
    #[error("duplicate symbol {0:?}")]
    DuplicateSymbol(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("invalid duration {0:?}")]
    Duration(String),
    #[error("cycle time {0:?} is below 50us or not a multiple of 100ns")]
    CycleTime(Duration),
    #[error("unknown program op {0:?}")]
    UnknownOp(String),
    #[error("undefined symbol {0:?}")]
    UndefinedSymbol(String),
    #[error("{op} not applicable to {symbol} of type {ty}")]
    OpType {
        op: &'static str,
        symbol: String,
        ty: PlcType,
    },
    #[error("data area exceeds 4 GiB")]
    AreaTooLarge,
}

fn err(line: usize, kind: ConfigErrorKind) -> ConfigError {
    ConfigError { line, kind }
}

fn parse_duration(text: &str) -> Option<Duration> {
    let t = text.trim();
    let split = t.find(|c: char| !(c.is_ascii_digit() || c == '.'))?;
    let (num, unit) = t.split_at(split);
    let num: f64 = num.parse().ok()?;
    let nanos = match unit.trim() {
        "ns" => num,
        "us" | "µs" => num * 1e3,
        "ms" => num * 1e6,
        "s" => num * 1e9,
        _ => return None,
    };
    (nanos.is_finite() && nanos >= 0.0).then(|| Duration::from_nanos(nanos.round() as u64))
}

enum Section {
    None,
    Symbols,
    Task,
}

enum RawOp<'a> {
    Increment(&'a str),
    Set(&'a str, &'a str),
    Toggle(&'a str),
}

/// Parse a configuration document. Offsets are assigned deterministically
/// from declaration order.
pub fn load_symbol_config(document: &str) -> Result<PlcConfig, ConfigError> {
    let mut symbols: Vec<SymbolInfo> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut offset: u64 = 0;
    let mut section = Section::None;
    let mut seen_task = false;
    let mut cycle_time = DEFAULT_CYCLE_TIME;
    let mut raw_ops: Vec<(usize, RawOp)> = Vec::new();

    for (idx, raw) in document.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(name) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            section = match name.trim() {
                "symbols" => Section::Symbols,
                "task" if seen_task => return Err(err(line, ConfigErrorKind::DuplicateTask)),
                "task" => {
                    seen_task = true;
                    Section::Task
                }
                other => return Err(err(line, ConfigErrorKind::UnknownSection(other.into()))),
            };
            continue;
        }
        match section {
            Section::None => return Err(err(line, ConfigErrorKind::NoSection)),
            Section::Symbols => {
                let (name, ty) = text
                    .split_once(':')
                    .ok_or(err(line, ConfigErrorKind::SymbolSyntax))?;
                let name = name.trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(err(line, ConfigErrorKind::SymbolName(name.into())));
                }
                if by_name.contains_key(name) {
                    return Err(err(line, ConfigErrorKind::DuplicateSymbol(name.into())));
                }
                let ty: PlcType = ty.parse().map_err(|e| err(line, ConfigErrorKind::Type(e)))?;
                let size = ty.size() as u64;
                if offset + size > u32::MAX as u64 {
                    return Err(err(line, ConfigErrorKind::AreaTooLarge));
                }
                by_name.insert(name.to_string(), symbols.len());
                symbols.push(SymbolInfo {
                    name: name.to_string(),
                    index_group: index_group::PLC_DATA,
                    index_offset: offset as u32,
                    ty,
                    size: size as u32,
                });
                offset += size;
            }
            Section::Task => {
                if let Some((_, value)) = text.split_once('=').filter(|(k, _)| k.trim() == "cycle_time") {
                    let d = parse_duration(value)
                        .ok_or_else(|| err(line, ConfigErrorKind::Duration(value.trim().into())))?;
                    if d < MIN_CYCLE_TIME || d.as_nanos() % 100 != 0 {
                        return Err(err(line, ConfigErrorKind::CycleTime(d)));
                    }
                    cycle_time = d;
                    continue;
                }
                let (op, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
                let rest = rest.trim();
                let op = match op {
                    "increment" => RawOp::Increment(rest),
                    "toggle" => RawOp::Toggle(rest),
                    "set" => {
                        let (sym, val) = rest
                            .split_once('=')
                            .ok_or_else(|| err(line, ConfigErrorKind::UnknownOp(text.into())))?;
                        RawOp::Set(sym.trim(), val.trim())
                    }
                    _ => return Err(err(line, ConfigErrorKind::UnknownOp(text.into()))),
                };
                raw_ops.push((line, op));
            }
        }
    }

    // Ops may reference symbols declared after the task section.
    let resolve = |line: usize, name: &str| {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| err(line, ConfigErrorKind::UndefinedSymbol(name.into())))
    };
    let mut program = Vec::with_capacity(raw_ops.len());
    for (line, op) in raw_ops {
        program.push(match op {
            RawOp::Increment(name) => {
                let symbol = resolve(line, name)?;
                let ty = symbols[symbol].ty;
                if !matches!(ty, PlcType::Scalar(t) if t.is_integer()) {
                    return Err(err(line, ConfigErrorKind::OpType { op: "increment", symbol: name.into(), ty }));
                }
                ProgramOp::Increment { symbol }
            }
            RawOp::Toggle(name) => {
                let symbol = resolve(line, name)?;
                let ty = symbols[symbol].ty;
                if ty != PlcType::Scalar(ScalarType::Bool) {
                    return Err(err(line, ConfigErrorKind::OpType { op: "toggle", symbol: name.into(), ty }));
                }
                ProgramOp::Toggle { symbol }
            }
            RawOp::Set(name, literal) => {
                let symbol = resolve(line, name)?;
                let value = TypedValue::parse(symbols[symbol].ty, literal)
                    .map_err(|e| err(line, ConfigErrorKind::Type(e)))?;
                ProgramOp::Set {
                    symbol,
                    value: value.into_raw(),
                }
            }
        });
    }

    Ok(PlcConfig {
        symbols,
        task: TaskConfig { cycle_time, program },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_subject_set_has_28_symbols() {
        let cfg = load_symbol_config(PAPER28_CONFIG).unwrap();
        assert_eq!(cfg.symbols.len(), 28);
        let scalars: Vec<_> = cfg.symbols.iter().filter(|s| !s.ty.is_array()).collect();
        assert_eq!(scalars.len(), 14);
        for s in cfg.symbols.iter().filter(|s| s.ty.is_array()) {
            assert_eq!(s.ty.elem_count(), 3);
        }
        let mut elem: Vec<_> = cfg.symbols.iter().map(|s| (s.ty.elem(), s.ty.is_array())).collect();
        elem.sort();
        elem.dedup();
        assert_eq!(elem.len(), 28);
        // consecutive layout
        let mut next = 0;
        for s in &cfg.symbols {
            assert_eq!(s.index_offset, next);
            assert_eq!(s.index_group, 0x4020);
            next += s.size;
        }
    }

    #[test]
    fn counter_program() {
        let cfg = load_symbol_config(COUNTER_CONFIG).unwrap();
        assert_eq!(cfg.task.cycle_time, Duration::from_micros(100));
        assert_eq!(cfg.task.program, vec![ProgramOp::Increment { symbol: 0 }]);
        assert_eq!(cfg.symbols[0].name, "MAIN.counter");
    }

    #[test]
    fn deterministic_offsets() {
        let a = load_symbol_config(PAPER28_CONFIG).unwrap();
        let b = load_symbol_config(PAPER28_CONFIG).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_program_combines_both() {
        let cfg = load_symbol_config(DEFAULT_CONFIG).unwrap();
        assert_eq!(cfg.symbols.len(), 29);
        assert_eq!(cfg.task.cycle_time, Duration::from_micros(100));
        assert_eq!(cfg.task.program.len(), 1);
        let sub = load_symbol_config(PAPER28_CONFIG).unwrap();
        for (a, b) in cfg.symbols.iter().zip(&sub.symbols) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_document() {
        let cfg = load_symbol_config("").unwrap();
        assert!(cfg.symbols.is_empty());
        assert_eq!(cfg.task.cycle_time, DEFAULT_CYCLE_TIME);
    }

    #[test]
    fn duplicate_symbol_named() {
        let e = load_symbol_config("[symbols]\nMAIN.x : INT\nMAIN.x : DINT\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(e.kind, ConfigErrorKind::DuplicateSymbol("MAIN.x".into()));
        assert!(e.to_string().contains("MAIN.x"));
    }

    #[test]
    fn unknown_type_has_line() {
        let e = load_symbol_config("# x\n[symbols]\nMAIN.s : STRING(80)\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(matches!(e.kind, ConfigErrorKind::Type(TypeError::UnknownType(_))));
    }

    #[test]
    fn op_validation() {
        let doc = "[task]\nincrement MAIN.r\n[symbols]\nMAIN.r : REAL\n";
        assert!(matches!(load_symbol_config(doc).unwrap_err().kind, ConfigErrorKind::OpType { .. }));
        let doc = "[task]\nincrement MAIN.q\n";
        assert_eq!(load_symbol_config(doc).unwrap_err().kind, ConfigErrorKind::UndefinedSymbol("MAIN.q".into()));
        let doc = "[symbols]\nMAIN.b : BOOL\nMAIN.a : ARRAY[0..2] OF INT\n[task]\ntoggle MAIN.b\nset MAIN.a = 1,2,-3\n";
        let cfg = load_symbol_config(doc).unwrap();
        assert_eq!(
            cfg.task.program[1],
            ProgramOp::Set { symbol: 1, value: vec![1, 0, 2, 0, 0xFD, 0xFF] }
        );
        let doc = "[task]\ncycle_time = 20us\n";
        assert!(matches!(load_symbol_config(doc).unwrap_err().kind, ConfigErrorKind::CycleTime(_)));
        let doc = "[task]\ncycle_time = 1.5ms\n[task]\n";
        assert_eq!(load_symbol_config(doc).unwrap_err().kind, ConfigErrorKind::DuplicateTask);
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("100us"), Some(Duration::from_micros(100)));
        assert_eq!(parse_duration("1.5 ms"), Some(Duration::from_micros(1500)));
        assert_eq!(parse_duration("2s"), Some(Duration::from_secs(2)));
        assert_eq!(parse_duration("2 fortnights"), None);
    }
}
