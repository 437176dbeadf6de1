//! IEC 61131-3 elementary types, arrays of them, and typed values.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The fourteen elementary scalar types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    Bool,
    Byte,
    Word,
    DWord,
    SInt,
    USInt,
    Int,
    UInt,
    DInt,
    UDInt,
    LInt,
    ULInt,
    Real,
    LReal,
}

impl ScalarType {
    pub const ALL: [ScalarType; 14] = [
        ScalarType::Bool,
        ScalarType::Byte,
        ScalarType::Word,
        ScalarType::DWord,
        ScalarType::SInt,
        ScalarType::USInt,
        ScalarType::Int,
        ScalarType::UInt,
        ScalarType::DInt,
        ScalarType::UDInt,
        ScalarType::LInt,
        ScalarType::ULInt,
        ScalarType::Real,
        ScalarType::LReal,
    ];

    pub const fn size(self) -> usize {
        use ScalarType::*;
        match self {
            Bool | Byte | SInt | USInt => 1,
            Word | Int | UInt => 2,
            DWord | DInt | UDInt | Real => 4,
            LInt | ULInt | LReal => 8,
        }
    }

    /// Upper-case IEC keyword, e.g. `LREAL`.
    pub const fn keyword(self) -> &'static str {
        use ScalarType::*;
        match self {
            Bool => "BOOL",
            Byte => "BYTE",
            Word => "WORD",
            DWord => "DWORD",
            SInt => "SINT",
            USInt => "USINT",
            Int => "INT",
            UInt => "UINT",
            DInt => "DINT",
            UDInt => "UDINT",
            LInt => "LINT",
            ULInt => "ULINT",
            Real => "REAL",
            LReal => "LREAL",
        }
    }

    /// Mixed-case label used in reports, e.g. `LReal`.
    pub const fn label(self) -> &'static str {
        use ScalarType::*;
        match self {
            Bool => "Bool",
            Byte => "Byte",
            Word => "Word",
            DWord => "DWord",
            SInt => "SInt",
            USInt => "USInt",
            Int => "Int",
            UInt => "UInt",
            DInt => "DInt",
            UDInt => "UDInt",
            LInt => "LInt",
            ULInt => "ULInt",
            Real => "Real",
            LReal => "LReal",
        }
    }

    /// Integer types, including the bit-string types BYTE..DWORD.
    pub const fn is_integer(self) -> bool {
        !matches!(self, ScalarType::Bool | ScalarType::Real | ScalarType::LReal)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("unknown type name {0:?}")]
    UnknownType(String),
    #[error("array length must be positive in {0:?}")]
    EmptyArray(String),
    #[error("{ty} needs {expected} bytes, got {actual}")]
    Size {
        ty: PlcType,
        expected: usize,
        actual: usize,
    },
    #[error("value {value:?} is not a valid {ty}")]
    Literal { ty: ScalarType, value: String },
    #[error("{ty} expects {expected} elements, got {actual}")]
    ElementCount {
        ty: PlcType,
        expected: usize,
        actual: usize,
    },
    #[error("scalar {value:?} does not have type {ty}")]
    Mismatch { ty: ScalarType, value: Scalar },
}

impl FromStr for ScalarType {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        ScalarType::ALL
            .into_iter()
            .find(|t| t.keyword() == upper)
            .ok_or_else(|| TypeError::UnknownType(s.trim().to_string()))
    }
}

/// A variable type: a scalar or a one-dimensional array of scalars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlcType {
    Scalar(ScalarType),
    Array { elem: ScalarType, len: u32 },
}

impl PlcType {
    pub fn array(elem: ScalarType, len: u32) -> PlcType {
        PlcType::Array { elem, len }
    }

    pub fn size(self) -> usize {
        match self {
            PlcType::Scalar(t) => t.size(),
            PlcType::Array { elem, len } => elem.size() * len as usize,
        }
    }

    pub fn elem(self) -> ScalarType {
        match self {
            PlcType::Scalar(t) | PlcType::Array { elem: t, .. } => t,
        }
    }

    pub fn elem_count(self) -> usize {
        match self {
            PlcType::Scalar(_) => 1,
            PlcType::Array { len, .. } => len as usize,
        }
    }

    pub fn is_array(self) -> bool {
        matches!(self, PlcType::Array { .. })
    }

    /// Report label: `LReal` or `LReal[3]`.
    pub fn label(self) -> String {
        match self {
            PlcType::Scalar(t) => t.label().to_string(),
            PlcType::Array { elem, len } => format!("{}[{len}]", elem.label()),
        }
    }
}

impl From<ScalarType> for PlcType {
    fn from(t: ScalarType) -> Self {
        PlcType::Scalar(t)
    }
}

impl fmt::Display for PlcType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlcType::Scalar(t) => write!(f, "{t}"),
            PlcType::Array { elem, len } => write!(f, "ARRAY[0..{}] OF {elem}", len - 1),
        }
    }
}

impl FromStr for PlcType {
    type Err = TypeError;

    /// Accepts `LREAL`, `ARRAY[0..2] OF LREAL` and `ARRAY[3] OF LREAL`,
    /// case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        let upper = text.to_ascii_uppercase();
        let Some(rest) = upper.strip_prefix("ARRAY") else {
            return Ok(PlcType::Scalar(text.parse()?));
        };
        let unknown = || TypeError::UnknownType(text.to_string());
        let rest = rest.trim_start().strip_prefix('[').ok_or_else(unknown)?;
        let (bounds, rest) = rest.split_once(']').ok_or_else(unknown)?;
        let elem = rest.trim_start().strip_prefix("OF").ok_or_else(unknown)?;
        if !elem.starts_with(char::is_whitespace) {
            return Err(unknown());
        }
        let elem: ScalarType = elem.parse()?;
        let len: i64 = match bounds.split_once("..") {
            Some((lo, hi)) => {
                let lo: i64 = lo.trim().parse().map_err(|_| unknown())?;
                let hi: i64 = hi.trim().parse().map_err(|_| unknown())?;
                hi - lo + 1
            }
            None => bounds.trim().parse().map_err(|_| unknown())?,
        };
        if len <= 0 {
            return Err(TypeError::EmptyArray(text.to_string()));
        }
        let len = u32::try_from(len).map_err(|_| unknown())?;
        Ok(PlcType::Array { elem, len })
    }
}

/// One decoded scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    Bool(bool),
    Byte(u8),
    Word(u16),
    DWord(u32),
    SInt(i8),
    USInt(u8),
    Int(i16),
    UInt(u16),
    DInt(i32),
    UDInt(u32),
    LInt(i64),
    ULInt(u64),
    Real(f32),
    LReal(f64),
}

impl Scalar {
    pub fn ty(&self) -> ScalarType {
        match self {
            Scalar::Bool(_) => ScalarType::Bool,
            Scalar::Byte(_) => ScalarType::Byte,
            Scalar::Word(_) => ScalarType::Word,
            Scalar::DWord(_) => ScalarType::DWord,
            Scalar::SInt(_) => ScalarType::SInt,
            Scalar::USInt(_) => ScalarType::USInt,
            Scalar::Int(_) => ScalarType::Int,
            Scalar::UInt(_) => ScalarType::UInt,
            Scalar::DInt(_) => ScalarType::DInt,
            Scalar::UDInt(_) => ScalarType::UDInt,
            Scalar::LInt(_) => ScalarType::LInt,
            Scalar::ULInt(_) => ScalarType::ULInt,
            Scalar::Real(_) => ScalarType::Real,
            Scalar::LReal(_) => ScalarType::LReal,
        }
    }

    pub fn write_le(&self, out: &mut Vec<u8>) {
        match *self {
            Scalar::Bool(v) => out.push(v as u8),
            Scalar::Byte(v) | Scalar::USInt(v) => out.push(v),
            Scalar::SInt(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::Word(v) | Scalar::UInt(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::Int(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::DWord(v) | Scalar::UDInt(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::DInt(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::LInt(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::ULInt(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::Real(v) => out.extend_from_slice(&v.to_le_bytes()),
            Scalar::LReal(v) => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    /// Decode `ty.size()` bytes. BOOL is true for any nonzero byte.
    pub fn read_le(ty: ScalarType, b: &[u8]) -> Scalar {
        let b = &b[..ty.size()];
        macro_rules! le {
            ($t:ty) => {
                <$t>::from_le_bytes(b.try_into().expect("sized above"))
            };
        }
        match ty {
            ScalarType::Bool => Scalar::Bool(b[0] != 0),
            ScalarType::Byte => Scalar::Byte(b[0]),
            ScalarType::USInt => Scalar::USInt(b[0]),
            ScalarType::SInt => Scalar::SInt(le!(i8)),
            ScalarType::Word => Scalar::Word(le!(u16)),
            ScalarType::UInt => Scalar::UInt(le!(u16)),
            ScalarType::Int => Scalar::Int(le!(i16)),
            ScalarType::DWord => Scalar::DWord(le!(u32)),
            ScalarType::UDInt => Scalar::UDInt(le!(u32)),
            ScalarType::DInt => Scalar::DInt(le!(i32)),
            ScalarType::LInt => Scalar::LInt(le!(i64)),
            ScalarType::ULInt => Scalar::ULInt(le!(u64)),
            ScalarType::Real => Scalar::Real(le!(f32)),
            ScalarType::LReal => Scalar::LReal(le!(f64)),
        }
    }

    /// Parse a literal of the given type: `TRUE`/`FALSE`/`1`/`0` for BOOL,
    /// decimal or `0x` hex for integers, decimal for reals.
    pub fn parse(ty: ScalarType, text: &str) -> Result<Scalar, TypeError> {
        let t = text.trim();
        let err = || TypeError::Literal {
            ty,
            value: t.to_string(),
        };
        fn int<T: TryFrom<i128>>(t: &str) -> Option<T> {
            let v = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                Some(hex) => i128::from_str_radix(hex, 16).ok()?,
                None => t.parse::<i128>().ok()?,
            };
            T::try_from(v).ok()
        }
        Ok(match ty {
            ScalarType::Bool => match t.to_ascii_uppercase().as_str() {
                "TRUE" | "1" => Scalar::Bool(true),
                "FALSE" | "0" => Scalar::Bool(false),
                _ => return Err(err()),
            },
            ScalarType::Byte => Scalar::Byte(int(t).ok_or_else(err)?),
            ScalarType::USInt => Scalar::USInt(int(t).ok_or_else(err)?),
            ScalarType::SInt => Scalar::SInt(int(t).ok_or_else(err)?),
            ScalarType::Word => Scalar::Word(int(t).ok_or_else(err)?),
            ScalarType::UInt => Scalar::UInt(int(t).ok_or_else(err)?),
            ScalarType::Int => Scalar::Int(int(t).ok_or_else(err)?),
            ScalarType::DWord => Scalar::DWord(int(t).ok_or_else(err)?),
            ScalarType::UDInt => Scalar::UDInt(int(t).ok_or_else(err)?),
            ScalarType::DInt => Scalar::DInt(int(t).ok_or_else(err)?),
            ScalarType::LInt => Scalar::LInt(int(t).ok_or_else(err)?),
            ScalarType::ULInt => Scalar::ULInt(int(t).ok_or_else(err)?),
            ScalarType::Real => Scalar::Real(t.parse().map_err(|_| err())?),
            ScalarType::LReal => Scalar::LReal(t.parse().map_err(|_| err())?),
        })
    }

    /// A value derived from a counter, wrapping into the type's range.
    pub fn from_index(ty: ScalarType, i: u64) -> Scalar {
        match ty {
            ScalarType::Bool => Scalar::Bool(i % 2 == 1),
            ScalarType::Byte => Scalar::Byte(i as u8),
            ScalarType::USInt => Scalar::USInt(i as u8),
            ScalarType::SInt => Scalar::SInt(i as i8),
            ScalarType::Word => Scalar::Word(i as u16),
            ScalarType::UInt => Scalar::UInt(i as u16),
            ScalarType::Int => Scalar::Int(i as i16),
            ScalarType::DWord => Scalar::DWord(i as u32),
            ScalarType::UDInt => Scalar::UDInt(i as u32),
            ScalarType::DInt => Scalar::DInt(i as i32),
            ScalarType::LInt => Scalar::LInt(i as i64),
            ScalarType::ULInt => Scalar::ULInt(i),
            ScalarType::Real => Scalar::Real(i as f32),
            ScalarType::LReal => Scalar::LReal(i as f64),
        }
    }

    /// Integer view for integer-typed scalars.
    pub fn as_i128(&self) -> Option<i128> {
        Some(match *self {
            Scalar::Byte(v) | Scalar::USInt(v) => v.into(),
            Scalar::SInt(v) => v.into(),
            Scalar::Word(v) | Scalar::UInt(v) => v.into(),
            Scalar::Int(v) => v.into(),
            Scalar::DWord(v) | Scalar::UDInt(v) => v.into(),
            Scalar::DInt(v) => v.into(),
            Scalar::LInt(v) => v.into(),
            Scalar::ULInt(v) => v.into(),
            Scalar::Bool(_) | Scalar::Real(_) | Scalar::LReal(_) => return None,
        })
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(v) => write!(f, "{}", if *v { "TRUE" } else { "FALSE" }),
            Scalar::Real(v) => write!(f, "{v}"),
            Scalar::LReal(v) => write!(f, "{v}"),
            other => write!(f, "{}", other.as_i128().expect("integer")),
        }
    }
}

/// Raw little-endian bytes tagged with their PLC type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypedValue {
    ty: PlcType,
    raw: Vec<u8>,
}

impl TypedValue {
    pub fn from_raw(ty: PlcType, raw: Vec<u8>) -> Result<Self, TypeError> {
        if raw.len() != ty.size() {
            return Err(TypeError::Size {
                ty,
                expected: ty.size(),
                actual: raw.len(),
            });
        }
        Ok(TypedValue { ty, raw })
    }

    pub fn scalar(value: Scalar) -> Self {
        let mut raw = Vec::with_capacity(value.ty().size());
        value.write_le(&mut raw);
        TypedValue {
            ty: PlcType::Scalar(value.ty()),
            raw,
        }
    }

    pub fn array(elem: ScalarType, values: &[Scalar]) -> Result<Self, TypeError> {
        let ty = PlcType::Array {
            elem,
            len: values.len() as u32,
        };
        if values.is_empty() {
            return Err(TypeError::EmptyArray(ty.to_string()));
        }
        let mut raw = Vec::with_capacity(ty.size());
        for v in values {
            if v.ty() != elem {
                return Err(TypeError::Mismatch { ty: elem, value: *v });
            }
            v.write_le(&mut raw);
        }
        Ok(TypedValue { ty, raw })
    }

    /// A value derived from an op counter, every element distinct where the
    /// type allows it.
    pub fn from_index(ty: PlcType, i: u64) -> Self {
        let mut raw = Vec::with_capacity(ty.size());
        for k in 0..ty.elem_count() as u64 {
            Scalar::from_index(ty.elem(), i.wrapping_add(k)).write_le(&mut raw);
        }
        TypedValue { ty, raw }
    }

    /// Parse one literal per element, comma-separated for arrays.
    pub fn parse(ty: PlcType, text: &str) -> Result<Self, TypeError> {
        let elems: Vec<Scalar> = text
            .split(',')
            .map(|t| Scalar::parse(ty.elem(), t))
            .collect::<Result<_, _>>()?;
        if elems.len() != ty.elem_count() {
            return Err(TypeError::ElementCount {
                ty,
                expected: ty.elem_count(),
                actual: elems.len(),
            });
        }
        match ty {
            PlcType::Scalar(_) => Ok(TypedValue::scalar(elems[0])),
            PlcType::Array { elem, .. } => TypedValue::array(elem, &elems),
        }
    }

    pub fn ty(&self) -> PlcType {
        self.ty
    }

    pub fn raw(&self) -> &[u8] {
        &self.raw
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.raw
    }

    /// Decoded elements; one for a scalar.
    pub fn elements(&self) -> Vec<Scalar> {
        let elem = self.ty.elem();
        self.raw
            .chunks_exact(elem.size())
            .map(|c| Scalar::read_le(elem, c))
            .collect()
    }

    pub fn as_scalar(&self) -> Option<Scalar> {
        match self.ty {
            PlcType::Scalar(t) => Some(Scalar::read_le(t, &self.raw)),
            PlcType::Array { .. } => None,
        }
    }
}

impl fmt::Display for TypedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let elems = self.elements();
        if self.ty.is_array() {
            f.write_str("[")?;
        }
        for (i, e) in elems.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        if self.ty.is_array() {
            f.write_str("]")?;
        }
        Ok(())
    }
}
