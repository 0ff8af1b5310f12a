use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a heap object.
///
/// `serial` is assigned in allocation order and never reused, so it doubles as
/// the stable, user-visible name of an object. `slot` is the heap cell the
/// object occupies; cells are recycled after collection, which is why
/// equality always includes the serial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjId {
    pub serial: u64,
    pub slot: u32,
}

impl fmt::Display for ObjId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.serial)
    }
}

/// Runtime value. Only integers, booleans and references exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Ref(ObjId),
    Null,
}

/// Static kind of a field or constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    Int,
    Bool,
    Ref,
}

impl FieldKind {
    pub fn default_value(self) -> Value {
        match self {
            FieldKind::Int => Value::Int(0),
            FieldKind::Bool => Value::Bool(false),
            FieldKind::Ref => Value::Null,
        }
    }

    pub fn admits(self, value: Value) -> bool {
        matches!(
            (self, value),
            (FieldKind::Int, Value::Int(_))
                | (FieldKind::Bool, Value::Bool(_))
                | (FieldKind::Ref, Value::Ref(_) | Value::Null)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Int => "int",
            FieldKind::Bool => "bool",
            FieldKind::Ref => "ref",
        }
    }

    pub fn parse(s: &str) -> Option<FieldKind> {
        match s {
            "int" => Some(FieldKind::Int),
            "bool" => Some(FieldKind::Bool),
            "ref" => Some(FieldKind::Ref),
            _ => None,
        }
    }
}

impl Value {
    pub fn is_reference_like(self) -> bool {
        matches!(self, Value::Ref(_) | Value::Null)
    }

    pub fn as_obj(self) -> Option<ObjId> {
        match self {
            Value::Ref(id) => Some(id),
            _ => None,
        }
    }

    /// Truth value used by `ifeq`/`ifne`: `false` and `0` are false.
    pub fn truthy(self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(b),
            Value::Int(i) => Some(i != 0),
            _ => None,
        }
    }

    /// Whether two values are of a kind that `==`/`!=` may compare.
    pub fn same_kind(self, other: Value) -> bool {
        matches!(
            (self, other),
            (Value::Int(_), Value::Int(_)) | (Value::Bool(_), Value::Bool(_))
        ) || (self.is_reference_like() && other.is_reference_like())
    }
}
