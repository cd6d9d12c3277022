//! A small record-schema language and instance validation.
//!
//! Schemas are FHIR-flavoured in naming only: a schema is a named, versioned,
//! ordered list of typed fields. Records are closed: fields not declared by
//! the schema are violations at every nesting level.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ident::is_identifier;
use crate::value::{Map, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSchema {
    pub name: String,
    pub version: u32,
    pub fields: Vec<FieldSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    String,
    Integer,
    Float,
    Boolean,
    /// Integer milliseconds since the Unix epoch, UTC, non-negative.
    Timestamp,
    /// `{"lat": degrees, "lon": degrees}`.
    GeoPoint,
    Array(Box<FieldKind>),
    Record(Vec<FieldSpec>),
}

/// Reference to a registered schema.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchemaRef {
    pub name: String,
    pub version: u32,
}

impl SchemaRef {
    pub fn new(name: impl Into<String>, version: u32) -> Self {
        Self { name: name.into(), version }
    }
}

impl fmt::Display for SchemaRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema version must be >= 1")]
    BadVersion,
    #[error("invalid identifier `{0}`")]
    BadName(String),
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind, required: bool) -> Self {
        Self { name: name.into(), kind, required }
    }
}

impl DataSchema {
    pub fn new(name: impl Into<String>, version: u32, fields: Vec<FieldSpec>) -> Self {
        Self { name: name.into(), version, fields }
    }

    pub fn reference(&self) -> SchemaRef {
        SchemaRef::new(self.name.clone(), self.version)
    }

    /// Checks the schema's own invariants.
    pub fn check(&self) -> Result<(), SchemaError> {
        if self.version < 1 {
            return Err(SchemaError::BadVersion);
        }
        if !is_identifier(&self.name) {
            return Err(SchemaError::BadName(self.name.clone()));
        }
        check_fields(&self.fields)
    }
}

fn check_fields(fields: &[FieldSpec]) -> Result<(), SchemaError> {
    let mut seen = BTreeSet::new();
    for f in fields {
        if !is_identifier(&f.name) {
            return Err(SchemaError::BadName(f.name.clone()));
        }
        if !seen.insert(f.name.as_str()) {
            return Err(SchemaError::DuplicateField(f.name.clone()));
        }
        check_kind(&f.kind)?;
    }
    Ok(())
}

fn check_kind(kind: &FieldKind) -> Result<(), SchemaError> {
    match kind {
        FieldKind::Array(inner) => check_kind(inner),
        FieldKind::Record(fields) => check_fields(fields),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationReason {
    MissingRequired,
    WrongKind,
    OutOfRange,
    UnknownField,
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MissingRequired => "missing-required",
            Self::WrongKind => "wrong-kind",
            Self::OutOfRange => "out-of-range",
            Self::UnknownField => "unknown-field",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub reason: ViolationReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self { ok: violations.is_empty(), violations }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", if v.path.is_empty() { "<root>" } else { &v.path }, v.reason)?;
        }
        Ok(())
    }
}

/// Validates `value` against `schema`, collecting every violation.
pub fn validate_instance(schema: &DataSchema, value: &Value) -> ValidationReport {
    let mut out = Vec::new();
    match value.as_object() {
        Some(map) => validate_record(&schema.fields, map, "", &mut out),
        None => push(&mut out, "", ViolationReason::WrongKind),
    }
    ValidationReport::from_violations(out)
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

fn push(out: &mut Vec<Violation>, path: &str, reason: ViolationReason) {
    out.push(Violation { path: path.to_string(), reason });
}

fn validate_record(fields: &[FieldSpec], map: &Map<String, Value>, prefix: &str, out: &mut Vec<Violation>) {
    for field in fields {
        let path = join(prefix, &field.name);
        match map.get(&field.name) {
            None | Some(Value::Null) => {
                if field.required {
                    push(out, &path, ViolationReason::MissingRequired);
                }
            }
            Some(v) => validate_kind(&field.kind, v, &path, out),
        }
    }
    for key in map.keys() {
        if !fields.iter().any(|f| &f.name == key) {
            push(out, &join(prefix, key), ViolationReason::UnknownField);
        }
    }
}

fn validate_kind(kind: &FieldKind, value: &Value, path: &str, out: &mut Vec<Violation>) {
    use ViolationReason::*;
    match kind {
        FieldKind::String => {
            if !value.is_string() {
                push(out, path, WrongKind);
            }
        }
        FieldKind::Boolean => {
            if !value.is_boolean() {
                push(out, path, WrongKind);
            }
        }
        FieldKind::Float => {
            if !value.is_number() {
                push(out, path, WrongKind);
            }
        }
        FieldKind::Integer => match value {
            Value::Number(n) if n.is_i64() => {}
            Value::Number(n) if n.is_u64() => push(out, path, OutOfRange),
            _ => push(out, path, WrongKind),
        },
        FieldKind::Timestamp => match value {
            Value::Number(n) if n.is_i64() => {
                if n.as_i64().unwrap_or(-1) < 0 {
                    push(out, path, OutOfRange);
                }
            }
            Value::Number(n) if n.is_u64() => push(out, path, OutOfRange),
            _ => push(out, path, WrongKind),
        },
        FieldKind::GeoPoint => validate_geo(value, path, out),
        FieldKind::Array(inner) => match value.as_array() {
            Some(items) => {
                for (i, item) in items.iter().enumerate() {
                    validate_kind(inner, item, &alloc::format!("{path}[{i}]"), out);
                }
            }
            None => push(out, path, WrongKind),
        },
        FieldKind::Record(fields) => match value.as_object() {
            Some(map) => validate_record(fields, map, path, out),
            None => push(out, path, WrongKind),
        },
    }
}

fn validate_geo(value: &Value, path: &str, out: &mut Vec<Violation>) {
    let Some(map) = value.as_object() else {
        push(out, path, ViolationReason::WrongKind);
        return;
    };
    for (axis, bound) in [("lat", 90.0), ("lon", 180.0)] {
        let p = join(path, axis);
        match map.get(axis) {
            None | Some(Value::Null) => push(out, &p, ViolationReason::MissingRequired),
            Some(Value::Number(n)) => {
                let x = n.as_f64().unwrap_or(f64::NAN);
                if !(-bound..=bound).contains(&x) {
                    push(out, &p, ViolationReason::OutOfRange);
                }
            }
            Some(_) => push(out, &p, ViolationReason::WrongKind),
        }
    }
    for key in map.keys() {
        if key != "lat" && key != "lon" {
            push(out, &join(path, key), ViolationReason::UnknownField);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    fn score_schema() -> DataSchema {
        DataSchema::new(
            "Score",
            1,
            vec![
                FieldSpec::new("userToken", FieldKind::String, true),
                FieldSpec::new("score", FieldKind::Integer, true),
            ],
        )
    }

    fn v(path: &str, reason: ViolationReason) -> Violation {
        Violation { path: path.into(), reason }
    }

    #[test]
    fn exact_match_is_ok() {
        let r = validate_instance(&score_schema(), &json!({"userToken": "a1", "score": 5}));
        assert!(r.ok);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn missing_required_field() {
        let r = validate_instance(&score_schema(), &json!({"userToken": "a1"}));
        assert!(!r.ok);
        assert_eq!(r.violations, vec![v("score", ViolationReason::MissingRequired)]);
    }

    #[test]
    fn reports_every_violation() {
        let r = validate_instance(&score_schema(), &json!({"userToken": "a1", "score": "5", "extra": 1}));
        assert_eq!(
            r.violations,
            vec![v("score", ViolationReason::WrongKind), v("extra", ViolationReason::UnknownField)]
        );
    }

    #[test]
    fn latitude_bound() {
        let s = DataSchema::new("Loc", 1, vec![FieldSpec::new("loc", FieldKind::GeoPoint, true)]);
        let r = validate_instance(&s, &json!({"loc": {"lat": 91.0, "lon": 0.0}}));
        assert_eq!(r.violations, vec![v("loc.lat", ViolationReason::OutOfRange)]);
        assert!(validate_instance(&s, &json!({"loc": {"lat": -90, "lon": 180.0}})).ok);
    }

    #[test]
    fn nested_records_and_arrays() {
        let s = DataSchema::new(
            "Resp",
            1,
            vec![FieldSpec::new(
                "answers",
                FieldKind::Array(Box::new(FieldKind::Record(vec![
                    FieldSpec::new("qid", FieldKind::String, true),
                    FieldSpec::new("at", FieldKind::Timestamp, false),
                ]))),
                true,
            )],
        );
        let r = validate_instance(
            &s,
            &json!({"answers": [{"qid": "q1"}, {"qid": 2, "at": -1, "x": true}]}),
        );
        assert_eq!(
            r.violations,
            vec![
                v("answers[1].qid", ViolationReason::WrongKind),
                v("answers[1].at", ViolationReason::OutOfRange),
                v("answers[1].x", ViolationReason::UnknownField),
            ]
        );
    }

    #[test]
    fn non_record_root() {
        let r = validate_instance(&score_schema(), &json!([1, 2]));
        assert_eq!(r.violations, vec![v("", ViolationReason::WrongKind)]);
    }

    #[test]
    fn schema_well_formedness() {
        assert!(score_schema().check().is_ok());
        let mut dup = score_schema();
        dup.fields.push(FieldSpec::new("score", FieldKind::Float, false));
        assert_eq!(dup.check(), Err(SchemaError::DuplicateField("score".into())));
        let mut v0 = score_schema();
        v0.version = 0;
        assert_eq!(v0.check(), Err(SchemaError::BadVersion));
    }

    #[test]
    fn schema_document_form() {
        let s = DataSchema::new(
            "Obs",
            2,
            vec![
                FieldSpec::new("where", FieldKind::GeoPoint, true),
                FieldSpec::new("tags", FieldKind::Array(Box::new(FieldKind::String)), false),
            ],
        );
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(
            text,
            r#"{"name":"Obs","version":2,"fields":[{"name":"where","kind":"geo-point","required":true},{"name":"tags","kind":{"array":"string"},"required":false}]}"#
        );
        assert_eq!(serde_json::from_str::<DataSchema>(&text).unwrap(), s);
    }
}
