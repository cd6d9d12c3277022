//! Structured values and their canonical byte form.
//!
//! Structured values are JSON values. The canonical form is compact JSON with
//! record keys in byte order, integers in plain decimal and floats in the
//! shortest form that round-trips (always carrying a `.` or exponent so they
//! decode back as floats). `null` is not a schema kind and is rejected.

use alloc::string::String;
use alloc::vec::Vec;

pub use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonicalError {
    #[error("value at `{path}` is not encodable (null)")]
    NonEncodable { path: String },
    #[error("canonical bytes do not parse: {0}")]
    Malformed(String),
}

/// Encodes `value` into its canonical byte form.
pub fn canonical_encode(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    check_encodable(value, &mut String::new())?;
    serde_json::to_vec(value).map_err(|e| CanonicalError::Malformed(alloc::format!("{e}")))
}

/// Parses canonical bytes back into a structured value.
///
/// Any compact or non-compact JSON is accepted; only `null` is refused.
pub fn canonical_decode(bytes: &[u8]) -> Result<Value, CanonicalError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| CanonicalError::Malformed(alloc::format!("{e}")))?;
    check_encodable(&value, &mut String::new())?;
    Ok(value)
}

fn check_encodable(value: &Value, path: &mut String) -> Result<(), CanonicalError> {
    match value {
        Value::Null => Err(CanonicalError::NonEncodable { path: path.clone() }),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                path.push_str(&alloc::format!("[{i}]"));
                check_encodable(item, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        Value::Object(map) => {
            for (k, v) in map {
                let len = path.len();
                if !path.is_empty() {
                    path.push('.');
                }
                path.push_str(k);
                check_encodable(v, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_is_irrelevant() {
        let a: Value = serde_json::from_str(r#"{"b":2,"a":1}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":1,"b":2}"#).unwrap();
        assert_eq!(canonical_encode(&a).unwrap(), canonical_encode(&b).unwrap());
        assert_eq!(canonical_encode(&a).unwrap(), br#"{"a":1,"b":2}"#);
    }

    #[test]
    fn empty_record() {
        assert_eq!(canonical_encode(&json!({})).unwrap(), b"{}");
    }

    #[test]
    fn floats_keep_their_kind() {
        let v = json!({"x": 1.0, "y": 0.1, "z": 1e300, "n": 7});
        let bytes = canonical_encode(&v).unwrap();
        assert_eq!(bytes, br#"{"n":7,"x":1.0,"y":0.1,"z":1e+300}"#);
        assert_eq!(canonical_decode(&bytes).unwrap(), v);
    }

    #[test]
    fn null_is_rejected_with_path() {
        let err = canonical_encode(&json!({"a": [1, {"b": null}]})).unwrap_err();
        assert_eq!(err, CanonicalError::NonEncodable { path: "a[1].b".into() });
    }

    #[test]
    fn garbage_does_not_decode() {
        assert!(matches!(canonical_decode(b"\x00\x01"), Err(CanonicalError::Malformed(_))));
    }
}
