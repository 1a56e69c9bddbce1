//! Canonical JSON: UTF-8, object keys sorted by byte order, no insignificant
//! whitespace. Everything that gets signed goes through here.

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub fn canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let value = serde_json::to_value(value)
        .map_err(|e| Error::InvalidArgument(format!("value is not serializable: {e}")))?;
    let mut out = Vec::with_capacity(256);
    write_value(&value, &mut out)?;
    Ok(out)
}

/// Re-encodes arbitrary JSON text canonically.
pub fn canonicalize_json(bytes: &[u8]) -> Result<Vec<u8>> {
    let value: Value = serde_json::from_slice(bytes)?;
    canonical_bytes(&value)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<()> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| n.is_f64()) {
                if !f.is_finite() {
                    return Err(Error::InvalidArgument("non-finite number".into()));
                }
            }
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Value::String(s) => write_string(s, out)?,
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out)?;
                out.push(b':');
                write_value(item, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) -> Result<()> {
    // serde_json's string escaping is already minimal and deterministic.
    serde_json::to_writer(&mut *out, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_does_not_matter() {
        let a: Value =
            serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":[3,{"k":1,"j":0}]}}"#).unwrap();
        let b: Value =
            serde_json::from_str(r#"{"a":{"x":[3,{"j":0,"k":1}],"y":2},"b":1}"#).unwrap();
        assert_eq!(canonical_bytes(&a).unwrap(), canonical_bytes(&b).unwrap());
        assert_eq!(
            String::from_utf8(canonical_bytes(&a).unwrap()).unwrap(),
            r#"{"a":{"x":[3,{"j":0,"k":1}],"y":2},"b":1}"#
        );
    }

    #[test]
    fn hashmap_insertion_order() {
        let mut m1 = HashMap::new();
        let mut m2 = HashMap::new();
        for i in 0..50 {
            m1.insert(format!("k{i}"), i);
        }
        for i in (0..50).rev() {
            m2.insert(format!("k{i}"), i);
        }
        assert_eq!(canonical_bytes(&m1).unwrap(), canonical_bytes(&m2).unwrap());
    }

    #[test]
    fn non_string_keys_rejected() {
        let mut m = HashMap::new();
        m.insert((1u8, 2u8), "x");
        assert_eq!(canonical_bytes(&m).unwrap_err().code(), "invalid-argument");
    }

    #[test]
    fn fixed_point_and_no_whitespace() {
        let v = json!({"z": "ünïcode \"q\"", "n": -12, "f": 0.5, "t": "2024-03-01T00:00:00Z"});
        let once = canonical_bytes(&v).unwrap();
        let twice = canonicalize_json(&once).unwrap();
        assert_eq!(once, twice);
        assert_eq!(
            String::from_utf8(once).unwrap(),
            r#"{"f":0.5,"n":-12,"t":"2024-03-01T00:00:00Z","z":"ünïcode \"q\""}"#
        );
    }
}
