//! Canonical JSON: sorted object keys, no whitespace, integers verbatim and
//! every float written with 17 significant digits in exponent form. Identical
//! values always produce identical bytes, and 17 digits round-trip every f64.

use serde::Serialize;
use serde_json::Value;

use super::StoreError;

pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, StoreError> {
    let value = serde_json::to_value(value).map_err(|e| StoreError::Serialize(e.to_string()))?;
    let mut out = Vec::new();
    write_value(&value, &mut out)?;
    Ok(out)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), StoreError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else {
                let f = n.as_f64().ok_or_else(|| StoreError::Serialize(format!("bad number {n}")))?;
                out.extend_from_slice(format_float(f).as_bytes());
            }
        }
        Value::String(s) => {
            let quoted = serde_json::to_string(s).map_err(|e| StoreError::Serialize(e.to_string()))?;
            out.extend_from_slice(quoted.as_bytes());
        }
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
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let quoted =
                    serde_json::to_string(key).map_err(|e| StoreError::Serialize(e.to_string()))?;
                out.extend_from_slice(quoted.as_bytes());
                out.push(b':');
                write_value(&map[key], out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

/// 17 significant digits, e.g. `1.0000000000000000e0`.
pub fn format_float(f: f64) -> String {
    format!("{f:.16e}")
}
