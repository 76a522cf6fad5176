//! `key.path=value` overrides applied to any serde-representable config.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Replaces the field addressed by the dotted key. The value is parsed as
/// JSON and falls back to a plain string.
pub fn apply_override<T: Serialize + DeserializeOwned>(target: &mut T, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut tree = serde_json::to_value(&*target).map_err(|e| Error::Config(e.to_string()))?;
    let mut node = &mut tree;
    for part in key.split('.') {
        node = node
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    *node = value;
    *target = serde_json::from_value(tree).map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))?;
    Ok(())
}

/// Recursively merges `patch` into `base`; objects merge key by key, any
/// other value replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"x": {"y": 1, "z": 2}, "w": [1]});
        merge_json(&mut a, json!({"x": {"z": 3}, "w": [2, 3]}));
        assert_eq!(a, json!({"x": {"y": 1, "z": 3}, "w": [2, 3]}));
    }

    #[test]
    fn bare_strings_are_accepted() {
        let mut v = json!({"mode": "a"});
        apply_override(&mut v, "mode=b").unwrap();
        assert_eq!(v["mode"], "b");
    }
}
