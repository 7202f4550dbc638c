use ebm_bibound::{Error, Result};
use serde_json::{Map, Value};

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Splits `key=value`; the value is read as JSON when it parses, otherwise
/// as a bare string.
pub fn parse(arg: &str) -> Result<(String, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| config_error(arg, "override must look like key=value"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_error(key, "empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets `value` at the dotted `path`, creating intermediate objects.
pub fn apply(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut walked = String::new();
    for seg in path.split('.') {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(seg);
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        node = match node {
            Value::Object(m) => m.entry(seg.to_string()).or_insert(Value::Null),
            _ => return Err(config_error(&walked, "cannot descend into a non-object value")),
        };
    }
    *node = value;
    Ok(())
}
