//! `--set key=value` edits applied to the scenario JSON before it is typed.

use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OverrideError {
    #[error("override '{0}' is not of the form key=value")]
    Syntax(String),
    #[error("override '{path}': {why}")]
    Path { path: String, why: String },
}

/// Apply `a.b.0.c=value` to `doc`. The value is read as JSON when it parses,
/// otherwise as a plain string. Missing object keys are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), OverrideError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| OverrideError::Syntax(assignment.into()))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(OverrideError::Syntax(assignment.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let err = |why: &str| OverrideError::Path { path: path.into(), why: why.into() };
    let mut cur = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*seg).into(), value);
                    return Ok(());
                }
                map.entry(*seg).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| err(&format!("'{seg}' is not an array index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| err(&format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                if last {
                    map.insert((*seg).into(), value);
                    return Ok(());
                }
                map.entry(*seg).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(err(&format!("'{seg}' descends into a scalar"))),
        };
    }
    unreachable!("loop returns on the last segment")
}
