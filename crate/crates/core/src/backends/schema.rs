//! Structural checks for model responses.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Response shapes the pipeline knows how to consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Extraction,
    Recalibration,
    Merge,
    TrackLink,
    TrackDelta,
    Reason,
    RetrieveFilter,
    Predict,
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, String> {
    v.get(key).ok_or_else(|| format!("missing required key {key:?}"))
}

fn string_field(v: &Value, key: &str) -> Result<(), String> {
    match field(v, key)? {
        Value::String(s) if !s.trim().is_empty() => Ok(()),
        Value::String(_) => Err(format!("key {key:?} is empty")),
        _ => Err(format!("key {key:?} must be a string")),
    }
}

fn text_or_list_field(v: &Value, key: &str) -> Result<(), String> {
    match field(v, key)? {
        Value::String(s) if !s.trim().is_empty() => Ok(()),
        Value::Array(a) if !a.is_empty() => Ok(()),
        _ => Err(format!("key {key:?} must be non-empty text")),
    }
}

fn array_field<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>, String> {
    field(v, key)?.as_array().ok_or_else(|| format!("key {key:?} must be a list"))
}

fn index_value(v: &Value) -> bool {
    v.as_u64().is_some() || v.as_str().is_some_and(|s| s.trim().parse::<u64>().is_ok())
}

/// Checks that `value` has the keys and value kinds required by `schema`.
pub fn validate(schema: SchemaId, value: &Value) -> Result<(), String> {
    if !value.is_object() {
        return Err("response must be a JSON object".into());
    }
    match schema {
        SchemaId::Extraction => {
            for (i, e) in array_field(value, "events")?.iter().enumerate() {
                if !e.is_object() {
                    return Err(format!("event {} must be an object", i + 1));
                }
                string_field(e, "type").map_err(|m| format!("event {}: {m}", i + 1))?;
                string_field(e, "description").map_err(|m| format!("event {}: {m}", i + 1))?;
            }
            Ok(())
        }
        SchemaId::Recalibration => {
            for c in array_field(value, "corrections")? {
                if !field(c, "event").map(index_value).unwrap_or(false) {
                    return Err("each correction needs an integer \"event\"".into());
                }
                string_field(c, "type")?;
            }
            Ok(())
        }
        SchemaId::Merge => {
            let events = array_field(value, "events")?;
            if events.is_empty() {
                return Err("at least one merged event is required".into());
            }
            for e in events {
                if let Some(m) = e.get("members") {
                    if !m.as_array().is_some_and(|a| a.iter().all(index_value)) {
                        return Err("\"members\" must be a list of report numbers".into());
                    }
                }
            }
            Ok(())
        }
        SchemaId::TrackLink => match field(value, "predecessor")? {
            Value::Null => Ok(()),
            v if index_value(v) => Ok(()),
            _ => Err("\"predecessor\" must be a candidate number or 0".into()),
        },
        SchemaId::TrackDelta => {
            string_field(value, "incremental_information")?;
            string_field(value, "polarity")
        }
        SchemaId::Reason => {
            text_or_list_field(value, "Reason for price movement")?;
            text_or_list_field(value, "Events causing the impact")
        }
        SchemaId::RetrieveFilter => {
            if array_field(value, "selected")?.iter().all(index_value) {
                Ok(())
            } else {
                Err("\"selected\" must be a list of candidate numbers".into())
            }
        }
        SchemaId::Predict => {
            string_field(value, "Price movement")?;
            text_or_list_field(value, "Reason for price movement")
        }
    }
}

/// Pulls the JSON object out of a model reply, tolerating code fences and
/// surrounding prose.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    let start = trimmed.find('{').ok_or("no JSON object in response")?;
    let end = trimmed.rfind('}').ok_or("no JSON object in response")?;
    if end < start {
        return Err("no JSON object in response".into());
    }
    serde_json::from_str(&trimmed[start..=end]).map_err(|e| format!("invalid JSON: {e}"))
}

/// Reads text that may have been returned as a string or a list of strings.
pub fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Array(items) => items.iter().map(text_of).collect::<Vec<_>>().join("; "),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Reads a 1-based candidate number.
pub fn index_of(v: &Value) -> Option<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
}
