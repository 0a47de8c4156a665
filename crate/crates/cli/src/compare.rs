//! Field-wise comparison of two run reports.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

/// Keys that legitimately differ between identical runs.
const VOLATILE: &[&str] = &["timings", "runtime"];

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("report `{0}` has no `experiment` field")]
    MissingExperiment(&'static str),
    #[error("experiment mismatch: `{0}` vs `{1}`")]
    TypeMismatch(String, String),
}

/// A field that differs beyond the threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldDiff {
    pub path: String,
    pub a: Value,
    pub b: Value,
    /// `|a − b| / max(|a|, |b|)` for numbers, absent otherwise.
    pub relative: Option<f64>,
}

/// Lists the fields of `a` and `b` that differ, numbers beyond relative `rtol`.
pub fn compare(a: &Value, b: &Value, rtol: f64) -> Result<Vec<FieldDiff>, CompareError> {
    let kind = |v: &Value, which| v.get("experiment").cloned().ok_or(CompareError::MissingExperiment(which));
    let (ka, kb) = (kind(a, "a")?, kind(b, "b")?);
    if ka != kb {
        return Err(CompareError::TypeMismatch(ka.to_string(), kb.to_string()));
    }
    let mut out = Vec::new();
    walk("", a, b, rtol, &mut out);
    Ok(out)
}

fn walk(path: &str, a: &Value, b: &Value, rtol: f64, out: &mut Vec<FieldDiff>) {
    let push = |out: &mut Vec<FieldDiff>, relative| out.push(FieldDiff { path: path.to_string(), a: a.clone(), b: b.clone(), relative });
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                if VOLATILE.contains(&k.as_str()) {
                    continue;
                }
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                walk(&sub, x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null), rtol, out);
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            // Checks are keyed by name so that the path stays readable.
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                let label = match (u.get("name").or(u.get("label")), v.get("name").or(v.get("label"))) {
                    (Some(Value::String(n)), Some(Value::String(m))) if n == m && !n.is_empty() => n.clone(),
                    _ => i.to_string(),
                };
                walk(&format!("{path}[{label}]"), u, v, rtol, out);
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            let scale = x.abs().max(y.abs());
            let rel = if scale == 0.0 { 0.0 } else { (x - y).abs() / scale };
            if !(rel <= rtol) {
                push(out, Some(rel));
            }
        }
        _ if a == b => {}
        _ => push(out, None),
    }
}
