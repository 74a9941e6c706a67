//! Canonical JSON text: sorted object keys and a fixed float format.

use std::fmt::Write;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloatStyle {
    /// Six decimals; for reports.
    #[default]
    Fixed6,
    /// Shortest text that parses back to the same value; for data that is
    /// read again, such as pipeline results.
    RoundTrip,
}

/// Serializes `value` canonically with six-decimal floats, pretty-printed
/// with two-space indents and a trailing newline.
pub fn to_canonical_string<S: Serialize>(value: &S) -> serde_json::Result<String> {
    to_canonical_string_with(value, FloatStyle::Fixed6)
}

pub fn to_canonical_string_with<S: Serialize>(value: &S, style: FloatStyle) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, 0, style, &mut out);
    out.push('\n');
    Ok(out)
}

/// Formats a float at six decimals, without a negative zero.
pub fn format_float(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(v: &Value, level: usize, style: FloatStyle, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap_or(0.0);
                match style {
                    FloatStyle::Fixed6 => out.push_str(&format_float(x)),
                    FloatStyle::RoundTrip if x == 0.0 => out.push_str("0.0"),
                    FloatStyle::RoundTrip => write!(out, "{n}").expect("write to string"),
                }
            } else {
                write!(out, "{n}").expect("write to string");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // Arrays of scalars stay on one line.
            if items.iter().all(|i| !i.is_array() && !i.is_object()) {
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    write_value(item, level, style, out);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                indent(level + 1, out);
                write_value(item, level + 1, style, out);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(level, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                indent(level + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_value(&map[*key], level + 1, style, out);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(level, out);
            out.push('}');
        }
    }
}
