//! Deterministic artifact emission.
//!
//! NDJSON records go through serde_json: floats print as the shortest
//! decimal that round-trips (never more than 17 significant digits) and maps
//! iterate in sorted key order, so rerunning a config byte-reproduces the
//! stream. Every record carries the schema version under "schema".

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use kmswkg_core::simulator::{FieldState, Geometry};
use kmswkg_core::SCHEMA_VERSION;

/// An NDJSON stream being assembled in memory.
#[derive(Default)]
pub struct Stream {
    text: String,
}

impl Stream {
    pub fn new() -> Self {
        Stream::default()
    }

    /// Appends one record. `fields` must be a JSON object; the record kind
    /// and schema version are filled in here.
    pub fn push(&mut self, record: &str, fields: Value) {
        let mut obj = match fields {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        obj.insert("record".into(), Value::String(record.into()));
        obj.insert("schema".into(), Value::String(SCHEMA_VERSION.into()));
        self.text.push_str(&serde_json::to_string(&Value::Object(obj)).expect("record"));
        self.text.push('\n');
    }

    /// Appends pre-serialized NDJSON lines (already schema-tagged).
    pub fn push_block(&mut self, block: &str) {
        self.text.push_str(block);
        if !block.ends_with('\n') && !block.is_empty() {
            self.text.push('\n');
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text)
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

/// Writes one snapshot as CSV next to a small JSON sidecar describing it.
/// Returns the pair of file names.
pub fn write_snapshot(
    dir: &Path,
    state: &FieldState,
    index: usize,
) -> Result<(String, String)> {
    let csv_name = format!("snapshot_{index:04}.csv");
    let meta_name = format!("snapshot_{index:04}.json");
    let n_comp = state.n_components();

    let mut csv = String::new();
    match state.geom {
        Geometry::Radial { n, h } => {
            csv.push_str("r");
            for j in 0..n_comp {
                csv.push_str(&format!(",u{0},ut{0}", j + 1));
            }
            csv.push('\n');
            for i in 0..n {
                csv.push_str(&format!("{}", i as f64 * h));
                for j in 0..n_comp {
                    csv.push_str(&format!(",{},{}", state.u[j][i], state.ut[j][i]));
                }
                csv.push('\n');
            }
        }
        Geometry::Planar { n, h, half } => {
            csv.push_str("x1,x2");
            for j in 0..n_comp {
                csv.push_str(&format!(",u{0},ut{0}", j + 1));
            }
            csv.push('\n');
            for iy in 0..n {
                for ix in 0..n {
                    let i = iy * n + ix;
                    let x1 = -half + ix as f64 * h;
                    let x2 = -half + iy as f64 * h;
                    csv.push_str(&format!("{x1},{x2}"));
                    for j in 0..n_comp {
                        csv.push_str(&format!(",{},{}", state.u[j][i], state.ut[j][i]));
                    }
                    csv.push('\n');
                }
            }
        }
    }
    std::fs::write(dir.join(&csv_name), csv)
        .with_context(|| format!("cannot write {csv_name}"))?;

    let meta = json!({
        "schema": SCHEMA_VERSION,
        "t": state.t,
        "n_components": n_comp,
        "file": csv_name,
    });
    std::fs::write(dir.join(&meta_name), format!("{meta}\n"))
        .with_context(|| format!("cannot write {meta_name}"))?;
    Ok((csv_name, meta_name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn records_carry_kind_and_schema_with_sorted_keys() {
        let mut s = Stream::new();
        s.push("zeta", json!({"b": 1.0, "a": 2}));
        assert_eq!(s.text, "{\"a\":2,\"b\":1.0,\"record\":\"zeta\",\"schema\":\"1\"}\n");
    }

    #[test]
    fn float_formatting_round_trips() {
        let mut s = Stream::new();
        let x = 0.1 + 0.2;
        s.push("v", json!({ "x": x }));
        let back: Value = serde_json::from_str(s.text.lines().next().unwrap()).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), x);
    }
}
