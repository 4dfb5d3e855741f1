//! Deterministic artifact writing: JSON with sorted keys and fixed float
//! formatting, CSV with fixed column order, and the run manifest.
//!
//! Floats are printed with 17 significant digits in scientific notation so
//! every value round-trips losslessly and reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

/// 17-significant-digit scientific form used in every artifact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// FNV-1a 64-bit checksum, stable across platforms.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializes a JSON value with sorted object keys, two-space indentation and
/// the fixed float format.
pub fn to_json_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, depth: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_f64(n.as_f64().expect("finite float")));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                indent(depth + 1, out);
                write_value(item, depth + 1, out);
            }
            out.push('\n');
            indent(depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            // Keys sorted for reproducible bytes.
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (k, v)) in sorted.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                indent(depth + 1, out);
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_value(v, depth + 1, out);
            }
            out.push('\n');
            indent(depth, out);
            out.push('}');
        }
    }
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

/// A float wrapped for JSON assembly (only finite values are representable).
pub fn num(x: f64) -> Value {
    assert!(x.is_finite(), "artifacts only carry finite numbers, got {x}");
    Value::Number(serde_json::Number::from_f64(x).expect("finite"))
}

/// Collects written files so the manifest can inventory them.
pub struct Emitter {
    dir: PathBuf,
    files: Vec<(String, usize, u64)>,
}

impl Emitter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Emitter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push((name.to_string(), contents.len(), fnv64(contents.as_bytes())));
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.write(name, &to_json_string(value))
    }

    /// Writes the manifest last: tool version, config hash, stage timings and
    /// the checksum inventory of everything written before it.
    pub fn write_manifest(
        mut self,
        config_hash: u64,
        stages: &[(String, f64)],
    ) -> Result<Vec<String>> {
        let mut files: Vec<Value> = Vec::new();
        let mut sorted = self.files.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, bytes, hash) in &sorted {
            let mut m = serde_json::Map::new();
            m.insert("name".into(), Value::String(name.clone()));
            m.insert("bytes".into(), Value::Number((*bytes as u64).into()));
            m.insert("fnv64".into(), Value::String(format!("{hash:016x}")));
            files.push(Value::Object(m));
        }
        let mut stage_map = serde_json::Map::new();
        for (name, secs) in stages {
            stage_map.insert(name.clone(), num(*secs));
        }
        let mut root = serde_json::Map::new();
        root.insert("config_hash".into(), Value::String(format!("{config_hash:016x}")));
        root.insert("files".into(), Value::Array(files));
        root.insert("stages".into(), Value::Object(stage_map));
        root.insert(
            "tool_version".into(),
            Value::String(env!("CARGO_PKG_VERSION").to_string()),
        );
        self.write("manifest.json", &to_json_string(&Value::Object(root)))?;
        Ok(self.files.iter().map(|f| f.0.clone()).collect())
    }
}

/// Builds a CSV line from preformatted cells.
pub fn csv_line(cells: &[String]) -> String {
    let mut s = cells.join(",");
    s.push('\n');
    s
}
