//! Machine-readable run reports with a determinism hash over the results.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub workers: usize,
}

impl Provenance {
    pub fn new(seed: Option<u64>, workers: usize) -> Self {
        Provenance {
            tool: "ddm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            workers,
        }
    }
}

/// Command output. Only `results` enters the hash, so provenance fields
/// that vary between machines never change it.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub results: Value,
    pub provenance: Provenance,
    pub determinism_hash: String,
}

/// SHA-256 of the compact JSON encoding. Object keys are sorted by
/// `serde_json`'s default map, so equal values hash equally.
pub fn determinism_hash(results: &Value) -> String {
    let bytes = serde_json::to_vec(results).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl Report {
    pub fn new(command: &str, config: Value, results: Value, provenance: Provenance) -> Self {
        let determinism_hash = determinism_hash(&results);
        Report {
            command: command.to_string(),
            config,
            results,
            provenance,
            determinism_hash,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// CSV of a tabular result: `results.rows` as an array of flat objects.
    pub fn to_csv(&self) -> Result<String> {
        let rows = self
            .results
            .get("rows")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Unsupported(format!("`{}` has no tabular results; use JSON", self.command)))?;
        let mut header: Vec<String> = Vec::new();
        for row in rows {
            let obj = row
                .as_object()
                .ok_or_else(|| Error::Unsupported("rows must be objects".into()))?;
            for k in obj.keys() {
                if !header.contains(k) {
                    header.push(k.clone());
                }
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = header.iter().map(|k| csv_cell(row.get(k))).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

fn csv_cell(v: Option<&Value>) -> String {
    let text = match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    };
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text
    }
}
