//! Record/replay cassettes: append-only JSON-lines files keyed by request
//! content hash.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    payload: serde_json::Value,
}

/// Load a cassette into a key -> payload map. Later entries win, so a
/// re-recorded request shadows the old response.
pub fn load(path: &Path) -> std::io::Result<BTreeMap<String, serde_json::Value>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = serde_json::from_str(line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("cassette line {}: {e}", i + 1),
            )
        })?;
        map.insert(entry.key, entry.payload);
    }
    Ok(map)
}

pub fn append(path: &Path, key: &str, payload: &serde_json::Value) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let line = serde_json::to_string(&Entry {
        key: key.to_string(),
        payload: payload.clone(),
    })
    .expect("entry serializes");
    writeln!(f, "{line}")
}
