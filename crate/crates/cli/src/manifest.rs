//! Sources manifest: names each source with its initial partitioning and
//! either a relation file or a bare shape.
//!
//! ```json
//! {"sources": [
//!   {"name": "X", "partition": "none", "file": "X.rel"},
//!   {"name": "Y", "partition": {"dims": [1]}, "frontier": [4, 4], "bound": [16, 16]}
//! ]}
//! ```
//!
//! Relative file paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tra::format::{read_relation, write_relation};
use tra::ia::PartitionSpec;
use tra::tra::Catalog;
use tra::{ArrayType, Error, Result};

fn dims(v: &Value, field: &str) -> Result<Vec<u64>> {
    v.get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format(format!("source entry lacks `{field}`: {v}")))?
        .iter()
        .map(|x| x.as_u64().ok_or_else(|| Error::Format(format!("`{field}` entries must be non-negative integers"))))
        .collect()
}

pub fn load(path: &Path) -> Result<Catalog> {
    let text = fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = doc
        .get("sources")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format("manifest needs a `sources` array".into()))?;
    let mut catalog = Catalog::new();
    for e in entries {
        let name = e.get("name").and_then(Value::as_str).ok_or_else(|| Error::Format(format!("source without name: {e}")))?;
        let partition = match e.get("partition") {
            Some(p) => PartitionSpec::from_json(p)?,
            None => PartitionSpec::None,
        };
        match e.get("file").and_then(Value::as_str) {
            Some(file) => {
                let bytes = fs::read(base.join(file))?;
                catalog.add_relation(name, read_relation(&bytes)?, partition)?;
            }
            None => {
                let bound = dims(e, "bound")?.into_iter().map(|b| b as usize).collect();
                catalog.add_shape(name, ArrayType::new(bound)?, dims(e, "frontier")?, partition)?;
            }
        }
    }
    Ok(catalog)
}

/// Writes each source's data as `<name>.rel` next to `manifest.json` in `dir`;
/// shape-only sources are recorded by shape.
pub fn save(catalog: &Catalog, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for name in catalog.names() {
        let info = catalog.get(name)?;
        let mut e = json!({"name": name, "partition": info.partition.to_json()});
        match &info.data {
            Some(rel) => {
                let file = format!("{name}.rel");
                fs::write(dir.join(&file), write_relation(rel))?;
                e["file"] = json!(file);
            }
            None => {
                e["frontier"] = json!(info.frontier);
                e["bound"] = json!(info.array_type.bound());
            }
        }
        entries.push(e);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&json!({ "sources": entries })).expect("json values serialize"))?;
    Ok(path)
}

/// True when every source array holds only integer values, so results can be
/// compared bit for bit.
pub fn integer_valued(catalog: &Catalog) -> bool {
    catalog.names().all(|n| match catalog.relation(n) {
        Ok(rel) => rel.tuples().iter().all(|(_, a)| a.values().iter().all(|v| v.fract() == 0.0)),
        Err(_) => false,
    })
}
