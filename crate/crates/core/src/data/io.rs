//! `meta.json` + `values.f64` directory format.
//!
//! `values.f64` is the raw `[T][N][C]` cube as little-endian IEEE-754
//! doubles with no header; `meta.json` carries shape and labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const VALUES_FILE: &str = "values.f64";
pub const DATASET_FORMAT: &str = "eif-dataset-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    endianness: String,
    /// [T, N, C]
    shape: [usize; 3],
    entity_ids: Vec<String>,
    channel_names: Vec<String>,
    start_time: i64,
    step_seconds: i64,
}

pub fn save_dataset(d: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = Meta {
        format: DATASET_FORMAT.into(),
        endianness: "little".into(),
        shape: [d.steps(), d.num_entities(), d.channels()],
        entity_ids: d.entity_ids().to_vec(),
        channel_names: d.channel_names().to_vec(),
        start_time: d.start_time(),
        step_seconds: d.step_seconds(),
    };
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
    let mut blob = Vec::with_capacity(d.values().len() * 8);
    for v in d.values() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(VALUES_FILE), blob)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let corrupt = |reason: String| Error::Corruption {
        path: dir.to_path_buf(),
        reason,
    };
    let meta: Meta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)
        .map_err(|e| corrupt(format!("unreadable {META_FILE}: {e}")))?;
    if meta.format != DATASET_FORMAT {
        return Err(corrupt(format!("unknown format tag `{}`", meta.format)));
    }
    if meta.endianness != "little" {
        return Err(corrupt(format!(
            "unsupported endianness `{}`",
            meta.endianness
        )));
    }
    let [t, n, c] = meta.shape;
    if meta.entity_ids.len() != n {
        return Err(corrupt(format!(
            "shape says N = {n} but {} entity ids are listed",
            meta.entity_ids.len()
        )));
    }
    if meta.channel_names.len() != c {
        return Err(corrupt(format!(
            "shape says C = {c} but {} channel names are listed",
            meta.channel_names.len()
        )));
    }
    let blob = fs::read(dir.join(VALUES_FILE))?;
    let expect = t * n * c * 8;
    if blob.len() != expect {
        return Err(corrupt(format!(
            "{VALUES_FILE} has {} bytes, shape needs {expect}",
            blob.len()
        )));
    }
    let values = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Dataset::new(
        values,
        t,
        meta.entity_ids,
        meta.channel_names,
        meta.start_time,
        meta.step_seconds,
    )
    .map_err(|e| corrupt(e.to_string()))
}
