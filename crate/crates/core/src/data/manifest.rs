use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnomalyKind, ClipRecord, Condition};
use crate::dsp::{read_wav, write_wav};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    path: String,
    machine_type: String,
    machine_id: usize,
    condition: String,
    anomaly_kind: String,
}

/// Writes each clip as `<condition>_id<NN>_<index>.wav` under `dir` plus a
/// manifest listing them in record order.
pub fn write_dataset(dir: impl AsRef<Path>, records: &[ClipRecord]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| csv_io(&manifest, e))?;
    let mut counters = std::collections::BTreeMap::new();
    for r in records {
        let n = counters
            .entry((r.condition, r.machine_id))
            .or_insert(0usize);
        let name = format!("{}_id{:02}_{:04}.wav", r.condition, r.machine_id, n);
        *n += 1;
        write_wav(dir.join(&name), &r.clip)?;
        writer
            .serialize(Row {
                path: name,
                machine_type: r.machine_type.clone(),
                machine_id: r.machine_id,
                condition: r.condition.to_string(),
                anomaly_kind: r.anomaly_kind.map(|k| k.to_string()).unwrap_or_default(),
            })
            .map_err(|e| csv_io(&manifest, e))?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

/// Reads a manifest and the WAV files it lists (paths relative to the
/// manifest's directory).
pub fn load_manifest(manifest: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| csv_io(manifest, e))?;
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: manifest.into(),
            msg: format!("row {}: {e}", line + 1),
        })?;
        let condition: Condition = row.condition.parse()?;
        let anomaly_kind = if row.anomaly_kind.is_empty() {
            None
        } else {
            Some(row.anomaly_kind.parse::<AnomalyKind>()?)
        };
        let path = base.join(&row.path);
        out.push(ClipRecord {
            clip: read_wav(&path)?,
            machine_type: row.machine_type,
            machine_id: row.machine_id,
            condition,
            anomaly_kind,
            source: path.display().to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "{} lists no clips",
            manifest.display()
        )));
    }
    Ok(out)
}

/// Loads `dir/manifest.csv` if present, otherwise scans `dir` as a MIMII
/// tree for `machine_type`.
pub fn load_dataset(dir: impl AsRef<Path>, machine_type: Option<&str>) -> Result<Vec<ClipRecord>> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.is_file() {
        return load_manifest(manifest);
    }
    match machine_type {
        Some(t) => super::mimii_scan(dir, t),
        None => Err(Error::Dataset(format!(
            "{} has no {MANIFEST_FILE}; pass a machine type to read it as <root>/<machine_type>/id_XX/{{normal,abnormal}}/*.wav",
            dir.display()
        ))),
    }
}
