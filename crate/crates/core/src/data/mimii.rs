use std::fs;
use std::path::{Path, PathBuf};

use super::{ClipRecord, Condition};
use crate::dsp::read_wav;
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Reads `<root>/<machine_type>/id_XX/{normal,abnormal}/*.wav`. Ids are
/// numbered 0.. in sorted directory order, so `id_00, id_02, id_04, id_06`
/// become 0..=3.
pub fn mimii_scan(root: impl AsRef<Path>, machine_type: &str) -> Result<Vec<ClipRecord>> {
    let base = root.as_ref().join(machine_type);
    let expected = format!(
        "expected {}/id_XX/normal/*.wav (and optionally abnormal/*.wav)",
        base.display()
    );
    if !base.is_dir() {
        return Err(Error::Dataset(format!(
            "{} is not a directory; {expected}",
            base.display()
        )));
    }
    let id_dirs: Vec<PathBuf> = sorted_entries(&base)?
        .into_iter()
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("id_"))
        })
        .collect();
    if id_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "no id_XX directories found; {expected}"
        )));
    }
    let mut out = Vec::new();
    for (index, id_dir) in id_dirs.iter().enumerate() {
        for (sub, condition) in [
            ("normal", Condition::Normal),
            ("abnormal", Condition::Anomaly),
        ] {
            let dir = id_dir.join(sub);
            if !dir.is_dir() {
                if condition == Condition::Normal {
                    return Err(Error::Dataset(format!(
                        "missing {}; {expected}",
                        dir.display()
                    )));
                }
                continue;
            }
            let wavs: Vec<PathBuf> = sorted_entries(&dir)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            if wavs.is_empty() && condition == Condition::Normal {
                return Err(Error::Dataset(format!(
                    "{} has no .wav files; {expected}",
                    dir.display()
                )));
            }
            for path in wavs {
                out.push(ClipRecord {
                    clip: read_wav(&path)?,
                    machine_type: machine_type.to_string(),
                    machine_id: index,
                    condition,
                    anomaly_kind: None,
                    source: path.display().to_string(),
                });
            }
        }
    }
    Ok(out)
}
