use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{clip_embedding, ScoreRecord};
use crate::data::{ClipRecord, FeatureExtractor};
use crate::error::{Error, Result};
use crate::model::Model;

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(BufWriter::new(file)))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v:?}")
}

/// `source,machine_type,machine_id,condition,score,seg_0..seg_k`; rows with
/// fewer segments leave the trailing columns empty.
pub fn write_scores(path: impl AsRef<Path>, scores: &[ScoreRecord]) -> Result<()> {
    let path = path.as_ref();
    let width = scores
        .iter()
        .map(|s| s.segment_scores.len())
        .max()
        .unwrap_or(0);
    let mut w = create(path)?;
    let mut header: Vec<String> = ["source", "machine_type", "machine_id", "condition", "score"]
        .map(String::from)
        .to_vec();
    header.extend((0..width).map(|i| format!("seg_{i}")));
    w.write_record(&header)?;
    for s in scores {
        let mut row = vec![
            s.source.clone(),
            s.machine_type.clone(),
            s.machine_id.to_string(),
            s.condition.to_string(),
            fmt_f64(s.score),
        ];
        row.extend(s.segment_scores.iter().map(|&v| fmt_f64(v)));
        row.resize(5 + width, String::new());
        w.write_record(&row)?;
    }
    finish(path, w)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        msg: format!("row {line}: {msg}"),
    };
    let header = reader.headers()?.clone();
    let expected = ["source", "machine_type", "machine_id", "condition", "score"];
    if header.len() < 5 || header.iter().take(5).ne(expected) {
        return Err(parse_err(
            0,
            format!("header must start with {}", expected.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let field = |k: usize| {
            rec.get(k)
                .ok_or_else(|| parse_err(line, format!("missing column {k}")))
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(line, format!("{s:?}: {e}")))
        };
        let segment_scores = rec
            .iter()
            .skip(5)
            .filter(|s| !s.is_empty())
            .map(num)
            .collect::<Result<Vec<_>>>()?;
        out.push(ScoreRecord {
            source: field(0)?.to_string(),
            machine_type: field(1)?.to_string(),
            machine_id: field(2)?
                .parse()
                .map_err(|e| parse_err(line, format!("machine_id: {e}")))?,
            condition: field(3)?.parse()?,
            score: num(field(4)?)?,
            segment_scores,
        });
    }
    Ok(out)
}

/// One row per clip: metadata and the mean pooled Total-head embedding.
pub fn write_embeddings(
    path: impl AsRef<Path>,
    model: &Model,
    records: &[ClipRecord],
) -> Result<()> {
    let path = path.as_ref();
    let extractor = FeatureExtractor::new(model.config())?;
    let mut w = create(path)?;
    let mut header: Vec<String> = ["source", "machine_type", "machine_id", "condition"]
        .map(String::from)
        .to_vec();
    header.extend((0..model.config().num_classes).map(|i| format!("emb_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.source.clone(),
            r.machine_type.clone(),
            r.machine_id.to_string(),
            r.condition.to_string(),
        ];
        row.extend(
            clip_embedding(model, &extractor, r)?
                .into_iter()
                .map(fmt_f64),
        );
        w.write_record(&row)?;
    }
    finish(path, w)
}
