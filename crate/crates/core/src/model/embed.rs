use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EncoderParams;
use crate::dataset::{window_at, PoseSequence, Window, WindowingConfig};
use crate::{Error, Result};

const EMBED_BATCH: usize = 32;

/// Per-frame backbone embeddings of one sequence (`frames x D`).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSeries {
    pub seq_id: String,
    pub config_hash: String,
    pub embeddings: Array2<f64>,
}

impl EmbeddingSeries {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

/// Embeds every frame as the target row of its own window. Windows are
/// evaluated in fixed-size batches in parallel; each row depends only on its
/// own window.
pub fn embed_sequence(
    params: &EncoderParams,
    seq: &PoseSequence,
    windowing: &WindowingConfig,
) -> Result<EmbeddingSeries> {
    windowing.validate()?;
    if windowing.window_size != params.config.window_size {
        return Err(Error::Config(format!(
            "window_size {} does not match model window {}",
            windowing.window_size, params.config.window_size
        )));
    }
    let n = windowing.window_size;
    let d = params.config.embed_dim;
    let starts: Vec<usize> = (0..seq.len()).step_by(EMBED_BATCH).collect();
    let chunks: Vec<Result<Vec<f64>>> = starts
        .par_iter()
        .map(|&t0| {
            let t1 = (t0 + EMBED_BATCH).min(seq.len());
            let windows: Vec<Window> = (t0..t1).map(|t| window_at(seq, windowing, t)).collect();
            let refs: Vec<&Window> = windows.iter().collect();
            let out = params.features(&refs)?;
            let mut rows = Vec::with_capacity(windows.len() * d);
            for (i, w) in windows.iter().enumerate() {
                rows.extend(out.row(i * n + w.target_index).iter());
            }
            Ok(rows)
        })
        .collect();
    let mut data = Vec::with_capacity(seq.len() * d);
    for c in chunks {
        data.extend(c?);
    }
    Ok(EmbeddingSeries {
        seq_id: seq.id.clone(),
        config_hash: params.config.hash(),
        embeddings: Array2::from_shape_vec((seq.len(), d), data).expect("shape"),
    })
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    seq: String,
    frame: usize,
    e: Vec<f64>,
}

/// One JSON record per frame: `{"seq": .., "frame": .., "e": [..]}`.
pub fn write_embeddings_ndjson(path: &Path, series: &[EmbeddingSeries]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in series {
        for (frame, row) in s.embeddings.rows().into_iter().enumerate() {
            let rec = EmbeddingRecord {
                seq: s.seq_id.clone(),
                frame,
                e: row.to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads series back, in order of first appearance. The config hash is not
/// part of the record format and is left empty.
pub fn read_embeddings_ndjson(path: &Path) -> Result<Vec<EmbeddingSeries>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let entry = rows.entry(rec.seq.clone()).or_insert_with(|| {
            order.push(rec.seq.clone());
            Vec::new()
        });
        if rec.frame != entry.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("frame {} out of order", rec.frame),
            });
        }
        entry.push(rec.e);
    }
    order
        .into_iter()
        .map(|id| {
            let r = rows.remove(&id).unwrap_or_default();
            let d = r.first().map(Vec::len).unwrap_or(0);
            if r.iter().any(|v| v.len() != d) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    msg: format!("ragged embeddings in {id}"),
                });
            }
            let t = r.len();
            Ok(EmbeddingSeries {
                seq_id: id,
                config_hash: String::new(),
                embeddings: Array2::from_shape_vec((t, d), r.concat()).expect("shape"),
            })
        })
        .collect()
}
