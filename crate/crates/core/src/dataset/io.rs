//! CSV and JSON-sidecar formats for pose sequences and annotations.
//!
//! Keypoint CSV: `frame,<animal>.<bodypart>.<x|y>[,<animal>.<bodypart>.confidence]...`
//! Annotation CSV: `frame,label`. Sidecar: `<stem>.meta.json` next to the CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    AnnotationTrack, Arena, Keypoint, PoseFrame, PoseSequence, ANIMALS, BODY_PARTS, DEFAULT_FPS,
    N_ANIMALS, N_KEYPOINTS,
};
use crate::{Error, Result};

/// Maps canonical column names (`resident.nose.x`) to the names used in a file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ColumnSchema {
    #[serde(default)]
    pub rename: BTreeMap<String, String>,
}

impl ColumnSchema {
    fn column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.rename
            .get(canonical)
            .map(String::as_str)
            .unwrap_or(canonical)
    }
}

fn canonical(animal: usize, part: usize, field: &str) -> String {
    format!("{}.{}.{}", ANIMALS[animal], BODY_PARTS[part], field)
}

fn parse_value(raw: &str) -> std::result::Result<f64, String> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| format!("cannot parse {raw:?} as a number"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads a keypoint CSV. Missing or NaN coordinates are carried forward from
/// the last valid value of the same track; leading gaps are back-filled from
/// the first valid value. fps defaults to 30 (see [`load_sequence`] for the
/// sidecar-aware loader).
pub fn load_pose_csv(path: &Path, schema: &ColumnSchema) -> Result<PoseSequence> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    // Count keypoints actually present so layout errors report what was found.
    let parts_found: BTreeSet<(String, String)> = headers
        .iter()
        .filter_map(|h| {
            let mut it = h.split('.');
            match (it.next(), it.next(), it.next(), it.next()) {
                (Some(a), Some(p), Some("x" | "y"), None) => Some((a.to_string(), p.to_string())),
                _ => None,
            }
        })
        .collect();

    let mut columns = [[[0usize; 2]; N_KEYPOINTS]; N_ANIMALS];
    let mut conf_columns = [[None; N_KEYPOINTS]; N_ANIMALS];
    let mut missing = Vec::new();
    for a in 0..N_ANIMALS {
        for p in 0..N_KEYPOINTS {
            for (c, field) in ["x", "y"].iter().enumerate() {
                let name = canonical(a, p, field);
                match index.get(schema.column(&name)) {
                    Some(&i) => columns[a][p][c] = i,
                    None => missing.push(name),
                }
            }
            let conf = canonical(a, p, "confidence");
            conf_columns[a][p] = index.get(schema.column(&conf)).copied();
        }
    }
    if !missing.is_empty()
        || (schema.rename.is_empty() && parts_found.len() != N_ANIMALS * N_KEYPOINTS)
    {
        return Err(Error::Schema(format!(
            "{}: expected {} animals x {} keypoints with x/y columns, found {} keypoint tracks{}",
            path.display(),
            N_ANIMALS,
            N_KEYPOINTS,
            parts_found.len(),
            if missing.is_empty() {
                String::new()
            } else {
                format!("; missing {}", missing.join(", "))
            }
        )));
    }

    let mut frames = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |i: usize| -> Result<f64> {
            parse_value(record.get(i).unwrap_or("")).map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {}: {msg}", headers.get(i).unwrap_or("?")),
            })
        };
        let mut frame = PoseFrame::default();
        for a in 0..N_ANIMALS {
            for p in 0..N_KEYPOINTS {
                let x = get(columns[a][p][0])?;
                let y = get(columns[a][p][1])?;
                let confidence = match conf_columns[a][p] {
                    Some(i) => Some(get(i)?).filter(|c| c.is_finite()),
                    None => None,
                };
                frame.animals[a][p] = Keypoint { x, y, confidence };
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::Data(format!("{}: no frames", path.display())));
    }

    let filled = fill_missing(&mut frames).map_err(|track| {
        Error::Data(format!(
            "{}: keypoint track {track} has no valid value",
            path.display()
        ))
    })?;

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut seq = PoseSequence::new(id, DEFAULT_FPS, frames);
    seq.filled_values = filled;
    Ok(seq)
}

/// Carry-forward / back-fill per coordinate track. Returns the number of values
/// filled, or the canonical name of a track with no valid value.
fn fill_missing(frames: &mut [PoseFrame]) -> std::result::Result<usize, String> {
    let mut filled = 0;
    for a in 0..N_ANIMALS {
        for p in 0..N_KEYPOINTS {
            for c in 0..2 {
                let get = |f: &PoseFrame| {
                    if c == 0 {
                        f.animals[a][p].x
                    } else {
                        f.animals[a][p].y
                    }
                };
                let first = frames
                    .iter()
                    .map(get)
                    .find(|v| v.is_finite())
                    .ok_or_else(|| canonical(a, p, if c == 0 { "x" } else { "y" }))?;
                let mut last = first;
                for f in frames.iter_mut() {
                    let kp = &mut f.animals[a][p];
                    let v = if c == 0 { &mut kp.x } else { &mut kp.y };
                    if v.is_finite() {
                        last = *v;
                    } else {
                        *v = last;
                        filled += 1;
                    }
                }
            }
        }
    }
    Ok(filled)
}

pub fn write_pose_csv(path: &Path, seq: &PoseSequence) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["frame".to_string()];
    for a in 0..N_ANIMALS {
        for p in 0..N_KEYPOINTS {
            header.push(canonical(a, p, "x"));
            header.push(canonical(a, p, "y"));
        }
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, frame) in seq.frames.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(t.to_string());
        for kp in frame.animals.iter().flatten() {
            row.push(kp.x.to_string());
            row.push(kp.y.to_string());
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sequence metadata sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub id: String,
    pub fps: f64,
    #[serde(default)]
    pub arena: Option<Arena>,
    #[serde(default)]
    pub px_per_cm: Option<f64>,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub filled_values: usize,
}

impl SequenceMeta {
    pub fn of(seq: &PoseSequence) -> Self {
        SequenceMeta {
            id: seq.id.clone(),
            fps: seq.fps,
            arena: seq.arena,
            px_per_cm: seq.px_per_cm,
            group: seq.group.clone(),
            filled_values: seq.filled_values,
        }
    }
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().unwrap_or_default().to_string_lossy();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_meta(path: &Path) -> Result<SequenceMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_meta(path: &Path, meta: &SequenceMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a keypoint CSV and applies its `.meta.json` sidecar when present.
pub fn load_sequence(path: &Path, schema: &ColumnSchema) -> Result<PoseSequence> {
    let mut seq = load_pose_csv(path, schema)?;
    let meta = meta_path(path);
    if meta.exists() {
        let m = read_meta(&meta)?;
        seq.id = m.id;
        seq.fps = m.fps;
        seq.arena = m.arena;
        seq.px_per_cm = m.px_per_cm;
        seq.group = m.group;
    }
    seq.validate()?;
    Ok(seq)
}

/// Reads the per-frame label strings of an annotation CSV (`frame,label`).
pub fn read_annotation_labels(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let frame: usize =
            record
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "bad frame index".into(),
                })?;
        if frame != labels.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected frame {}, found {frame}", labels.len()),
            });
        }
        let label = record.get(1).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: "missing label".into(),
        })?;
        labels.push(label.to_string());
    }
    Ok(labels)
}

/// Loads an annotation CSV against a shared name table so ids agree across
/// files. Unknown names are an error.
pub fn load_annotation_csv(
    path: &Path,
    names: &[String],
    background: usize,
) -> Result<AnnotationTrack> {
    let lookup: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let labels = read_annotation_labels(path)?
        .iter()
        .enumerate()
        .map(|(t, l)| {
            lookup.get(l.as_str()).copied().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: t + 2,
                msg: format!("unknown label {l:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AnnotationTrack::new(labels, names.to_vec(), background)
}

pub fn write_annotation_csv(path: &Path, track: &AnnotationTrack) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["frame", "label"])
        .map_err(|e| csv_err(path, e))?;
    for (t, &l) in track.labels.iter().enumerate() {
        w.write_record([t.to_string(), track.names[l].clone()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
