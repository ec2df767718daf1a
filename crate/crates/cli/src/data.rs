//! Dataset directories: one keypoint CSV (plus `.meta.json` sidecar) and an
//! optional annotation CSV per sequence, indexed by `dataset.json`.

use std::path::{Path, PathBuf};

use dyadic::dataset::{
    load_annotation_csv, load_sequence, meta_path, normalize_coords, read_annotation_labels,
    write_annotation_csv, write_meta, write_pose_csv, AnnotationTrack, ColumnSchema, PoseSequence,
    SequenceMeta, DEFAULT_BACKGROUND,
};
use serde::{Deserialize, Serialize};

use crate::manifest::Tracker;
use crate::CliError;

pub const INDEX_FILE: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub pose: String,
    #[serde(default)]
    pub labels: Option<String>,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    /// Shared label name table; present when any sequence is annotated.
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub background: Option<String>,
    pub sequences: Vec<SequenceEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub index: DatasetIndex,
    /// Raw coordinates as stored on disk.
    pub sequences: Vec<PoseSequence>,
    /// Annotation track per sequence, where one exists.
    pub tracks: Vec<Option<AnnotationTrack>>,
}

impl Dataset {
    pub fn background(&self) -> usize {
        let name = self
            .index
            .background
            .as_deref()
            .unwrap_or(DEFAULT_BACKGROUND);
        self.index
            .classes
            .iter()
            .position(|c| c == name)
            .unwrap_or(0)
    }

    /// Coordinates mapped to the unit square, as the model expects.
    pub fn normalized(&self) -> Result<Vec<PoseSequence>, CliError> {
        Ok(self
            .sequences
            .iter()
            .map(normalize_coords)
            .collect::<dyadic::Result<Vec<_>>>()?)
    }

    pub fn fps(&self) -> f64 {
        self.sequences
            .first()
            .map_or(dyadic::dataset::DEFAULT_FPS, |s| s.fps)
    }

    pub fn is_annotated(&self) -> bool {
        self.tracks.iter().any(Option::is_some)
    }
}

/// Loads a dataset directory and registers every file read with `tracker`.
pub fn load_dataset(dir: &Path, tracker: &mut Tracker) -> Result<Dataset, CliError> {
    let index_path = dir.join(INDEX_FILE);
    if !index_path.exists() {
        return Err(CliError::Validation(format!(
            "missing dataset index {}",
            index_path.display()
        )));
    }
    let text = std::fs::read_to_string(&index_path).map_err(|e| CliError::io(&index_path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", index_path.display())))?;
    tracker.input("data", &index_path);
    if index.sequences.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no sequences",
            index_path.display()
        )));
    }
    let schema = ColumnSchema::default();
    let mut sequences = Vec::new();
    let mut tracks = Vec::new();
    let bg_name = index.background.as_deref().unwrap_or(DEFAULT_BACKGROUND);
    let background = index.classes.iter().position(|c| c == bg_name).unwrap_or(0);
    for entry in &index.sequences {
        let pose = dir.join(&entry.pose);
        require(&pose)?;
        let mut seq = load_sequence(&pose, &schema)?;
        tracker.input("data", &pose);
        let meta = meta_path(&pose);
        if meta.exists() {
            tracker.input("data", &meta);
        }
        seq.id = entry.id.clone();
        if entry.group.is_some() {
            seq.group = entry.group.clone();
        }
        let track = match &entry.labels {
            Some(l) => {
                let p = dir.join(l);
                require(&p)?;
                if index.classes.is_empty() {
                    return Err(CliError::Validation(format!(
                        "{}: labels given but no classes listed",
                        index_path.display()
                    )));
                }
                let t = load_annotation_csv(&p, &index.classes, background)?;
                if t.len() != seq.len() {
                    return Err(CliError::Validation(format!(
                        "{}: {} labels for {} frames",
                        p.display(),
                        t.len(),
                        seq.len()
                    )));
                }
                tracker.input("data", &p);
                Some(t)
            }
            None => None,
        };
        sequences.push(seq);
        tracks.push(track);
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        index,
        sequences,
        tracks,
    })
}

/// Writes sequences (and tracks, which must share one name table) as a
/// dataset directory.
pub fn write_dataset(
    dir: &Path,
    sequences: &[PoseSequence],
    tracks: &[Option<AnnotationTrack>],
    tracker: &mut Tracker,
) -> Result<DatasetIndex, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut index = DatasetIndex::default();
    if let Some(t) = tracks.iter().flatten().next() {
        index.classes = t.names.clone();
        index.background = Some(t.names[t.background].clone());
    }
    for (i, seq) in sequences.iter().enumerate() {
        let pose = format!("{}.csv", seq.id);
        let path = tracker.output(dir.join(&pose));
        write_pose_csv(&path, seq)?;
        let meta = tracker.output(meta_path(&path));
        write_meta(&meta, &SequenceMeta::of(seq))?;
        let labels = match tracks.get(i).and_then(Option::as_ref) {
            Some(t) => {
                if t.names != index.classes {
                    return Err(CliError::Validation(format!(
                        "sequence {}: label names differ from the dataset's",
                        seq.id
                    )));
                }
                let name = format!("{}.labels.csv", seq.id);
                let p = tracker.output(dir.join(&name));
                write_annotation_csv(&p, t)?;
                Some(name)
            }
            None => None,
        };
        index.sequences.push(SequenceEntry {
            id: seq.id.clone(),
            pose,
            labels,
            group: seq.group.clone(),
        });
    }
    let path = tracker.output(dir.join(INDEX_FILE));
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(index)
}

/// Reads raw keypoint CSVs (and `<stem>.labels.csv` annotations next to them
/// or in `labels_dir`) into sequences and tracks on a shared name table.
pub fn ingest_dir(
    poses_dir: &Path,
    labels_dir: Option<&Path>,
    schema: &ColumnSchema,
    tracker: &mut Tracker,
) -> Result<(Vec<PoseSequence>, Vec<Option<AnnotationTrack>>), CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(poses_dir)
        .map_err(|e| CliError::io(poses_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            name.ends_with(".csv") && !name.ends_with(".labels.csv")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "no keypoint CSV files in {}",
            poses_dir.display()
        )));
    }
    let mut sequences = Vec::new();
    let mut raw_labels = Vec::new();
    for f in &files {
        let seq = load_sequence(f, schema)?;
        tracker.input("poses", f);
        let meta = meta_path(f);
        if meta.exists() {
            tracker.input("poses", &meta);
        }
        let stem = f
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let candidates = [
            Some(poses_dir.join(format!("{stem}.labels.csv"))),
            labels_dir.map(|d| d.join(format!("{stem}.labels.csv"))),
            labels_dir.map(|d| d.join(format!("{stem}.csv"))),
        ];
        let labels_path = candidates.into_iter().flatten().find(|p| p.exists());
        let labels = match labels_path {
            Some(p) => {
                let l = read_annotation_labels(&p)?;
                if l.len() != seq.len() {
                    return Err(CliError::Validation(format!(
                        "{}: {} labels for {} frames",
                        p.display(),
                        l.len(),
                        seq.len()
                    )));
                }
                tracker.input("labels", &p);
                Some(l)
            }
            None => None,
        };
        sequences.push(seq);
        raw_labels.push(labels);
    }
    let mut names: Vec<String> = raw_labels.iter().flatten().flatten().cloned().collect();
    if names.is_empty() {
        return Ok((sequences, raw_labels.iter().map(|_| None).collect()));
    }
    names.push(DEFAULT_BACKGROUND.to_string());
    names.sort();
    names.dedup();
    let background = names
        .iter()
        .position(|n| n == DEFAULT_BACKGROUND)
        .expect("background present");
    let tracks = raw_labels
        .into_iter()
        .map(|l| {
            l.map(|l| {
                let ids = l
                    .iter()
                    .map(|s| names.iter().position(|n| n == s).expect("name listed"))
                    .collect();
                AnnotationTrack::new(ids, names.clone(), background)
            })
            .transpose()
        })
        .collect::<dyadic::Result<Vec<_>>>()?;
    Ok((sequences, tracks))
}

/// Missing upstream artifacts are user errors that name the expected file.
pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "missing expected file {}",
            path.display()
        )))
    }
}
