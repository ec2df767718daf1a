//! One function per subcommand. Each creates its output directory, echoes
//! the normalized config, does its work and finishes with a manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dyadic::analysis::{
    extract_bouts, filter_events, peth_spikes, read_spikes_csv, write_peth_csv,
};
use dyadic::dataset::{synth_generate, AnnotationTrack, ColumnSchema, SyntheticSpec};
use dyadic::hmm::{read_states_csv, write_states_csv};
use dyadic::model::{
    embed_sequence, load_classifier, load_params, read_embeddings_ndjson, save_classifier,
    save_params, write_embeddings_ndjson, Classifier, EncoderParams, PretextHeads,
};
use dyadic::motifs::{
    prototype_labels, read_catalog, select_prototypes, sweep_hmms_with_fits, write_catalog,
    PrototypeSet, SweepConfig,
};
use dyadic::seeded_rng;
use dyadic::train::{
    eval_f1, eval_nmi, final_accuracy, finetune_classifier, grid_search, predict_sequence,
    pretrain, write_curves_csv, write_traces_csv, LabeledSequence, MetricsReport,
};
use log::{info, warn};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::data::{ingest_dir, load_dataset, require, write_dataset, Dataset};
use crate::manifest::Tracker;
use crate::{CliError, Command};

pub const MODEL_FILE: &str = "model.ckpt";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const EMBEDDINGS_FILE: &str = "embeddings.ndjson";
pub const CATALOG_BIN: &str = "catalog.bin";
pub const CATALOG_JSON: &str = "catalog.json";
pub const SEGMENT_FILE: &str = "segment.json";
pub const PROTOTYPES_FILE: &str = "prototypes.json";
pub const NORMALIZED_CONFIG: &str = "config.normalized.toml";

/// Output-side state shared by every command.
struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    tracker: Tracker,
}

impl<'a> Run<'a> {
    fn start(cfg: &'a PipelineConfig, out: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let mut tracker = Tracker::default();
        let path = tracker.output(out.join(NORMALIZED_CONFIG));
        std::fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(Run { cfg, out, tracker })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.tracker.output(self.out.join(name))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    fn finish(self, command: &str) -> Result<PathBuf, CliError> {
        self.tracker
            .finish(&self.out, command, &self.cfg.hash(), self.cfg.seed)?;
        Ok(self.out)
    }
}

fn out_dir(
    cfg: &PipelineConfig,
    flag: &Option<PathBuf>,
    command: &str,
) -> Result<PathBuf, CliError> {
    match (flag, &cfg.paths.output_dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(base)) => Ok(base.join(command)),
        (None, None) => Err(CliError::Validation(
            "paths.output_dir: not set and no --out given".into(),
        )),
    }
}

fn data_dir(cfg: &PipelineConfig, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.paths.data_dir.clone())
        .ok_or_else(|| CliError::Validation("paths.data_dir: not set and no --data given".into()))
}

/// Accepts either a file or a directory containing `default_name`.
fn artifact(path: &Path, default_name: &str) -> Result<PathBuf, CliError> {
    let p = if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    };
    require(&p)?;
    Ok(p)
}

pub fn execute(command: &Command, cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let name = command.name();
    match command {
        Command::Ingest {
            poses,
            labels,
            schema,
            out,
        } => ingest(
            cfg,
            poses,
            labels.as_deref(),
            schema.as_deref(),
            out_dir(cfg, out, name)?,
        ),
        Command::Synth {
            out,
            sequences,
            frames,
        } => synth(cfg, *sequences, *frames, out_dir(cfg, out, name)?),
        Command::Pretrain { data, init, out } => pretrain_cmd(
            cfg,
            &data_dir(cfg, data)?,
            init.as_deref(),
            out_dir(cfg, out, name)?,
        ),
        Command::Embed { data, model, out } => {
            embed(cfg, &data_dir(cfg, data)?, model, out_dir(cfg, out, name)?)
        }
        Command::Finetune {
            data,
            model,
            freeze,
            out,
        } => finetune(
            cfg,
            &data_dir(cfg, data)?,
            model.as_deref(),
            *freeze,
            out_dir(cfg, out, name)?,
        ),
        Command::Annotate { data, model, out } => {
            annotate(cfg, &data_dir(cfg, data)?, model, out_dir(cfg, out, name)?)
        }
        Command::Segment {
            embeddings,
            data,
            fps,
            out,
        } => segment(
            cfg,
            embeddings,
            data.as_deref(),
            *fps,
            out_dir(cfg, out, name)?,
        ),
        Command::Prototypes { segment, out } => prototypes(cfg, segment, out_dir(cfg, out, name)?),
        Command::Analyze {
            prototypes,
            data,
            out,
        } => crate::report::analyze(
            cfg,
            prototypes,
            &data_dir(cfg, data)?,
            out_dir(cfg, out, name)?,
        ),
        Command::Peth {
            labels,
            spikes,
            fps,
            out,
        } => peth(cfg, labels, spikes, *fps, out_dir(cfg, out, name)?),
        Command::Tune { data, out } => tune(cfg, &data_dir(cfg, data)?, out_dir(cfg, out, name)?),
    }
}

fn ingest(
    cfg: &PipelineConfig,
    poses: &Path,
    labels: Option<&Path>,
    schema: Option<&Path>,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let schema = match schema {
        Some(p) => {
            require(p)?;
            run.tracker.input("schema", p);
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str::<ColumnSchema>(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => ColumnSchema::default(),
    };
    let (sequences, tracks) = ingest_dir(poses, labels, &schema, &mut run.tracker)?;
    info!("ingested {} sequences", sequences.len());
    let dir = run.out.clone();
    write_dataset(&dir, &sequences, &tracks, &mut run.tracker)?;
    run.finish("ingest")
}

fn synth(
    cfg: &PipelineConfig,
    sequences: Option<usize>,
    frames: Option<usize>,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let n = sequences.unwrap_or(cfg.synth.sequences);
    let frames = frames.unwrap_or(cfg.synth.frames);
    if n == 0 || frames < 2 {
        return Err(CliError::Validation(
            "synth: need >= 1 sequence of >= 2 frames".into(),
        ));
    }
    let mut run = Run::start(cfg, out)?;
    let mut seqs = Vec::new();
    let mut tracks = Vec::new();
    for i in 0..n {
        let mut spec = SyntheticSpec::planted_three_state(
            format!("synth{i:03}"),
            frames,
            cfg.seed.wrapping_add(i as u64),
        );
        spec.fps = cfg.synth.fps;
        let (mut seq, track) = synth_generate(&spec)?;
        seq.group = Some(if i % 2 == 0 { "A" } else { "B" }.to_string());
        seqs.push(seq);
        tracks.push(Some(track));
    }
    let dir = run.out.clone();
    write_dataset(&dir, &seqs, &tracks, &mut run.tracker)?;
    run.finish("synth")
}

fn pretrain_cmd(
    cfg: &PipelineConfig,
    data: &Path,
    init: Option<&Path>,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let ds = load_dataset(data, &mut run.tracker)?;
    let seqs = ds.normalized()?;
    let enc_cfg = cfg.encoder();
    let mut rng = seeded_rng(cfg.seed, 0);
    let (encoder, heads) = match init {
        Some(p) => {
            let p = artifact(p, MODEL_FILE)?;
            run.tracker.input("init", &p);
            let (e, h) = load_params(&p, Some(&enc_cfg))?;
            let h = h.unwrap_or_else(|| PretextHeads::init(&enc_cfg, &mut rng));
            (e, h)
        }
        None => {
            let e = EncoderParams::init(&enc_cfg, &mut rng)?;
            let h = PretextHeads::init(&enc_cfg, &mut rng);
            (e, h)
        }
    };
    let train = cfg.pretrain.to_core(cfg.seed);
    let outcome = pretrain(encoder, heads, &seqs, &cfg.windowing(), &train, &cfg.ssl())?;
    save_params(
        &run.path(MODEL_FILE),
        &outcome.encoder,
        Some(&outcome.heads),
    )?;
    write_curves_csv(&run.path("curves.csv"), &outcome.history)?;
    let split = if outcome.val_ids.is_empty() {
        "train"
    } else {
        "val"
    };
    let metrics = MetricsReport {
        task_accuracy: final_accuracy(&outcome.history, split),
        curves: outcome.history.clone(),
        ..Default::default()
    };
    metrics.write_json(&run.path("metrics.json"))?;
    run.write_json(
        "split.json",
        &serde_json::json!({ "train": outcome.train_ids, "val": outcome.val_ids }),
    )?;
    run.finish("pretrain")
}

fn embed(
    cfg: &PipelineConfig,
    data: &Path,
    model: &Path,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let model = artifact(model, MODEL_FILE)?;
    run.tracker.input("model", &model);
    let (encoder, _) = load_params(&model, Some(&cfg.encoder()))?;
    let ds = load_dataset(data, &mut run.tracker)?;
    let windowing = cfg.windowing();
    let series = ds
        .normalized()?
        .iter()
        .map(|s| embed_sequence(&encoder, s, &windowing))
        .collect::<dyadic::Result<Vec<_>>>()?;
    write_embeddings_ndjson(&run.path(EMBEDDINGS_FILE), &series)?;
    run.finish("embed")
}

fn labeled(ds: &Dataset) -> Result<Vec<LabeledSequence>, CliError> {
    let seqs = ds.normalized()?;
    let out = seqs
        .into_iter()
        .zip(&ds.tracks)
        .filter_map(|(s, t)| t.clone().map(|t| LabeledSequence::new(s, t)))
        .collect::<dyadic::Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no annotated sequences",
            ds.dir.display()
        )));
    }
    Ok(out)
}

fn finetune(
    cfg: &PipelineConfig,
    data: &Path,
    model: Option<&Path>,
    freeze: bool,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let ds = load_dataset(data, &mut run.tracker)?;
    let train_data = labeled(&ds)?;
    let enc_cfg = cfg.encoder();
    let mut rng = seeded_rng(cfg.seed, 6);
    let encoder = match model {
        Some(p) => {
            let p = artifact(p, MODEL_FILE)?;
            run.tracker.input("model", &p);
            load_params(&p, Some(&enc_cfg))?.0
        }
        None => EncoderParams::init(&enc_cfg, &mut rng)?,
    };
    let clf = Classifier::new(encoder, ds.index.classes.clone(), ds.background(), &mut rng);
    let mut train = cfg.finetune.to_core(cfg.seed);
    train.freeze_encoder |= freeze;
    let outcome = finetune_classifier(clf, &train_data, &cfg.windowing(), &train)?;
    save_classifier(&run.path(CLASSIFIER_FILE), &outcome.classifier)?;
    write_curves_csv(&run.path("curves.csv"), &outcome.history)?;
    let metrics = MetricsReport {
        task_accuracy: final_accuracy(&outcome.history, "train"),
        f1: Some(outcome.train_f1.clone()),
        macro_f1: Some(outcome.train_macro_f1),
        nmi: None,
        curves: outcome.history.clone(),
    };
    metrics.write_json(&run.path("metrics.json"))?;
    run.finish("finetune")
}

fn annotate(
    cfg: &PipelineConfig,
    data: &Path,
    model: &Path,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let model = artifact(model, CLASSIFIER_FILE)?;
    run.tracker.input("model", &model);
    let clf = load_classifier(&model, Some(&cfg.encoder()))?;
    let ds = load_dataset(data, &mut run.tracker)?;
    let windowing = cfg.windowing();
    let mut pred_all = Vec::new();
    let mut truth_all = Vec::new();
    for ((seq, raw), track) in ds.normalized()?.iter().zip(&ds.sequences).zip(&ds.tracks) {
        let pred = predict_sequence(&clf, seq, &windowing)?;
        let t = AnnotationTrack::new(pred.clone(), clf.names.clone(), clf.background)?;
        dyadic::dataset::write_annotation_csv(&run.path(&format!("{}.pred.csv", raw.id)), &t)?;
        if let Some(track) = track {
            if track.names != clf.names {
                return Err(CliError::Validation(format!(
                    "sequence {}: dataset classes differ from the classifier's",
                    raw.id
                )));
            }
            pred_all.extend(pred);
            truth_all.extend_from_slice(&track.labels);
        }
    }
    if !truth_all.is_empty() {
        let f1 = eval_f1(&pred_all, &truth_all, Some(clf.background))?;
        let metrics = MetricsReport {
            macro_f1: Some(f1.macro_f1),
            f1: Some(f1),
            nmi: Some(eval_nmi(&pred_all, &truth_all)?),
            ..Default::default()
        };
        metrics.write_json(&run.path("metrics.json"))?;
    }
    run.finish("annotate")
}

/// Sidecar describing a segment run, read by later stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub fps: f64,
    pub filter_frames: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub fits: Vec<FitSummary>,
    pub skipped: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub k: usize,
    pub file: String,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: usize,
}

fn segment(
    cfg: &PipelineConfig,
    embeddings: &Path,
    data: Option<&Path>,
    fps: Option<f64>,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let path = artifact(embeddings, EMBEDDINGS_FILE)?;
    run.tracker.input("embeddings", &path);
    let series = read_embeddings_ndjson(&path)?;
    if series.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no embeddings",
            path.display()
        )));
    }
    let fps = match (fps, data) {
        (Some(f), _) => f,
        (None, Some(d)) => load_dataset(d, &mut run.tracker)?.fps(),
        (None, None) => {
            warn!(
                "no --fps or --data given; assuming {} fps",
                dyadic::dataset::DEFAULT_FPS
            );
            dyadic::dataset::DEFAULT_FPS
        }
    };
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(CliError::Validation(format!(
            "fps: must be positive, got {fps}"
        )));
    }
    let sweep = SweepConfig {
        k_min: cfg.segment.k_min,
        k_max: cfg.segment.k_max,
        seed: cfg.seed,
        filter_frames: cfg.segment.filter_frames(fps),
        filter_kind: cfg.segment.filter_kind,
    };
    let views: Vec<(String, ArrayView2<f64>)> = series
        .iter()
        .map(|s| (s.seq_id.clone(), s.embeddings.view()))
        .collect();
    let (catalog, fits) = sweep_hmms_with_fits(&views, &sweep)?;
    let bin = run.path(CATALOG_BIN);
    let json = run.path(CATALOG_JSON);
    write_catalog(&bin, &json, &catalog)?;
    let mut summaries = Vec::new();
    for f in &fits {
        let file = format!("hmm_k{}.json", f.params.k);
        f.params.write_json(&run.path(&file))?;
        summaries.push(FitSummary {
            k: f.params.k,
            file,
            log_likelihood: f.report.log_likelihood.last().copied().unwrap_or(f64::NAN),
            iterations: f.report.iterations,
            converged: f.report.converged,
            reseeded: f.report.reseeded.len(),
        });
    }
    let info = SegmentInfo {
        fps,
        filter_frames: sweep.filter_frames,
        k_min: sweep.k_min,
        k_max: sweep.k_max,
        fits: summaries,
        skipped: catalog.skipped.clone(),
    };
    run.write_json(SEGMENT_FILE, &info)?;
    run.finish("segment")
}

pub fn read_segment_info(dir: &Path) -> Result<SegmentInfo, CliError> {
    let p = dir.join(SEGMENT_FILE);
    require(&p)?;
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}

/// Per-sequence prototype label files, in catalog series order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeIndex {
    pub fps: f64,
    pub n_macro: usize,
    pub background: usize,
    pub series: Vec<(String, String)>,
}

fn prototypes(cfg: &PipelineConfig, segment_dir: &Path, out: PathBuf) -> Result<PathBuf, CliError> {
    let mut run = Run::start(cfg, out)?;
    let info = read_segment_info(segment_dir)?;
    run.tracker
        .input("segment", &segment_dir.join(SEGMENT_FILE));
    let bin = segment_dir.join(CATALOG_BIN);
    let json = segment_dir.join(CATALOG_JSON);
    require(&bin)?;
    require(&json)?;
    run.tracker.input("segment", &bin);
    run.tracker.input("segment", &json);
    let catalog = read_catalog(&bin, &json)?;
    let set = if catalog.len() < 2 {
        warn!(
            "catalog holds {} motifs; no prototypes selected",
            catalog.len()
        );
        PrototypeSet::empty()
    } else {
        select_prototypes(&catalog, cfg.prototypes.max_macro)?
    };
    for t in &set.tie_breaks {
        info!("tie: {t}");
    }
    set.write_json(&run.path(PROTOTYPES_FILE))?;
    {
        let p = run.path("silhouette.csv");
        let mut text = String::from("n_clusters,mean_silhouette\n");
        for (c, s) in &set.mean_silhouette {
            text.push_str(&format!("{c},{s}\n"));
        }
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    }
    let labels = prototype_labels(&set, &catalog)?;
    let mut offset = 0;
    let mut series = Vec::new();
    for (id, len) in &catalog.series {
        let file = format!("{id}.prototypes.csv");
        write_states_csv(&run.path(&file), &labels[offset..offset + len])?;
        offset += len;
        series.push((id.clone(), file));
    }
    let index = PrototypeIndex {
        fps: info.fps,
        n_macro: set.n_macro,
        background: set.n_macro,
        series,
    };
    run.write_json("prototype_index.json", &index)?;
    run.finish("prototypes")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PethEntry {
    unit: String,
    label: usize,
    file: Option<String>,
    n_events: usize,
    n_dropped: usize,
    note: Option<String>,
}

fn peth(
    cfg: &PipelineConfig,
    labels: &Path,
    spikes: &Path,
    fps: f64,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(CliError::Validation(format!(
            "fps: must be positive, got {fps}"
        )));
    }
    let mut run = Run::start(cfg, out)?;
    require(labels)?;
    require(spikes)?;
    run.tracker.input("labels", labels);
    run.tracker.input("spikes", spikes);
    let states = read_states_csv(labels)?;
    if states.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no frames",
            labels.display()
        )));
    }
    let duration = states.len() as f64 / fps;
    let trains = read_spikes_csv(spikes, Some(duration))?;
    let bouts = extract_bouts(&states, fps);
    let kept = filter_events(&bouts, cfg.analysis.min_event_s, cfg.analysis.max_event_s);
    let present: BTreeSet<usize> = states.iter().copied().collect();
    let pcfg = cfg.peth.to_core();
    let mut entries = Vec::new();
    for train in &trains {
        for &label in &present {
            let events: Vec<f64> = kept
                .iter()
                .filter(|b| b.label == label)
                .map(|b| b.start as f64 / fps)
                .collect();
            let mut entry = PethEntry {
                unit: train.unit.clone(),
                label,
                file: None,
                n_events: 0,
                n_dropped: 0,
                note: None,
            };
            if events.is_empty() {
                entry.note = Some("no events in the duration band".into());
            } else {
                match peth_spikes(train, &events, &pcfg) {
                    Ok(r) => {
                        let file = format!("peth_{}_label{label}.csv", train.unit);
                        write_peth_csv(&run.path(&file), &r)?;
                        entry.file = Some(file);
                        entry.n_events = r.n_events;
                        entry.n_dropped = r.n_dropped;
                    }
                    Err(dyadic::Error::Data(m)) => {
                        entry.n_dropped = events.len();
                        entry.note = Some(m);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            entries.push(entry);
        }
    }
    run.write_json("peth.json", &entries)?;
    run.finish("peth")
}

fn tune(cfg: &PipelineConfig, data: &Path, out: PathBuf) -> Result<PathBuf, CliError> {
    let tune = cfg.tune();
    if tune.candidates.is_empty() {
        return Err(CliError::Validation(
            "tune.candidates: at least one candidate is required".into(),
        ));
    }
    let mut run = Run::start(cfg, out)?;
    let ds = load_dataset(data, &mut run.tracker)?;
    let (report, best) = grid_search(&tune, &ds.normalized()?, &cfg.ssl())?;
    run.write_json("tune.json", &report)?;
    write_traces_csv(&run.path("traces.csv"), &report.traces)?;
    if let Some(b) = best {
        save_params(&run.path(MODEL_FILE), &b.encoder, Some(&b.heads))?;
        write_curves_csv(&run.path("curves.csv"), &b.history)?;
    }
    run.finish("tune")
}
