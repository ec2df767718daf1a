//! The `analyze` stage: bout statistics, coverage, NMI, transitions, group
//! tests and kinematic-feature PETHs around prototype onsets, written as a
//! JSON report, a text summary and plotting-ready CSVs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dyadic::analysis::{
    behavioral_features, bout_stats, extract_bouts, f1_coverage, filter_events, moving_average,
    peth_signal, transition_difference, transitions, unpaired_ttest, Bout, PethConfig, PethResult,
    TransitionMatrix,
};
use dyadic::hmm::read_states_csv;
use dyadic::motifs::PrototypeSet;
use dyadic::train::eval_nmi;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::commands::{PrototypeIndex, NORMALIZED_CONFIG, PROTOTYPES_FILE};
use crate::config::PipelineConfig;
use crate::data::{load_dataset, require};
use crate::manifest::Tracker;
use crate::CliError;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSummary {
    pub macro_id: usize,
    pub motif: String,
    pub silhouette: f64,
    pub n_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub prototypes: Vec<String>,
    pub behaviors: Vec<String>,
    /// Rows are prototypes, columns behaviors.
    pub f1: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoutRow {
    pub sequence: String,
    pub group: Option<String>,
    pub label: String,
    pub count: usize,
    pub mean_duration_s: Option<f64>,
    pub rate_per_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTest {
    pub label: String,
    pub metric: String,
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `None` when the pooled variance is zero and the means differ.
    pub t: Option<f64>,
    pub p: f64,
    pub df: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTransitions {
    pub group: String,
    pub matrix: TransitionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePeth {
    pub label: String,
    pub feature: String,
    pub result: PethResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_prototypes: usize,
    pub notes: Vec<String>,
    /// Label names in id order; the last one is the background.
    pub labels: Vec<String>,
    pub prototypes: Vec<PrototypeSummary>,
    pub mean_silhouette: Vec<(usize, f64)>,
    pub coverage: Option<Coverage>,
    pub nmi: Option<f64>,
    pub bouts: Vec<BoutRow>,
    pub group_tests: Vec<GroupTest>,
    pub transitions: Vec<GroupTransitions>,
    /// First group minus second, when exactly two groups exist.
    pub transition_difference: Option<(String, String, Vec<Vec<f64>>)>,
    pub feature_peth: Vec<FeaturePeth>,
}

impl Report {
    pub fn read_json(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

/// Pools per-recording PETHs into one mean and SEM over all events, exactly
/// as if every event had been aligned on a single signal.
pub fn pool_peth(parts: &[PethResult]) -> Option<PethResult> {
    let first = parts.first()?;
    let width = first.mean.len();
    let n: usize = parts.iter().map(|p| p.n_events).sum();
    let dropped = parts.iter().map(|p| p.n_dropped).sum();
    let nf = n as f64;
    let mut mean = vec![0.0; width];
    let mut sem = vec![0.0; width];
    for i in 0..width {
        let sum: f64 = parts.iter().map(|p| p.mean[i] * p.n_events as f64).sum();
        let m = sum / nf;
        // Sum of squared deviations about the pooled mean, from each part's
        // own mean and sample variance.
        let ss: f64 = parts
            .iter()
            .map(|p| {
                let k = p.n_events as f64;
                let var = if p.n_events > 1 {
                    p.sem[i].powi(2) * k
                } else {
                    0.0
                };
                var * (k - 1.0) + k * (p.mean[i] - m).powi(2)
            })
            .sum();
        mean[i] = m;
        if n > 1 {
            sem[i] = (ss / (nf - 1.0) / nf).sqrt();
        }
    }
    Some(PethResult {
        time_s: first.time_s.clone(),
        mean,
        sem,
        n_events: n,
        n_dropped: dropped,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct SeqLabels {
    id: String,
    group: Option<String>,
    labels: Vec<usize>,
    bouts: Vec<Bout>,
}

pub fn analyze(
    cfg: &PipelineConfig,
    proto_dir: &Path,
    data: &Path,
    out: PathBuf,
) -> Result<PathBuf, CliError> {
    let set_path = proto_dir.join(PROTOTYPES_FILE);
    let index_path = proto_dir.join("prototype_index.json");
    require(&set_path)?;
    require(&index_path)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut tracker = Tracker::default();
    let cfg_path = tracker.output(out.join(NORMALIZED_CONFIG));
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| CliError::io(&cfg_path, e))?;
    tracker.input("prototypes", &set_path);
    tracker.input("prototypes", &index_path);
    let set = PrototypeSet::read_json(&set_path)?;
    let index: PrototypeIndex = serde_json::from_str(
        &std::fs::read_to_string(&index_path).map_err(|e| CliError::io(&index_path, e))?,
    )
    .map_err(|e| CliError::Validation(format!("{}: {e}", index_path.display())))?;
    let ds = load_dataset(data, &mut tracker)?;
    let fps = index.fps;

    let mut seqs = Vec::new();
    for (id, file) in &index.series {
        let p = proto_dir.join(file);
        require(&p)?;
        tracker.input("prototypes", &p);
        let labels = read_states_csv(&p)?;
        let pos = ds
            .sequences
            .iter()
            .position(|s| &s.id == id)
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "sequence {id} is not in the dataset {}",
                    ds.dir.display()
                ))
            })?;
        if ds.sequences[pos].len() != labels.len() {
            return Err(CliError::Validation(format!(
                "{}: {} labels for {} frames",
                p.display(),
                labels.len(),
                ds.sequences[pos].len()
            )));
        }
        let bouts = extract_bouts(&labels, fps);
        seqs.push((
            pos,
            SeqLabels {
                id: id.clone(),
                group: ds.sequences[pos].group.clone(),
                labels,
                bouts,
            },
        ));
    }

    let report = build_report(cfg, &set, &index, &ds, &seqs)?;
    write_outputs(&report, &out, &mut tracker)?;
    tracker.finish(&out, "analyze", &cfg.hash(), cfg.seed)?;
    Ok(out)
}

fn build_report(
    cfg: &PipelineConfig,
    set: &PrototypeSet,
    index: &PrototypeIndex,
    ds: &crate::data::Dataset,
    seqs: &[(usize, SeqLabels)],
) -> Result<Report, CliError> {
    let fps = index.fps;
    let n_labels = set.n_macro + 1;
    let mut notes = Vec::new();
    if set.n_macro == 0 {
        notes.push("zero prototypes: every frame is background".to_string());
    }
    let ids = set.prototype_ids();
    let mut labels: Vec<String> = ids
        .iter()
        .enumerate()
        .map(|(m, id)| format!("P{m}:{id}"))
        .collect();
    labels.push("background".into());

    let mut frames_per = vec![0usize; n_labels];
    for (_, s) in seqs {
        for &l in &s.labels {
            if l < n_labels {
                frames_per[l] += 1;
            }
        }
    }
    let prototypes = set
        .prototypes
        .iter()
        .enumerate()
        .map(|(m, &i)| PrototypeSummary {
            macro_id: m,
            motif: set.motif_ids[i].to_string(),
            silhouette: set.silhouette[i],
            n_frames: frames_per[m],
        })
        .collect();

    // Coverage and NMI against annotations, where present.
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (pos, s) in seqs {
        if let Some(t) = &ds.tracks[*pos] {
            pred.extend_from_slice(&s.labels);
            truth.extend_from_slice(&t.labels);
        }
    }
    let (coverage, nmi) = if truth.is_empty() {
        notes.push("no annotations: coverage and NMI skipped".into());
        (None, None)
    } else {
        let f1 = f1_coverage(&pred, &truth, set.n_macro, ds.index.classes.len())?;
        let cov = Coverage {
            prototypes: labels[..set.n_macro].to_vec(),
            behaviors: ds.index.classes.clone(),
            f1,
        };
        (Some(cov), Some(eval_nmi(&pred, &truth)?))
    };

    // Bout statistics per sequence and label.
    let mut bouts = Vec::new();
    for (_, s) in seqs {
        let duration = s.labels.len() as f64 / fps;
        for (l, name) in labels.iter().enumerate() {
            let st = bout_stats(&s.bouts, l, duration)?;
            bouts.push(BoutRow {
                sequence: s.id.clone(),
                group: s.group.clone(),
                label: name.clone(),
                count: st.count,
                mean_duration_s: st.mean_duration_s,
                rate_per_min: st.rate_per_min,
            });
        }
    }

    let groups: BTreeSet<String> = seqs.iter().filter_map(|(_, s)| s.group.clone()).collect();
    let groups: Vec<String> = groups.into_iter().collect();

    // Transitions, pooled and per group.
    let mut trans = Vec::new();
    let all: Vec<&[Bout]> = seqs.iter().map(|(_, s)| s.bouts.as_slice()).collect();
    trans.push(GroupTransitions {
        group: "all".into(),
        matrix: transitions(&all, n_labels)?,
    });
    for g in &groups {
        let tracks: Vec<&[Bout]> = seqs
            .iter()
            .filter(|(_, s)| s.group.as_ref() == Some(g))
            .map(|(_, s)| s.bouts.as_slice())
            .collect();
        trans.push(GroupTransitions {
            group: g.clone(),
            matrix: transitions(&tracks, n_labels)?,
        });
    }

    let mut group_tests = Vec::new();
    let mut diff = None;
    if groups.len() == 2 {
        let (a, b) = (&groups[0], &groups[1]);
        diff = Some((
            a.clone(),
            b.clone(),
            transition_difference(&trans[1].matrix, &trans[2].matrix)?,
        ));
        for name in &labels {
            for metric in ["mean_duration_s", "rate_per_min"] {
                let values = |g: &String| -> Vec<f64> {
                    bouts
                        .iter()
                        .filter(|r| &r.label == name && r.group.as_ref() == Some(g))
                        .filter_map(|r| match metric {
                            "mean_duration_s" => r.mean_duration_s,
                            _ => Some(r.rate_per_min),
                        })
                        .collect()
                };
                let (va, vb) = (values(a), values(b));
                if va.len() < 2 || vb.len() < 2 {
                    continue;
                }
                let t = unpaired_ttest(&va, &vb)?;
                group_tests.push(GroupTest {
                    label: name.clone(),
                    metric: metric.into(),
                    group_a: a.clone(),
                    group_b: b.clone(),
                    n_a: va.len(),
                    n_b: vb.len(),
                    mean_a: mean(&va),
                    mean_b: mean(&vb),
                    t: t.t.is_finite().then_some(t.t),
                    p: t.p,
                    df: t.df,
                });
            }
        }
        if group_tests.is_empty() {
            notes.push("group tests skipped: each group needs at least two sequences".into());
        }
    } else {
        notes.push(format!(
            "{} groups found; group tests need exactly two",
            groups.len()
        ));
    }

    let feature_peth = feature_peths(cfg, ds, seqs, set.n_macro, &labels, fps, &mut notes)?;

    Ok(Report {
        n_prototypes: set.n_macro,
        notes,
        labels,
        prototypes,
        mean_silhouette: set.mean_silhouette.clone(),
        coverage,
        nmi,
        bouts,
        group_tests,
        transitions: trans,
        transition_difference: diff,
        feature_peth,
    })
}

/// Kinematic features aligned to onsets of prototype bouts whose duration
/// lies in the configured band.
fn feature_peths(
    cfg: &PipelineConfig,
    ds: &crate::data::Dataset,
    seqs: &[(usize, SeqLabels)],
    n_macro: usize,
    labels: &[String],
    fps: f64,
    notes: &mut Vec<String>,
) -> Result<Vec<FeaturePeth>, CliError> {
    if n_macro == 0 {
        return Ok(Vec::new());
    }
    let exp = cfg.analysis.experimental_animal;
    let stim = 1 - exp;
    let smooth = ((cfg.analysis.feature_smooth_s * fps).round() as usize).max(1);
    let pcfg = PethConfig {
        window_s: cfg.peth.window_s,
        bin_s: 1.0 / fps,
        zscore: cfg.peth.zscore,
        smooth_s: None,
    };
    let names = [
        "proximity_cm",
        "orientation_exp_deg",
        "orientation_stim_deg",
        "velocity_exp_cm_s",
        "velocity_stim_cm_s",
    ];
    // parts[label][feature] collects one PETH per recording.
    let mut parts: Vec<Vec<Vec<PethResult>>> = vec![vec![Vec::new(); names.len()]; n_macro];
    let mut dropped = vec![0usize; n_macro];
    for (pos, s) in seqs {
        let seq = &ds.sequences[*pos];
        let f = match behavioral_features(seq, exp) {
            Ok(f) => f,
            Err(e) => {
                warn!("features skipped for {}: {e}", s.id);
                notes.push(format!("features skipped for {}: {e}", s.id));
                continue;
            }
        };
        let signals = [
            &f.proximity_cm,
            &f.orientation_deg[exp],
            &f.orientation_deg[stim],
            &f.velocity_cm_s[exp],
            &f.velocity_cm_s[stim],
        ]
        .map(|x| moving_average(x, smooth));
        let kept = filter_events(&s.bouts, cfg.analysis.min_event_s, cfg.analysis.max_event_s);
        for m in 0..n_macro {
            let events: Vec<f64> = kept
                .iter()
                .filter(|b| b.label == m)
                .map(|b| b.start as f64 / fps)
                .collect();
            if events.is_empty() {
                continue;
            }
            for (fi, sig) in signals.iter().enumerate() {
                match peth_signal(sig, &events, &pcfg) {
                    Ok(r) => parts[m][fi].push(r),
                    Err(dyadic::Error::Data(_)) => {
                        if fi == 0 {
                            dropped[m] += events.len();
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    let mut out = Vec::new();
    for m in 0..n_macro {
        for (fi, name) in names.iter().enumerate() {
            if let Some(mut r) = pool_peth(&parts[m][fi]) {
                r.n_dropped += dropped[m];
                out.push(FeaturePeth {
                    label: labels[m].clone(),
                    feature: name.to_string(),
                    result: r,
                });
            }
        }
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_outputs(r: &Report, out: &Path, tracker: &mut Tracker) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(r).expect("report serializes");
    write_text(&tracker.output(out.join(REPORT_JSON)), &(json + "\n"))?;
    write_text(&tracker.output(out.join(REPORT_TXT)), &render_text(r))?;

    if let Some(c) = &r.coverage {
        let mut s = String::from("prototype");
        for b in &c.behaviors {
            s.push(',');
            s.push_str(b);
        }
        s.push('\n');
        for (p, row) in c.prototypes.iter().zip(&c.f1) {
            s.push_str(p);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        write_text(&tracker.output(out.join("coverage.csv")), &s)?;
    }

    let mut s = String::from("sequence,group,label,count,mean_duration_s,rate_per_min\n");
    for b in &r.bouts {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            b.sequence,
            b.group.as_deref().unwrap_or(""),
            b.label,
            b.count,
            fmt_opt(b.mean_duration_s),
            b.rate_per_min
        );
    }
    write_text(&tracker.output(out.join("bouts.csv")), &s)?;

    let mut s = String::from("label,metric,group_a,group_b,n_a,n_b,mean_a,mean_b,t,p,df\n");
    for g in &r.group_tests {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            g.label,
            g.metric,
            g.group_a,
            g.group_b,
            g.n_a,
            g.n_b,
            g.mean_a,
            g.mean_b,
            fmt_opt(g.t),
            g.p,
            g.df
        );
    }
    write_text(&tracker.output(out.join("stats.csv")), &s)?;

    let mut s = String::from("group,from,to,count,prob\n");
    for g in &r.transitions {
        for (i, row) in g.matrix.probs.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{p}",
                    g.group, r.labels[i], r.labels[j], g.matrix.counts[i][j]
                );
            }
        }
    }
    write_text(&tracker.output(out.join("transitions.csv")), &s)?;

    if let Some((_, _, d)) = &r.transition_difference {
        let mut s = String::from("from,to,difference\n");
        for (i, row) in d.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{},{v}", r.labels[i], r.labels[j]);
            }
        }
        write_text(&tracker.output(out.join("transition_difference.csv")), &s)?;
    }

    let mut s = String::from("label,feature,time_s,mean,sem,n\n");
    for f in &r.feature_peth {
        for i in 0..f.result.time_s.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                f.label,
                f.feature,
                f.result.time_s[i],
                f.result.mean[i],
                f.result.sem[i],
                f.result.n_events
            );
        }
    }
    write_text(&tracker.output(out.join("feature_peth.csv")), &s)?;
    Ok(())
}

pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "prototypes: {}", r.n_prototypes);
    for n in &r.notes {
        let _ = writeln!(s, "note: {n}");
    }
    for p in &r.prototypes {
        let _ = writeln!(
            s,
            "  P{:<3} {:<10} silhouette {:>7.3}  frames {}",
            p.macro_id, p.motif, p.silhouette, p.n_frames
        );
    }
    if let Some(nmi) = r.nmi {
        let _ = writeln!(s, "\nNMI vs annotations: {nmi:.4}");
    }
    if let Some(c) = &r.coverage {
        let _ = writeln!(s, "\nF1 coverage (rows prototypes, columns behaviors)");
        let _ = write!(s, "{:<16}", "");
        for b in &c.behaviors {
            let _ = write!(s, "{b:>12}");
        }
        s.push('\n');
        for (p, row) in c.prototypes.iter().zip(&c.f1) {
            let _ = write!(s, "{p:<16}");
            for v in row {
                let _ = write!(s, "{v:>12.3}");
            }
            s.push('\n');
        }
    }
    if !r.group_tests.is_empty() {
        let _ = writeln!(s, "\nGroup tests (unpaired t)");
        for g in &r.group_tests {
            let t = g.t.map_or("inf".to_string(), |t| format!("{t:.3}"));
            let _ = writeln!(
                s,
                "  {:<16} {:<16} {} {:.3} vs {} {:.3}  t={t} p={:.4}",
                g.label, g.metric, g.group_a, g.mean_a, g.group_b, g.mean_b, g.p
            );
        }
    }
    if let Some(all) = r.transitions.first() {
        let _ = writeln!(s, "\nTransition probabilities (all sequences)");
        for (i, row) in all.matrix.probs.iter().enumerate() {
            let _ = write!(s, "{:<16}", r.labels[i]);
            for v in row {
                let _ = write!(s, "{v:>8.3}");
            }
            s.push('\n');
        }
    }
    s
}
