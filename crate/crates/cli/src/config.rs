//! Pipeline configuration: a TOML file whose sections default independently.
//!
//! Validation is not fail-fast. Every user key is checked on its own against
//! the section defaults, so one bad value does not hide another, and each
//! message names its field as `section.key`.

use std::path::{Path, PathBuf};

use dyadic::dataset::{WindowingConfig, INPUT_DIM};
use dyadic::hmm::FilterKind;
use dyadic::model::EncoderConfig;
use dyadic::ssl::SslConfig;
use dyadic::train::{AdamConfig, Candidate, TrainConfig, TuneConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that overrides the configured global seed.
pub const SEED_ENV: &str = "DYADIC_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingSection {
    pub window_size: usize,
    pub offset: usize,
}

impl Default for WindowingSection {
    fn default() -> Self {
        WindowingSection {
            window_size: 200,
            offset: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSection {
            embed_dim: d.embed_dim,
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            mlp_hidden: d.mlp_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub label_smoothing: f64,
    pub freeze_encoder: bool,
    pub val_fraction: f64,
    pub val_examples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            label_smoothing: t.label_smoothing,
            freeze_encoder: t.freeze_encoder,
            val_fraction: t.val_fraction,
            val_examples: t.val_examples,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam: AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            label_smoothing: self.label_smoothing,
            freeze_encoder: self.freeze_encoder,
            val_fraction: self.val_fraction,
            val_examples: self.val_examples,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslSection {
    pub alter_prob: f64,
    pub speed_factors: Vec<f64>,
    pub delay_min_frames: Option<usize>,
    pub delay_max_frames: Option<usize>,
}

impl Default for SslSection {
    fn default() -> Self {
        let s = SslConfig::default();
        SslSection {
            alter_prob: s.alter_prob,
            speed_factors: s.speed_factors,
            delay_min_frames: None,
            delay_max_frames: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub k_min: usize,
    pub k_max: usize,
    /// Causal smoothing of decoded states, seconds; 0 disables it.
    pub filter_s: f64,
    pub filter_kind: FilterKind,
}

impl Default for SegmentSection {
    fn default() -> Self {
        SegmentSection {
            k_min: 2,
            k_max: 32,
            filter_s: 0.0,
            filter_kind: FilterKind::Median,
        }
    }
}

impl SegmentSection {
    pub fn filter_frames(&self, fps: f64) -> usize {
        ((self.filter_s * fps).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypesSection {
    pub max_macro: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub min_event_s: f64,
    pub max_event_s: f64,
    /// Focal animal for kinematic features: 0 resident, 1 intruder.
    pub experimental_animal: usize,
    /// Moving-average window for kinematic features, seconds.
    pub feature_smooth_s: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            min_event_s: 0.2,
            max_event_s: 2.0,
            experimental_animal: 0,
            feature_smooth_s: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PethSection {
    pub window_s: f64,
    pub bin_s: f64,
    pub zscore: bool,
    pub smooth_s: Option<f64>,
}

impl Default for PethSection {
    fn default() -> Self {
        PethSection {
            window_s: 5.0,
            bin_s: 0.1,
            zscore: true,
            smooth_s: Some(1.0),
        }
    }
}

impl PethSection {
    pub fn to_core(&self) -> dyadic::analysis::PethConfig {
        dyadic::analysis::PethConfig {
            window_s: self.window_s,
            bin_s: self.bin_s,
            zscore: self.zscore,
            smooth_s: self.smooth_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    pub name: String,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub n_splits: usize,
    pub val_fraction: f64,
    pub tune_epochs: usize,
    pub score_window: usize,
    pub retrain_best: bool,
    pub candidates: Vec<CandidateSection>,
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = TuneConfig::default();
        TuneSection {
            n_splits: t.n_splits,
            val_fraction: t.val_fraction,
            tune_epochs: t.tune_epochs,
            score_window: t.score_window,
            retrain_best: t.retrain_best,
            candidates: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub sequences: usize,
    pub frames: usize,
    pub fps: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            sequences: 8,
            frames: 3000,
            fps: dyadic::dataset::DEFAULT_FPS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub windowing: WindowingSection,
    pub encoder: EncoderSection,
    pub pretrain: TrainSection,
    pub finetune: TrainSection,
    pub ssl: SslSection,
    pub segment: SegmentSection,
    pub prototypes: PrototypesSection,
    pub analysis: AnalysisSection,
    pub peth: PethSection,
    pub tune: TuneSection,
    pub synth: SynthSection,
}

const SECTIONS: [&str; 12] = [
    "paths",
    "windowing",
    "encoder",
    "pretrain",
    "finetune",
    "ssl",
    "segment",
    "prototypes",
    "analysis",
    "peth",
    "tune",
    "synth",
];

impl PipelineConfig {
    pub fn windowing(&self) -> WindowingConfig {
        WindowingConfig {
            window_size: self.windowing.window_size,
            offset: self.windowing.offset,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: INPUT_DIM,
            embed_dim: self.encoder.embed_dim,
            n_layers: self.encoder.n_layers,
            n_heads: self.encoder.n_heads,
            mlp_hidden: self.encoder.mlp_hidden,
            window_size: self.windowing.window_size,
        }
    }

    pub fn ssl(&self) -> SslConfig {
        let delay = match (self.ssl.delay_min_frames, self.ssl.delay_max_frames) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(1), hi.or(lo).unwrap_or(1))),
        };
        SslConfig {
            alter_prob: self.ssl.alter_prob,
            speed_factors: self.ssl.speed_factors.clone(),
            delay_range_frames: delay,
            label_smoothing: self.pretrain.label_smoothing,
            seed: self.seed,
        }
    }

    pub fn tune(&self) -> TuneConfig {
        let base = self.pretrain.to_core(self.seed);
        let candidates = self
            .tune
            .candidates
            .iter()
            .map(|c| Candidate {
                name: c.name.clone(),
                encoder: EncoderConfig {
                    input_dim: INPUT_DIM,
                    embed_dim: c.embed_dim,
                    n_layers: c.n_layers,
                    n_heads: c.n_heads,
                    mlp_hidden: c.mlp_hidden,
                    window_size: self.windowing.window_size,
                },
                train: TrainConfig {
                    learning_rate: c.learning_rate.unwrap_or(base.learning_rate),
                    ..base.clone()
                },
                epochs: c.epochs,
            })
            .collect();
        TuneConfig {
            candidates,
            n_splits: self.tune.n_splits,
            val_fraction: self.tune.val_fraction,
            tune_epochs: self.tune.tune_epochs,
            score_window: self.tune.score_window,
            retrain_best: self.tune.retrain_best,
            seed: self.seed,
        }
    }

    /// Canonical TOML rendering; every default is spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Semantic checks that need more than one field or the core validators.
    fn check(&self, errors: &mut Vec<String>) {
        let mut push = |field: &str, r: dyadic::Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{field}: {}", plain(&e)));
            }
        };
        push("windowing", self.windowing().validate());
        push("encoder", self.encoder().validate());
        push("pretrain", self.pretrain.to_core(self.seed).validate());
        push("finetune", self.finetune.to_core(self.seed).validate());
        push("ssl", self.ssl().validate());
        if self.segment.k_min == 0 {
            errors.push("segment.k_min: must be >= 1".into());
        }
        if self.segment.k_max < self.segment.k_min {
            errors.push(format!(
                "segment.k_max: {} is below k_min {}",
                self.segment.k_max, self.segment.k_min
            ));
        }
        if !(self.segment.filter_s >= 0.0 && self.segment.filter_s.is_finite()) {
            errors.push("segment.filter_s: must be a finite value >= 0".into());
        }
        if self.prototypes.max_macro.is_some_and(|m| m < 2) {
            errors.push("prototypes.max_macro: must be >= 2".into());
        }
        let a = &self.analysis;
        if !(a.min_event_s >= 0.0 && a.min_event_s.is_finite()) {
            errors.push("analysis.min_event_s: must be a finite value >= 0".into());
        }
        if !(a.max_event_s >= a.min_event_s) {
            errors.push("analysis.max_event_s: must be >= min_event_s".into());
        }
        if a.experimental_animal > 1 {
            errors.push("analysis.experimental_animal: must be 0 or 1".into());
        }
        if !(a.feature_smooth_s >= 0.0 && a.feature_smooth_s.is_finite()) {
            errors.push("analysis.feature_smooth_s: must be a finite value >= 0".into());
        }
        if !(self.peth.bin_s > 0.0 && self.peth.bin_s.is_finite()) {
            errors.push("peth.bin_s: must be positive".into());
        }
        if !(self.peth.window_s >= self.peth.bin_s && self.peth.window_s.is_finite()) {
            errors.push("peth.window_s: must be >= bin_s".into());
        }
        if self
            .peth
            .smooth_s
            .is_some_and(|s| !(s > 0.0 && s.is_finite()))
        {
            errors.push("peth.smooth_s: must be positive".into());
        }
        if !self.tune.candidates.is_empty() {
            let tune = self.tune();
            if let Err(e) = tune.validate() {
                errors.push(format!("tune: {}", plain(&e)));
            }
            for (i, c) in tune.candidates.iter().enumerate() {
                if let Err(e) = c.encoder.validate() {
                    errors.push(format!("tune.candidates[{i}]: {}", plain(&e)));
                }
            }
        }
        if self.synth.sequences == 0 {
            errors.push("synth.sequences: must be >= 1".into());
        }
        if self.synth.frames < 2 {
            errors.push("synth.frames: must be >= 2".into());
        }
        if !(self.synth.fps > 0.0 && self.synth.fps.is_finite()) {
            errors.push("synth.fps: must be positive".into());
        }
        if let Some(d) = &self.paths.data_dir {
            if !d.exists() {
                errors.push(format!("paths.data_dir: {} does not exist", d.display()));
            }
        }
    }
}

fn plain(e: &dyadic::Error) -> String {
    match e {
        dyadic::Error::Config(m) | dyadic::Error::Spec(m) => m.clone(),
        other => other.to_string(),
    }
}

fn clean(e: toml::de::Error) -> String {
    e.message().trim().to_string()
}

/// Deserializes one section, checking each user key against the defaults
/// in isolation so that every bad key is reported.
fn section<T>(doc: &toml::Table, name: &str, errors: &mut Vec<String>) -> T
where
    T: Serialize + DeserializeOwned + Default,
{
    let Some(value) = doc.get(name) else {
        return T::default();
    };
    let Some(user) = value.as_table() else {
        errors.push(format!("{name}: expected a table"));
        return T::default();
    };
    let base = match toml::Value::try_from(T::default()) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("section defaults serialize to a table"),
    };
    let mut merged = base.clone();
    for (key, v) in user {
        let mut trial = base.clone();
        trial.insert(key.clone(), v.clone());
        match toml::Value::Table(trial).try_into::<T>() {
            Ok(_) => {
                merged.insert(key.clone(), v.clone());
            }
            Err(e) => errors.push(format!("{name}.{key}: {}", clean(e))),
        }
    }
    toml::Value::Table(merged)
        .try_into::<T>()
        .unwrap_or_else(|e| {
            errors.push(format!("{name}: {}", clean(e)));
            T::default()
        })
}

/// Parses and validates config text, collecting every error.
pub fn parse_config(text: &str) -> Result<PipelineConfig, Vec<String>> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| vec![syntax_error(text, &e)])?;
    let mut errors = Vec::new();
    for key in doc.keys() {
        if key != "seed" && !SECTIONS.contains(&key.as_str()) {
            errors.push(format!("{key}: unknown key"));
        }
    }
    let seed = match doc.get("seed") {
        None => 0,
        Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
        Some(other) => {
            errors.push(format!(
                "seed: expected a non-negative integer, found {other}"
            ));
            0
        }
    };
    let cfg = PipelineConfig {
        seed,
        paths: section(&doc, "paths", &mut errors),
        windowing: section(&doc, "windowing", &mut errors),
        encoder: section(&doc, "encoder", &mut errors),
        pretrain: section(&doc, "pretrain", &mut errors),
        finetune: section(&doc, "finetune", &mut errors),
        ssl: section(&doc, "ssl", &mut errors),
        segment: section(&doc, "segment", &mut errors),
        prototypes: section(&doc, "prototypes", &mut errors),
        analysis: section(&doc, "analysis", &mut errors),
        peth: section(&doc, "peth", &mut errors),
        tune: section(&doc, "tune", &mut errors),
        synth: section(&doc, "synth", &mut errors),
    };
    cfg.check(&mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

fn syntax_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!(
                "syntax error at line {line}, column {col}: {}",
                clean(e.clone())
            )
        }
        None => format!("syntax error: {}", clean(e.clone())),
    }
}

/// Reads and validates a config file. Relative paths inside the file are
/// resolved against the file's directory.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let base = path.parent().unwrap_or(Path::new("."));
    let text_doc = resolve_paths(&text, base);
    parse_config(&text_doc)
}

/// Rewrites relative `[paths]` entries so they resolve from `base`.
fn resolve_paths(text: &str, base: &Path) -> String {
    let Ok(mut doc) = text.parse::<toml::Table>() else {
        return text.to_string();
    };
    if let Some(toml::Value::Table(paths)) = doc.get_mut("paths") {
        for (_, v) in paths.iter_mut() {
            if let toml::Value::String(s) = v {
                let p = Path::new(s.as_str());
                if p.is_relative() {
                    *s = base.join(p).to_string_lossy().into_owned();
                }
            }
        }
    }
    toml::to_string(&doc).unwrap_or_else(|_| text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.windowing.window_size, 200);
        assert_eq!(c.windowing.offset, 0);
        assert_eq!((c.segment.k_min, c.segment.k_max), (2, 32));
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn negative_window_is_one_error() {
        let errs = parse_config("[windowing]\nwindow_size = -5\n").unwrap_err();
        assert_eq!(errs.len(), 1, "{errs:?}");
        assert!(errs[0].contains("window_size"));
    }

    #[test]
    fn errors_accumulate() {
        let errs = parse_config("[windowing]\nwindow_size = -5\n[segment]\nk_min = 5\nk_max = 3\n")
            .unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("window_size")));
        assert!(errs.iter().any(|e| e.contains("segment.k_max")));
    }

    #[test]
    fn unknown_keys_are_named() {
        let errs = parse_config("colour = 1\n[encoder]\nwidth = 3\n").unwrap_err();
        assert!(errs.iter().any(|e| e.starts_with("colour")));
        assert!(errs.iter().any(|e| e.starts_with("encoder.width")));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let errs = parse_config("seed = 1\n[windowing\n").unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("line 2"), "{}", errs[0]);
    }

    #[test]
    fn normalized_text_round_trips() {
        let c = parse_config("seed = 7\n[segment]\nk_max = 6\n[peth]\nsmooth_s = 0.5\n").unwrap();
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
    }
}
