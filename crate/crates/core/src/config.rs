//! Run configuration: one TOML file with `dataset`, `preprocessing`,
//! `model`, `training`, `evaluation` and `output` sections.
//!
//! Only `dataset.name` is required. Defaults:
//!
//! | key | default |
//! |-----|---------|
//! | `dataset.root` | `$PERHAR_DATA_ROOT` |
//! | `preprocessing.sample_rate` | 50 Hz (`0` keeps the native rate) |
//! | `preprocessing.window_seconds` | 10.0 for WISDM, 4.0 otherwise |
//! | `preprocessing.overlap` | 0.8 |
//! | `preprocessing.channels` | all |
//! | `model.kind` | `ptn` |
//! | `model.blocks` | 128x8, 256x5, 128x3 (stride 1) |
//! | `model.embed_dim` | none (embedding = last block width) |
//! | `model.dropout` / `bn_eps` / `bn_momentum` | 0.3 / 1e-3 / 0.99 |
//! | `model.pef_dim` | none (all engineered features) |
//! | `model.pef_trees` | 250 |
//! | `training.epochs` / `batch_size` | 150 / 64 |
//! | `training.cce_learning_rate` / `triplet_learning_rate` | 1e-3 / 2e-4 |
//! | `training.margin` / `subject_triplet_ratio` | 0.3 / 0.5 |
//! | `training.clipnorm` | 1.0 |
//! | `training.seed` | 0 |
//! | `training.validate` | true |
//! | `evaluation.models` | fcn, pef, pdf, ptn_conventional, ptn |
//! | `evaluation.k_folds` / `seed` / `jobs` | 5 / 0 / 1 |
//! | `evaluation.reference_fraction` / `ood_class_fraction` | 0.5 / 0.3 |
//! | `evaluation.knn_k` | 3 |
//! | `evaluation.refsize_grid` | 1, 2, 4, 8, 16, 32 |
//! | `evaluation.embsize_grid` | 8, 16, 32, 64 |
//! | `evaluation.ood_classes` | none (seeded draw by `ood_class_fraction`) |
//! | `output.dir` | none |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::{
    check_consistent_channels, ingest_dataset, resample, synth_dataset, CanonicalRecording,
    DatasetAdapter, SynthSpec,
};
use crate::model::ModelKind;
use crate::nncore::{default_blocks, BlockSpec, FcnConfig};
use crate::trainkit::{LossKind, TrainConfig};
use crate::{Error, Result};

pub const DATA_ROOT_ENV: &str = "PERHAR_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preprocessing: PreprocessingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `mhealth`, `wisdm`, `spar`, `canonical` or `synth`.
    pub name: String,
    /// Dataset directory, or file for `canonical`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Generator parameters for `synth`.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessingConfig {
    /// Resampling target in Hz; 0 keeps the native rate.
    pub sample_rate: f64,
    /// Unset means the dataset's usual window; see [`RunConfig::window_seconds`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_seconds: Option<f64>,
    pub overlap: f64,
    /// Channel subset by name, in the given order.
    pub channels: Option<Vec<String>>,
}

impl Default for PreprocessingConfig {
    fn default() -> Self {
        PreprocessingConfig {
            sample_rate: 50.0,
            window_seconds: None,
            overlap: 0.8,
            channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub blocks: Vec<BlockSpec>,
    pub embed_dim: Option<usize>,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub pef_dim: Option<usize>,
    pub pef_trees: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let core = FcnConfig::default_core(1);
        ModelConfig {
            kind: ModelKind::Ptn,
            blocks: default_blocks(),
            embed_dim: None,
            dropout: core.dropout,
            bn_eps: core.bn_eps,
            bn_momentum: core.bn_momentum,
            pef_dim: None,
            pef_trees: crate::featkit::DEFAULT_N_TREES,
        }
    }
}

impl ModelConfig {
    pub fn fcn_config(&self, in_channels: usize, embed_dim: Option<usize>) -> FcnConfig {
        FcnConfig {
            in_channels,
            blocks: self.blocks.clone(),
            embed_dim,
            n_classes: None,
            dropout: self.dropout,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub cce_learning_rate: f64,
    pub triplet_learning_rate: f64,
    pub margin: f64,
    /// Fraction of subject triplets for `ptn`; `ptn_conventional` always uses 0.
    pub subject_triplet_ratio: f64,
    pub clipnorm: Option<f64>,
    pub seed: u64,
    pub validate: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            cce_learning_rate: 1e-3,
            triplet_learning_rate: 2e-4,
            margin: t.margin,
            subject_triplet_ratio: t.subject_triplet_ratio,
            clipnorm: t.clipnorm,
            seed: t.seed,
            validate: t.validate,
        }
    }
}

impl TrainingConfig {
    /// Trainer settings for a deep model kind; `None` for `pef`.
    pub fn for_kind(&self, kind: ModelKind, seed: u64) -> Option<TrainConfig> {
        let (loss, lr, ratio) = match kind {
            ModelKind::Pef => return None,
            ModelKind::Fcn | ModelKind::Pdf => (LossKind::Cce, self.cce_learning_rate, 0.0),
            ModelKind::Ptn => (LossKind::Triplet, self.triplet_learning_rate, self.subject_triplet_ratio),
            ModelKind::PtnConventional => (LossKind::Triplet, self.triplet_learning_rate, 0.0),
        };
        Some(TrainConfig {
            loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: Some(lr),
            margin: self.margin,
            subject_triplet_ratio: ratio,
            seed,
            clipnorm: self.clipnorm,
            validate: self.validate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub models: Vec<ModelKind>,
    pub k_folds: usize,
    pub seed: u64,
    pub jobs: usize,
    pub reference_fraction: f64,
    pub ood_class_fraction: f64,
    pub knn_k: usize,
    pub refsize_grid: Vec<usize>,
    pub embsize_grid: Vec<usize>,
    /// Fixed held-out classes for ood and generalization runs, used in
    /// every fold instead of the seeded draw.
    pub ood_classes: Option<Vec<usize>>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            models: ModelKind::ALL.to_vec(),
            k_folds: 5,
            seed: 0,
            jobs: 1,
            reference_fraction: 0.5,
            ood_class_fraction: 0.3,
            knn_k: 3,
            refsize_grid: vec![1, 2, 4, 8, 16, 32],
            embsize_grid: vec![8, 16, 32, 64],
            ood_classes: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    /// Minimal config for a dataset, everything else at defaults.
    pub fn for_dataset(name: &str) -> Self {
        RunConfig {
            dataset: DatasetConfig {
                name: name.to_string(),
                root: None,
                synth: None,
            },
            preprocessing: Default::default(),
            model: Default::default(),
            training: Default::default(),
            evaluation: Default::default(),
            output: Default::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The fully resolved configuration as JSON, for report echoes.
    pub fn resolved(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.preprocessing.window_seconds = Some(self.window_seconds());
        serde_json::to_value(c).expect("config serializes")
    }

    /// Window length in seconds: the configured value, else 10 s for WISDM
    /// and 4 s for every other dataset.
    pub fn window_seconds(&self) -> f64 {
        self.preprocessing.window_seconds.unwrap_or(
            match self.dataset.name.as_str() {
                "wisdm" | "wisdm_watch" => 10.0,
                _ => 4.0,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.preprocessing;
        if !(p.sample_rate >= 0.0 && p.sample_rate.is_finite()) {
            return bad(format!("preprocessing.sample_rate must be >= 0, got {}", p.sample_rate));
        }
        if p.window_seconds.is_some_and(|w| !(w > 0.0)) {
            return bad("preprocessing.window_seconds must be > 0".into());
        }
        if !(0.0..1.0).contains(&p.overlap) {
            return bad(format!("preprocessing.overlap must be in [0, 1), got {}", p.overlap));
        }
        if self.dataset.name == "synth" && self.dataset.synth.is_none() {
            return bad("dataset.synth is required when dataset.name = \"synth\"".into());
        }
        if self.dataset.name != "synth" {
            DatasetAdapter::parse(&self.dataset.name).map_err(|e| Error::Config(e.to_string()))?;
        }
        let m = &self.model;
        if m.blocks.is_empty() || m.blocks.iter().any(|b| b.filters == 0 || b.kernel == 0 || b.stride == 0) {
            return bad("model.blocks must be non-empty with positive filters, kernel and stride".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad("model.dropout must be in [0, 1)".into());
        }
        if m.embed_dim == Some(0) || m.pef_dim == Some(0) || m.pef_trees == 0 {
            return bad("model.embed_dim, model.pef_dim and model.pef_trees must be >= 1".into());
        }
        if let Some(t) = self.training.for_kind(ModelKind::Ptn, 0) {
            t.validate_config()?;
        }
        let e = &self.evaluation;
        if e.models.is_empty() {
            return bad("evaluation.models must not be empty".into());
        }
        if e.k_folds < 2 {
            return bad("evaluation.k_folds must be >= 2".into());
        }
        if e.jobs == 0 || e.knn_k == 0 {
            return bad("evaluation.jobs and evaluation.knn_k must be >= 1".into());
        }
        if !(e.reference_fraction > 0.0 && e.reference_fraction < 1.0) {
            return bad("evaluation.reference_fraction must be in (0, 1)".into());
        }
        if !(e.ood_class_fraction > 0.0 && e.ood_class_fraction < 1.0) {
            return bad("evaluation.ood_class_fraction must be in (0, 1)".into());
        }
        if e.refsize_grid.contains(&0) || e.embsize_grid.contains(&0) {
            return bad("sweep grid values must be >= 1".into());
        }
        if e.ood_classes.as_ref().is_some_and(|c| c.is_empty()) {
            return bad("evaluation.ood_classes must name at least one class".into());
        }
        Ok(())
    }

    /// Loads the dataset and applies channel selection and resampling.
    pub fn load_recordings(&self) -> Result<Vec<CanonicalRecording>> {
        let raw = if self.dataset.name == "synth" {
            synth_dataset(self.dataset.synth.as_ref().expect("validated"))?
        } else {
            let adapter = DatasetAdapter::parse(&self.dataset.name)?;
            let root = match &self.dataset.root {
                Some(r) => r.clone(),
                None => std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).ok_or_else(|| {
                    Error::Config(format!("dataset.root is not set and {DATA_ROOT_ENV} is empty"))
                })?,
            };
            ingest_dataset(&root, adapter)?
        };
        self.preprocess(raw)
    }

    pub fn preprocess(&self, recordings: Vec<CanonicalRecording>) -> Result<Vec<CanonicalRecording>> {
        let p = &self.preprocessing;
        let mut out = Vec::with_capacity(recordings.len());
        for r in recordings {
            let r = match &p.channels {
                Some(names) => select_channels(r, names)?,
                None => r,
            };
            let r = if p.sample_rate > 0.0 && (r.sample_rate - p.sample_rate).abs() > 1e-9 {
                resample(&r, p.sample_rate)?
            } else {
                r
            };
            out.push(r);
        }
        check_consistent_channels(&out)?;
        Ok(out)
    }
}

/// Reorders/subsets channels by name.
pub fn select_channels(r: CanonicalRecording, names: &[String]) -> Result<CanonicalRecording> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            r.channel_names.iter().position(|c| c == n).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "channel '{n}' not in recording {} (has {})",
                    r.recording_id,
                    r.channel_names.join(", ")
                ))
            })
        })
        .collect::<Result<_>>()?;
    let c = r.n_channels();
    let samples = r
        .samples
        .chunks_exact(c)
        .flat_map(|row| idx.iter().map(move |&i| row[i]))
        .collect();
    Ok(CanonicalRecording {
        channel_names: names.to_vec(),
        samples,
        ..r
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_toml_str("[dataset]\nname = \"spar\"\n").unwrap();
        assert_eq!(c.window_seconds(), 4.0);
        let w = RunConfig::from_toml_str("[dataset]\nname = \"wisdm_watch\"\n").unwrap();
        assert_eq!(w.window_seconds(), 10.0);
        let set = RunConfig::from_toml_str("[dataset]\nname = \"wisdm\"\n[preprocessing]\nwindow_seconds = 2.5\n").unwrap();
        assert_eq!(set.window_seconds(), 2.5);
        assert_eq!(c.preprocessing.overlap, 0.8);
        assert_eq!(c.training.epochs, 150);
        assert_eq!(c.evaluation.k_folds, 5);
        assert_eq!(c.model.blocks, default_blocks());
        let t = c.training.for_kind(ModelKind::PtnConventional, 1).unwrap();
        assert_eq!((t.loss, t.subject_triplet_ratio, t.lr()), (LossKind::Triplet, 0.0, 2e-4));
        let t = c.training.for_kind(ModelKind::Ptn, 1).unwrap();
        assert_eq!(t.subject_triplet_ratio, 0.5);
        assert!(c.training.for_kind(ModelKind::Pef, 1).is_none());
    }

    #[test]
    fn missing_and_unknown_keys() {
        let e = RunConfig::from_toml_str("[training]\nepochs = 3\n").unwrap_err();
        assert!(e.to_string().contains("dataset"), "{e}");
        let e = RunConfig::from_toml_str("[dataset]\n").unwrap_err();
        assert!(e.to_string().contains("name"), "{e}");
        let e = RunConfig::from_toml_str("[dataset]\nname = \"spar\"\n[training]\nepoch = 3\n")
            .unwrap_err();
        assert!(e.to_string().contains("epoch"), "{e}");
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn invalid_values() {
        for extra in [
            "[preprocessing]\noverlap = 1.0",
            "[evaluation]\nk_folds = 1",
            "[training]\nsubject_triplet_ratio = 1.5",
            "[model]\nkind = \"svm\"",
        ] {
            let text = format!("[dataset]\nname = \"spar\"\n{extra}\n");
            assert!(RunConfig::from_toml_str(&text).is_err(), "{extra}");
        }
        assert!(RunConfig::from_toml_str("[dataset]\nname = \"synth\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::for_dataset("synth");
        c.dataset.synth = Some(SynthSpec::new(3, 2, 2, 20.0, 5.0, 1));
        c.model.embed_dim = Some(8);
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn synth_loading_and_channel_selection() {
        let mut c = RunConfig::for_dataset("synth");
        c.dataset.synth = Some(SynthSpec::new(2, 2, 3, 25.0, 4.0, 1));
        c.preprocessing.sample_rate = 50.0;
        c.preprocessing.channels = Some(vec!["ch_2".into(), "ch_0".into()]);
        let recs = c.load_recordings().unwrap();
        assert_eq!(recs[0].n_channels(), 2);
        assert_eq!(recs[0].sample_rate, 50.0);
        assert_eq!(recs[0].channel_names, vec!["ch_2", "ch_0"]);
        c.preprocessing.channels = Some(vec!["nope".into()]);
        assert!(c.load_recordings().is_err());
    }
}
