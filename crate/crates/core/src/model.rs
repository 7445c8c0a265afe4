//! Trained embedders: the FCN pipeline (input standardization + network)
//! and the engineered-feature pipeline, with binary save/load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::Container;
use crate::config::select_channels;
use crate::datakit::{resample, segment, CanonicalRecording, WindowSegment};
use crate::featkit::{extract_engineered, gini_rank, FeatureScaler, FEATURES_PER_CHANNEL};
use crate::nncore::{layers::softmax, Fcn, FcnConfig, Matrix, Tensor3};
use crate::{Error, Result};

const MODEL_KIND: &str = "model";
/// Windows per inference batch.
const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Impersonal softmax classifier.
    Fcn,
    /// Engineered features + k-NN.
    Pef,
    /// Cross-entropy-trained embedding + k-NN.
    Pdf,
    /// Triplet embedding with subject triplets.
    Ptn,
    /// Triplet embedding with random triplets only.
    PtnConventional,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Fcn,
        ModelKind::Pef,
        ModelKind::Pdf,
        ModelKind::PtnConventional,
        ModelKind::Ptn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fcn => "fcn",
            ModelKind::Pef => "pef",
            ModelKind::Pdf => "pdf",
            ModelKind::Ptn => "ptn",
            ModelKind::PtnConventional => "ptn_conventional",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model kind '{s}' (expected fcn, pef, pdf, ptn or ptn_conventional)"
                ))
            })
    }

    /// True for the kinds classified through a subject reference set.
    pub fn is_personalized(self) -> bool {
        self != ModelKind::Fcn
    }

    pub fn is_deep(self) -> bool {
        self != ModelKind::Pef
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How raw recordings become model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub sample_rate: f64,
    pub window_seconds: f64,
    pub overlap: f64,
    /// Channel names in model input order.
    pub channels: Vec<String>,
    pub n_channels: usize,
    pub window_len: usize,
}

impl InputSpec {
    /// Brings recordings to the model's channel order and sample rate and
    /// cuts them into windows.
    pub fn prepare(&self, recordings: &[CanonicalRecording]) -> Result<Vec<WindowSegment>> {
        let mut out = Vec::new();
        for r in recordings {
            let r = if r.channel_names == self.channels {
                r.clone()
            } else {
                select_channels(r.clone(), &self.channels)?
            };
            let r = if (r.sample_rate - self.sample_rate).abs() > 1e-9 {
                resample(&r, self.sample_rate)?
            } else {
                r
            };
            out.extend(segment(&r, self.window_seconds, self.overlap)?);
        }
        Ok(out)
    }
}

/// Per-channel standardization fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputStandardizer {
    pub fn fit(segments: &[WindowSegment]) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidInput("no training windows".into()))?;
        let c = first.n_channels;
        let mut sum = vec![0.0; c];
        let mut n = 0usize;
        for s in segments {
            check_window(s, c, first.window_len)?;
            for row in s.data.chunks_exact(c) {
                for (a, v) in sum.iter_mut().zip(row) {
                    *a += v;
                }
            }
            n += s.window_len;
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        let mut var = vec![0.0; c];
        for s in segments {
            for row in s.data.chunks_exact(c) {
                for ((a, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(InputStandardizer { mean, std })
    }

    /// Standardized `batch x time x channels` tensor.
    pub fn tensor(&self, segments: &[&WindowSegment]) -> Result<Tensor3<f32>> {
        let c = self.mean.len();
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let t = first.window_len;
        let mut data = Vec::with_capacity(segments.len() * t * c);
        for s in segments {
            check_window(s, c, t)?;
            for row in s.data.chunks_exact(c) {
                for ((v, m), sd) in row.iter().zip(&self.mean).zip(&self.std) {
                    data.push(((v - m) / sd) as f32);
                }
            }
        }
        Tensor3::from_vec(segments.len(), t, c, data)
    }
}

fn check_window(s: &WindowSegment, channels: usize, len: usize) -> Result<()> {
    if s.n_channels != channels || s.window_len != len {
        return Err(Error::Shape(format!(
            "window {}@{} is {}x{}, expected {}x{}",
            s.source_recording_id, s.start_index, s.window_len, s.n_channels, len, channels
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FcnModel {
    pub standardizer: InputStandardizer,
    pub net: Fcn<f32>,
}

impl FcnModel {
    fn chunks(segments: &[WindowSegment]) -> impl Iterator<Item = Vec<&WindowSegment>> {
        segments.chunks(INFER_CHUNK).map(|c| c.iter().collect())
    }

    pub fn embed(&self, segments: &[WindowSegment]) -> Result<Matrix<f32>> {
        let d = self.net.embedding_dim();
        let mut out = Vec::with_capacity(segments.len() * d);
        for chunk in Self::chunks(segments) {
            let x = self.standardizer.tensor(&chunk)?;
            out.extend(self.net.embed(&x)?.data);
        }
        Matrix::from_vec(segments.len(), d, out)
    }

    pub fn probabilities(&self, segments: &[WindowSegment]) -> Result<Matrix<f32>> {
        let k = self
            .net
            .config
            .n_classes
            .ok_or_else(|| Error::InvalidInput("model has no softmax head".into()))?;
        let mut out = Vec::with_capacity(segments.len() * k);
        for chunk in Self::chunks(segments) {
            let x = self.standardizer.tensor(&chunk)?;
            out.extend(softmax(&self.net.logits(&x)?).data);
        }
        Matrix::from_vec(segments.len(), k, out)
    }
}

/// Standardized engineered features, optionally reduced to the top-ranked
/// subset.
#[derive(Debug, Clone, PartialEq)]
pub struct PefModel {
    pub scaler: FeatureScaler,
    /// Indices into the full feature vector, in rank order.
    pub selected: Vec<usize>,
}

impl PefModel {
    /// Fits the scaler on all features; with `dim` below the full count the
    /// embedding keeps the `dim` features ranked highest by Gini importance.
    pub fn fit(train: &[WindowSegment], dim: Option<usize>, n_trees: usize, seed: u64) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::InvalidInput("no training windows".into()))?;
        let total = FEATURES_PER_CHANNEL * first.n_channels;
        let features = features_of(train)?;
        let scaler = FeatureScaler::fit(&features)?;
        let selected = match dim {
            Some(0) => return Err(Error::InvalidInput("embedding dimension must be >= 1".into())),
            Some(d) if d > total => {
                return Err(Error::InvalidInput(format!(
                    "engineered embedding of size {d} requested, only {total} features \
                     ({FEATURES_PER_CHANNEL} x {} channels)",
                    first.n_channels
                )))
            }
            Some(d) if d < total => {
                let labels: Vec<usize> = train.iter().map(|s| s.activity_id).collect();
                gini_rank(&features, &labels, n_trees, seed)?.top(d)
            }
            _ => (0..total).collect(),
        };
        Ok(PefModel { scaler, selected })
    }

    pub fn embed(&self, segments: &[WindowSegment]) -> Result<Matrix<f32>> {
        let d = self.selected.len();
        let mut out = Vec::with_capacity(segments.len() * d);
        for f in features_of(segments)? {
            let z = self.scaler.apply(&f)?;
            out.extend(self.selected.iter().map(|&i| z[i] as f32));
        }
        Matrix::from_vec(segments.len(), d, out)
    }
}

fn features_of(segments: &[WindowSegment]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    segments
        .par_iter()
        .map(|s| extract_engineered(s).map(|f| f.values))
        .collect()
}

#[derive(Debug, Clone)]
pub enum ModelBody {
    Fcn(FcnModel),
    Pef(PefModel),
}

/// A fitted model plus the preprocessing it expects.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub input: InputSpec,
    pub body: ModelBody,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: ModelKind,
    input: InputSpec,
    body: BodyMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "embedder", rename_all = "snake_case")]
enum BodyMeta {
    Fcn {
        config: FcnConfig,
        standardizer: InputStandardizer,
    },
    Pef {
        scaler: FeatureScaler,
        selected: Vec<usize>,
    },
}

impl TrainedModel {
    pub fn embed(&self, segments: &[WindowSegment]) -> Result<Matrix<f32>> {
        if segments.is_empty() {
            return Ok(Matrix::zeros(0, self.embedding_dim()));
        }
        match &self.body {
            ModelBody::Fcn(m) => m.embed(segments),
            ModelBody::Pef(m) => m.embed(segments),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.body {
            ModelBody::Fcn(m) => m.net.embedding_dim(),
            ModelBody::Pef(m) => m.selected.len(),
        }
    }

    /// Softmax class probabilities; errors for models without a head.
    pub fn probabilities(&self, segments: &[WindowSegment]) -> Result<Matrix<f32>> {
        match &self.body {
            ModelBody::Fcn(m) => m.probabilities(segments),
            ModelBody::Pef(_) => Err(Error::InvalidInput(
                "engineered-feature model has no softmax head".into(),
            )),
        }
    }

    pub fn has_softmax_head(&self) -> bool {
        matches!(&self.body, ModelBody::Fcn(m) if m.net.config.n_classes.is_some())
    }

    pub fn to_container(&self) -> Result<Container> {
        let body = match &self.body {
            ModelBody::Fcn(m) => BodyMeta::Fcn {
                config: m.net.config.clone(),
                standardizer: m.standardizer.clone(),
            },
            ModelBody::Pef(m) => BodyMeta::Pef {
                scaler: m.scaler.clone(),
                selected: m.selected.clone(),
            },
        };
        let meta = serde_json::to_value(ModelMeta {
            kind: self.kind,
            input: self.input.clone(),
            body,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut c = Container::new(MODEL_KIND, meta);
        if let ModelBody::Fcn(m) = &self.body {
            for (name, shape, data) in m.net.named_tensors() {
                c.push(name, shape, data.to_vec())?;
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != MODEL_KIND {
            return Err(Error::Format(format!("expected a model artifact, found {}", c.kind)));
        }
        let meta: ModelMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Format(format!("model manifest: {e}")))?;
        let body = match meta.body {
            BodyMeta::Fcn {
                config,
                standardizer,
            } => {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
                let mut net = Fcn::<f32>::init(config, &mut rng)?;
                for (name, slot) in net.named_tensors_mut() {
                    let t = c.get(&name)?;
                    if t.data.len() != slot.len() {
                        return Err(Error::Format(format!(
                            "tensor {name} has {} values, architecture needs {}",
                            t.data.len(),
                            slot.len()
                        )));
                    }
                    slot.copy_from_slice(&t.data);
                }
                ModelBody::Fcn(FcnModel { standardizer, net })
            }
            BodyMeta::Pef { scaler, selected } => ModelBody::Pef(PefModel { scaler, selected }),
        };
        Ok(TrainedModel {
            kind: meta.kind,
            input: meta.input,
            body,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.to_bytes()
    }

    /// Content hash of the serialized model.
    pub fn embedder_id(&self) -> Result<String> {
        Ok(content_id(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_kind(path, MODEL_KIND)?)
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
