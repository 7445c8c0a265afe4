use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::datakit::WindowSegment;
use crate::model::TrainedModel;
use crate::nncore::Matrix;
use crate::{Error, Result};

const REFERENCE_KIND: &str = "reference";
const UNIT_NORM_TOL: f64 = 1e-6;

/// Labeled embeddings of one subject's reference windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub subject_id: String,
    pub dim: usize,
    /// Row-major `len x dim`.
    pub embeddings: Vec<f32>,
    pub labels: Vec<usize>,
    pub embedder_id: String,
    /// Rows are L2-normalized (deep embedders).
    pub unit_norm: bool,
}

impl ReferenceSet {
    pub fn new(
        subject_id: String,
        rows: Vec<Vec<f32>>,
        labels: Vec<usize>,
        embedder_id: String,
        unit_norm: bool,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged reference rows".into()));
        }
        Self::from_flat(subject_id, dim, rows.concat(), labels, embedder_id, unit_norm)
    }

    pub fn from_flat(
        subject_id: String,
        dim: usize,
        embeddings: Vec<f32>,
        labels: Vec<usize>,
        embedder_id: String,
        unit_norm: bool,
    ) -> Result<Self> {
        let set = ReferenceSet {
            subject_id,
            dim,
            embeddings,
            labels,
            embedder_id,
            unit_norm,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 || self.dim == 0 {
            return Err(Error::InvalidInput(format!(
                "reference set for subject {} is empty",
                self.subject_id
            )));
        }
        if self.embeddings.len() != n * self.dim {
            return Err(Error::Shape(format!(
                "{} reference values for {n} rows of dimension {}",
                self.embeddings.len(),
                self.dim
            )));
        }
        if self.embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite reference embedding for subject {}",
                self.subject_id
            )));
        }
        if self.unit_norm {
            for i in 0..n {
                let norm = self.row(i).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Numeric(format!(
                        "reference row {i} of subject {} has norm {norm}",
                        self.subject_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Embeds `segments` (all from `subject_id`) with `model`.
    pub fn build(model: &TrainedModel, subject_id: &str, segments: &[WindowSegment]) -> Result<Self> {
        if let Some(s) = segments.iter().find(|s| s.subject_id != subject_id) {
            return Err(Error::InvalidInput(format!(
                "window from subject {} in reference set for {subject_id}",
                s.subject_id
            )));
        }
        let emb = model.embed(segments)?;
        Self::from_matrix(subject_id, &emb, segments, model.embedder_id()?, model.kind.is_deep())
    }

    /// Like [`ReferenceSet::build`] with precomputed embeddings.
    pub fn from_matrix(
        subject_id: &str,
        emb: &Matrix<f32>,
        segments: &[WindowSegment],
        embedder_id: String,
        unit_norm: bool,
    ) -> Result<Self> {
        if emb.rows != segments.len() {
            return Err(Error::Shape(format!(
                "{} embeddings for {} windows",
                emb.rows,
                segments.len()
            )));
        }
        Self::from_flat(
            subject_id.to_string(),
            emb.cols,
            emb.data.clone(),
            segments.iter().map(|s| s.activity_id).collect(),
            embedder_id,
            unit_norm,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Keeps the first `m` rows of each class in row order. The flag is true
    /// when some class had fewer than `m` rows.
    pub fn first_per_class(&self, m: usize) -> (ReferenceSet, bool) {
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        let mut keep = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            let c = seen.entry(*l).or_default();
            if *c < m {
                keep.push(i);
            }
            *c += 1;
        }
        let short = seen.values().any(|&c| c < m);
        let set = ReferenceSet {
            subject_id: self.subject_id.clone(),
            dim: self.dim,
            embeddings: keep.iter().flat_map(|&i| self.row(i).to_vec()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            embedder_id: self.embedder_id.clone(),
            unit_norm: self.unit_norm,
        };
        (set, short)
    }

    /// Serialized size of the embeddings and labels.
    pub fn byte_size(&self) -> usize {
        4 * (self.embeddings.len() + self.labels.len())
    }
}

/// Reference sets of several subjects produced by one embedder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferenceBank {
    pub sets: BTreeMap<String, ReferenceSet>,
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    embedder_id: String,
    unit_norm: bool,
    dim: usize,
    subjects: Vec<String>,
}

impl ReferenceBank {
    pub fn insert(&mut self, set: ReferenceSet) -> Result<()> {
        if let Some(other) = self.sets.values().next() {
            if other.embedder_id != set.embedder_id || other.dim != set.dim {
                return Err(Error::EmbedderMismatch {
                    model: set.embedder_id,
                    reference: other.embedder_id.clone(),
                });
            }
        }
        self.sets.insert(set.subject_id.clone(), set);
        Ok(())
    }

    pub fn embedder_id(&self) -> Option<&str> {
        self.sets.values().next().map(|s| s.embedder_id.as_str())
    }

    pub fn get(&self, subject_id: &str) -> Result<&ReferenceSet> {
        self.sets.get(subject_id).ok_or_else(|| {
            Error::InvalidInput(format!("no reference set for subject {subject_id}"))
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let first = self
            .sets
            .values()
            .next()
            .ok_or_else(|| Error::InvalidInput("empty reference bank".into()))?;
        let meta = BankMeta {
            embedder_id: first.embedder_id.clone(),
            unit_norm: first.unit_norm,
            dim: first.dim,
            subjects: self.sets.keys().cloned().collect(),
        };
        let mut c = Container::new(
            REFERENCE_KIND,
            serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?,
        );
        for (i, s) in self.sets.values().enumerate() {
            c.push(format!("embeddings.{i}"), vec![s.len(), s.dim], s.embeddings.clone())?;
            c.push(
                format!("labels.{i}"),
                vec![s.len()],
                s.labels.iter().map(|l| *l as f32).collect(),
            )?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != REFERENCE_KIND {
            return Err(Error::Format(format!("expected a reference artifact, found {}", c.kind)));
        }
        let meta: BankMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Format(format!("reference manifest: {e}")))?;
        let mut bank = ReferenceBank::default();
        for (i, subject) in meta.subjects.into_iter().enumerate() {
            let labels = c
                .get(&format!("labels.{i}"))?
                .data
                .iter()
                .map(|v| {
                    if *v >= 0.0 && v.fract() == 0.0 {
                        Ok(*v as usize)
                    } else {
                        Err(Error::Format(format!("invalid label {v}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let set = ReferenceSet::from_flat(
                subject,
                meta.dim,
                c.get(&format!("embeddings.{i}"))?.data.clone(),
                labels,
                meta.embedder_id.clone(),
                meta.unit_norm,
            )?;
            bank.insert(set)?;
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_kind(path, REFERENCE_KIND)?)
    }

    /// CSV with `subject_id,label,e0..e{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let dim = self.sets.values().next().map_or(0, |s| s.dim);
        let mut header = vec!["subject_id".to_string(), "label".to_string()];
        header.extend((0..dim).map(|j| format!("e{j}")));
        w.write_record(&header).map_err(fmt)?;
        for s in self.sets.values() {
            for i in 0..s.len() {
                let mut rec = vec![s.subject_id.clone(), s.labels[i].to_string()];
                rec.extend(s.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(fmt)?;
            }
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}
