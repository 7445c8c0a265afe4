use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::triplet::{triplet_loss, Triplet, TripletMiner};
use crate::datakit::WindowSegment;
use crate::model::{FcnModel, InputStandardizer};
use crate::nncore::layers::{softmax_cce, TrainMode};
use crate::nncore::{AdamConfig, AdamState, Fcn, FcnConfig, Matrix};
use crate::{Error, Result};

/// Cap on validation triplets mined once per triplet-training run.
const MAX_VAL_TRIPLETS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Cce,
    Triplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to 1e-3 for cross-entropy and 2e-4 for triplet loss.
    pub learning_rate: Option<f64>,
    pub margin: f64,
    pub subject_triplet_ratio: f64,
    pub seed: u64,
    pub clipnorm: Option<f64>,
    /// Compute validation metrics every epoch when validation windows are given.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Cce,
            epochs: 150,
            batch_size: 64,
            learning_rate: None,
            margin: 0.3,
            subject_triplet_ratio: 0.5,
            seed: 0,
            clipnorm: Some(1.0),
            validate: true,
        }
    }
}

impl TrainConfig {
    pub fn triplet() -> Self {
        TrainConfig {
            loss: LossKind::Triplet,
            ..Default::default()
        }
    }

    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.loss {
            LossKind::Cce => 1e-3,
            LossKind::Triplet => 2e-4,
        })
    }

    pub fn validate_config(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.subject_triplet_ratio) {
            return Err(Error::Config(format!(
                "training.subject_triplet_ratio {} outside [0, 1]",
                self.subject_triplet_ratio
            )));
        }
        if !(self.lr() > 0.0) || !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::Config("learning rate must be > 0 and margin >= 0".into()));
        }
        if let Some(c) = self.clipnorm {
            if !(c > 0.0) {
                return Err(Error::Config("training.clipnorm must be > 0".into()));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            clipnorm: self.clipnorm,
            ..AdamConfig::with_lr(self.lr())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

/// One record per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["epoch", "train_loss", "val_loss", "val_accuracy", "seconds"])
            .map_err(fmt)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                opt(r.val_loss),
                opt(r.val_accuracy),
                r.seconds.to_string(),
            ])
            .map_err(fmt)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

fn check_finite(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite loss at epoch {epoch}, batch {batch}"
        )))
    }
}

/// Trains the network with a softmax head on cross-entropy loss.
///
/// `arch.in_channels` and `arch.n_classes` are taken from the data.
pub fn train_classifier<R: Rng + ?Sized>(
    train: &[WindowSegment],
    val: &[WindowSegment],
    arch: &FcnConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(FcnModel, TrainLog)> {
    config.validate_config()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidInput("no training windows".into()))?;
    let n_classes = train.iter().map(|s| s.activity_id).max().unwrap() + 1;
    let mut present = vec![false; n_classes];
    train.iter().for_each(|s| present[s.activity_id] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::InvalidInput(
            "classifier training needs at least two classes".into(),
        ));
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        log::warn!("class {missing} has no training windows; labels are not contiguous");
    }
    let net_config = FcnConfig {
        in_channels: first.n_channels,
        n_classes: Some(n_classes),
        ..arch.clone()
    };
    let standardizer = InputStandardizer::fit(train)?;
    let mut net = Fcn::<f32>::init(net_config, rng)?;
    let mut adam = AdamState::for_params(config.adam(), &net.trainable_mut());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_refs: Vec<&WindowSegment> = val.iter().filter(|s| s.activity_id < n_classes).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&WindowSegment> = idx.iter().map(|&i| &train[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|s| s.activity_id).collect();
            let x = standardizer.tensor(&batch)?;
            let (out, tape) = net.forward_train(&x, rng)?;
            let (loss, d_logits) = softmax_cce(out.logits.as_ref().expect("head"), &targets)?;
            check_finite(loss, epoch, b)?;
            total += loss * batch.len() as f64;
            let grads = net.backward(&tape, None, Some(&d_logits), false)?;
            adam.step(&mut net.trainable_mut(), &grads.params)?;
        }
        let (val_loss, val_accuracy) = if config.validate && !val_refs.is_empty() {
            let (l, a) = eval_classifier(&net, &standardizer, &val_refs)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / train.len() as f64,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("cce epoch {} loss {:.4}", rec.epoch, rec.train_loss);
        log.epochs.push(rec);
    }
    Ok((FcnModel { standardizer, net }, log))
}

fn eval_classifier(
    net: &Fcn<f32>,
    standardizer: &InputStandardizer,
    val: &[&WindowSegment],
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in val.chunks(256) {
        let x = standardizer.tensor(chunk)?;
        let logits = net.logits(&x)?;
        let targets: Vec<usize> = chunk.iter().map(|s| s.activity_id).collect();
        let (l, _) = softmax_cce(&logits, &targets)?;
        loss += l * chunk.len() as f64;
        for (r, t) in targets.iter().enumerate() {
            let row = logits.row(r);
            let pred = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap();
            correct += usize::from(pred == *t);
        }
    }
    Ok((loss / val.len() as f64, correct as f64 / val.len() as f64))
}

/// Splits a `3B x d` embedding into anchor, positive and negative blocks.
fn split3(m: &Matrix<f32>) -> [Matrix<f32>; 3] {
    let b = m.rows / 3;
    let block = |i: usize| {
        Matrix::from_vec(b, m.cols, m.data[i * b * m.cols..(i + 1) * b * m.cols].to_vec())
            .expect("exact split")
    };
    [block(0), block(1), block(2)]
}

fn triplet_batch<'a>(segments: &'a [WindowSegment], ts: &[Triplet]) -> Vec<&'a WindowSegment> {
    ts.iter()
        .map(|t| &segments[t.anchor])
        .chain(ts.iter().map(|t| &segments[t.positive]))
        .chain(ts.iter().map(|t| &segments[t.negative]))
        .collect()
}

/// Trains the embedding (no softmax head) with triplet loss. Each epoch
/// mines one triplet per training window, mixing subject and random
/// triplets by `config.subject_triplet_ratio`.
pub fn train_triplet<R: Rng + ?Sized>(
    train: &[WindowSegment],
    val: &[WindowSegment],
    arch: &FcnConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(FcnModel, TrainLog)> {
    config.validate_config()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidInput("no training windows".into()))?;
    let net_config = FcnConfig {
        in_channels: first.n_channels,
        n_classes: None,
        ..arch.clone()
    };
    let standardizer = InputStandardizer::fit(train)?;
    let mut net = Fcn::<f32>::init(net_config, rng)?;
    let mut adam = AdamState::for_params(config.adam(), &net.trainable_mut());
    let miner = TripletMiner::new(train);
    let n = train.len();
    // Fail early on non-viable data even when epochs = 0.
    let mut probe = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    if config.subject_triplet_ratio > 0.0 {
        miner.subject(1, &mut probe)?;
    }
    if config.subject_triplet_ratio < 1.0 {
        miner.random(1, &mut probe)?;
    }

    let val_triplets = if config.validate && !val.is_empty() {
        TripletMiner::new(val)
            .mixed(val.len().min(MAX_VAL_TRIPLETS), config.subject_triplet_ratio, rng)
            .ok()
    } else {
        None
    };
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let triplets = miner.mixed(n, config.subject_triplet_ratio, rng)?;
        let mut total = 0.0;
        for (b, ts) in triplets.chunks(config.batch_size).enumerate() {
            let batch = triplet_batch(train, ts);
            let x = standardizer.tensor(&batch)?;
            let (out, tape) = net.forward_train(&x, rng)?;
            let [a, p, ng] = split3(&out.embedding);
            let (loss, da, dp, dn) = triplet_loss(&a, &p, &ng, config.margin)?;
            check_finite(loss, epoch, b)?;
            total += loss;
            let mut d = da.data;
            d.extend(dp.data);
            d.extend(dn.data);
            let d_emb = Matrix::from_vec(out.embedding.rows, out.embedding.cols, d)?;
            let grads = net.backward(&tape, Some(&d_emb), None, false)?;
            adam.step(&mut net.trainable_mut(), &grads.params)?;
        }
        let (val_loss, val_accuracy) = match &val_triplets {
            Some(vt) if !vt.is_empty() => {
                let (l, a) = eval_triplets(&net, &standardizer, val, vt, config.margin)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / n as f64,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("triplet epoch {} loss {:.4}", rec.epoch, rec.train_loss);
        log.epochs.push(rec);
    }
    Ok((FcnModel { standardizer, net }, log))
}

/// Mean triplet loss and the fraction of triplets with d(a,p) < d(a,n).
fn eval_triplets(
    net: &Fcn<f32>,
    standardizer: &InputStandardizer,
    segments: &[WindowSegment],
    triplets: &[Triplet],
    margin: f64,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut ordered = 0usize;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    for ts in triplets.chunks(256) {
        let x = standardizer.tensor(&triplet_batch(segments, ts))?;
        let emb = net.forward(&x, TrainMode::Infer, &mut rng, false)?.embedding;
        let [a, p, n] = split3(&emb);
        loss += triplet_loss(&a, &p, &n, margin)?.0;
        for r in 0..a.rows {
            let d = |u: &[f32], v: &[f32]| -> f64 {
                u.iter().zip(v).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
            };
            ordered += usize::from(d(a.row(r), p.row(r)) < d(a.row(r), n.row(r)));
        }
    }
    Ok((loss / triplets.len() as f64, ordered as f64 / triplets.len() as f64))
}
