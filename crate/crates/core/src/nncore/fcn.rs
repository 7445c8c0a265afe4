//! The fully convolutional encoder: conv blocks, global average pooling,
//! optional projection, L2 normalization and an optional softmax head.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::scalar::Real;
use super::tensor::{Matrix, Tensor3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture and layer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcnConfig {
    pub in_channels: usize,
    pub blocks: Vec<BlockSpec>,
    /// Width of a linear projection between pooling and normalization.
    /// `None` keeps the embedding at the last block's filter count.
    #[serde(default)]
    pub embed_dim: Option<usize>,
    /// Classes of the softmax head, if any.
    #[serde(default)]
    pub n_classes: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_dropout() -> f64 {
    0.3
}
fn default_bn_eps() -> f64 {
    1e-3
}
fn default_bn_momentum() -> f64 {
    0.99
}

/// `{128, 8, 1}`, `{256, 5, 1}`, `{128, 3, 1}`.
pub fn default_blocks() -> Vec<BlockSpec> {
    vec![
        BlockSpec { filters: 128, kernel: 8, stride: 1 },
        BlockSpec { filters: 256, kernel: 5, stride: 1 },
        BlockSpec { filters: 128, kernel: 3, stride: 1 },
    ]
}

impl FcnConfig {
    pub fn default_core(in_channels: usize) -> Self {
        FcnConfig {
            in_channels,
            blocks: default_blocks(),
            embed_dim: None,
            n_classes: None,
            dropout: default_dropout(),
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }

    /// Width of the last conv block.
    pub fn pooled_dim(&self) -> usize {
        self.blocks.last().map(|b| b.filters).unwrap_or(self.in_channels)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed_dim.unwrap_or_else(|| self.pooled_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.blocks.is_empty() {
            return Err(Error::Config(
                "network needs input channels and at least one block".into(),
            ));
        }
        if self
            .blocks
            .iter()
            .any(|b| b.filters == 0 || b.kernel == 0 || b.stride == 0)
        {
            return Err(Error::Config(format!(
                "block filters, kernel and stride must be positive: {:?}",
                self.blocks
            )));
        }
        if self.embed_dim == Some(0) || self.n_classes == Some(0) {
            return Err(Error::Config("embedding and class counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Counts conv weights and biases, all four batch-norm vectors per block,
/// and the projection and head when present.
pub fn param_count(config: &FcnConfig) -> usize {
    let mut total = 0;
    let mut in_ch = config.in_channels;
    for b in &config.blocks {
        total += b.kernel * in_ch * b.filters + b.filters + 4 * b.filters;
        in_ch = b.filters;
    }
    if let Some(d) = config.embed_dim {
        total += in_ch * d + d;
        in_ch = d;
    }
    if let Some(k) = config.n_classes {
        total += in_ch * k + k;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub spec: BlockSpec,
    pub in_channels: usize,
    /// `[kernel][in][filters]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[inputs][outputs]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weight: (0..inputs * outputs)
                .map(|_| T::cast(rng.random_range(-limit..limit)))
                .collect(),
            bias: vec![T::zero(); outputs],
        }
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            inputs: self.inputs,
            outputs: self.outputs,
            weight: cast_vec(&self.weight),
            bias: cast_vec(&self.bias),
        }
    }
}

fn cast_vec<T: Real, U: Real>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::cast(x.as_f64())).collect()
}

/// All weights and state of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Fcn<T> {
    pub config: FcnConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub projection: Option<Dense<T>>,
    pub head: Option<Dense<T>>,
}

struct BlockTape<T> {
    conv: Conv1dCache<T>,
    bn: BatchNormCache<T>,
    /// ReLU output before dropout.
    activ: Vec<T>,
    mask: Option<Vec<T>>,
    time: usize,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape<T> {
    blocks: Vec<BlockTape<T>>,
    last_time: usize,
    pooled: Matrix<T>,
    projected: Option<Matrix<T>>,
    norms: Vec<T>,
    embedding: Matrix<T>,
}

pub struct ForwardOutput<T> {
    /// Unit-norm rows, `batch x embedding_dim`.
    pub embedding: Matrix<T>,
    pub logits: Option<Matrix<T>>,
    pub tape: Option<Tape<T>>,
    pub batch_stats: Vec<BatchStats<T>>,
}

/// Gradients in [`Fcn::trainable_mut`] order, plus the input gradient when
/// requested.
pub struct FcnGrads<T> {
    pub params: Vec<Vec<T>>,
    pub input: Option<Tensor3<T>>,
}

impl<T: Real> Fcn<T> {
    /// Uniform fan-in scaled init (He for convs, Glorot for dense layers);
    /// zero biases; batch norm at identity.
    pub fn init<R: Rng + ?Sized>(config: FcnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut in_ch = config.in_channels;
        for spec in &config.blocks {
            let fan_in = spec.kernel * in_ch;
            let limit = (6.0 / fan_in as f64).sqrt();
            let f = spec.filters;
            blocks.push(ConvBlock {
                spec: *spec,
                in_channels: in_ch,
                weight: (0..fan_in * f)
                    .map(|_| T::cast(rng.random_range(-limit..limit)))
                    .collect(),
                bias: vec![T::zero(); f],
                gamma: vec![T::one(); f],
                beta: vec![T::zero(); f],
                running_mean: vec![T::zero(); f],
                running_var: vec![T::one(); f],
            });
            in_ch = f;
        }
        let projection = config.embed_dim.map(|d| Dense::init(in_ch, d, rng));
        let emb = config.embedding_dim();
        let head = config.n_classes.map(|k| Dense::init(emb, k, rng));
        Ok(Fcn {
            config,
            blocks,
            projection,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.config)
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// Replaces (or adds) the softmax head.
    pub fn with_new_head<R: Rng + ?Sized>(mut self, n_classes: usize, rng: &mut R) -> Self {
        self.config.n_classes = Some(n_classes);
        self.head = Some(Dense::init(self.embedding_dim(), n_classes, rng));
        self
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.blocks.len() {
            for p in ["weight", "bias", "gamma", "beta"] {
                names.push(format!("block{i}.{p}"));
            }
        }
        if self.projection.is_some() {
            names.push("projection.weight".into());
            names.push("projection.bias".into());
        }
        if self.head.is_some() {
            names.push("head.weight".into());
            names.push("head.bias".into());
        }
        names
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        if let Some(p) = &mut self.projection {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// Named tensors including running statistics, for serialization.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let f = b.spec.filters;
            out.push((format!("block{i}.weight"), vec![b.spec.kernel, b.in_channels, f], &b.weight));
            out.push((format!("block{i}.bias"), vec![f], &b.bias));
            out.push((format!("block{i}.gamma"), vec![f], &b.gamma));
            out.push((format!("block{i}.beta"), vec![f], &b.beta));
            out.push((format!("block{i}.running_mean"), vec![f], &b.running_mean));
            out.push((format!("block{i}.running_var"), vec![f], &b.running_var));
        }
        for (name, d) in [("projection", &self.projection), ("head", &self.head)] {
            if let Some(d) = d {
                out.push((format!("{name}.weight"), vec![d.inputs, d.outputs], &d.weight));
                out.push((format!("{name}.bias"), vec![d.outputs], &d.bias));
            }
        }
        out
    }

    /// Mutable counterpart of [`Fcn::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out: Vec<(String, &mut Vec<T>)> = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.weight"), &mut b.weight));
            out.push((format!("block{i}.bias"), &mut b.bias));
            out.push((format!("block{i}.gamma"), &mut b.gamma));
            out.push((format!("block{i}.beta"), &mut b.beta));
            out.push((format!("block{i}.running_mean"), &mut b.running_mean));
            out.push((format!("block{i}.running_var"), &mut b.running_var));
        }
        if let Some(d) = &mut self.projection {
            out.push(("projection.weight".into(), &mut d.weight));
            out.push(("projection.bias".into(), &mut d.bias));
        }
        if let Some(d) = &mut self.head {
            out.push(("head.weight".into(), &mut d.weight));
            out.push(("head.bias".into(), &mut d.bias));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Fcn<U> {
        Fcn {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    spec: b.spec,
                    in_channels: b.in_channels,
                    weight: cast_vec(&b.weight),
                    bias: cast_vec(&b.bias),
                    gamma: cast_vec(&b.gamma),
                    beta: cast_vec(&b.beta),
                    running_mean: cast_vec(&b.running_mean),
                    running_var: cast_vec(&b.running_var),
                })
                .collect(),
            projection: self.projection.as_ref().map(Dense::cast),
            head: self.head.as_ref().map(Dense::cast),
        }
    }

    /// Full forward pass. With `record` the returned tape feeds
    /// [`Fcn::backward`]. Running statistics are not touched; see
    /// [`Fcn::commit_batch_stats`].
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor3<T>,
        mode: TrainMode,
        rng: &mut R,
        record: bool,
    ) -> Result<ForwardOutput<T>> {
        if x.channels != self.config.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                x.channels, self.config.in_channels
            )));
        }
        let mut h_owned: Option<Tensor3<T>> = None;
        let mut tapes = Vec::new();
        let mut stats = Vec::new();
        for block in &self.blocks {
            let input = h_owned.as_ref().unwrap_or(x);
            let (conv_out, conv_cache) =
                conv1d_forward(input, &block.weight, &block.bias, block.spec.kernel, block.spec.stride)?;
            let (mut y, bn_cache, bn_stats) = batchnorm_forward(
                &conv_out,
                &block.gamma,
                &block.beta,
                &block.running_mean,
                &block.running_var,
                mode,
                self.config.bn_eps,
            )?;
            drop(conv_out);
            relu_forward(&mut y.data);
            let activ = record.then(|| y.data.clone());
            let mask = dropout_forward(&mut y.data, self.config.dropout, mode, rng);
            if let Some(s) = bn_stats {
                stats.push(s);
            }
            if let Some(activ) = activ {
                tapes.push(BlockTape {
                    conv: conv_cache,
                    bn: bn_cache,
                    activ,
                    mask,
                    time: y.time,
                });
            }
            h_owned = Some(y);
        }
        let h = h_owned.expect("at least one block");
        let pooled = global_avg_pool_forward(&h);
        let projected = match &self.projection {
            Some(p) => Some(dense_forward(&pooled, &p.weight, &p.bias)?),
            None => None,
        };
        let (embedding, norms) = l2_normalize_forward(projected.as_ref().unwrap_or(&pooled));
        let logits = match &self.head {
            Some(head) => Some(dense_forward(&embedding, &head.weight, &head.bias)?),
            None => None,
        };
        let tape = record.then(|| Tape {
            blocks: tapes,
            last_time: h.time,
            pooled,
            projected,
            norms,
            embedding: embedding.clone(),
        });
        Ok(ForwardOutput {
            embedding,
            logits,
            tape,
            batch_stats: stats,
        })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, stats: &[BatchStats<T>]) {
        let momentum = self.config.bn_momentum;
        for (block, s) in self.blocks.iter_mut().zip(stats) {
            update_running_stats(&mut block.running_mean, &mut block.running_var, s, momentum);
        }
    }

    /// Train-mode forward with tape; updates running statistics.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor3<T>,
        rng: &mut R,
    ) -> Result<(ForwardOutput<T>, Tape<T>)> {
        let mut out = self.forward(x, TrainMode::Train, rng, true)?;
        self.commit_batch_stats(&out.batch_stats);
        let tape = out.tape.take().expect("recorded");
        Ok((out, tape))
    }

    /// Deterministic inference-mode embedding.
    pub fn embed(&self, x: &Tensor3<T>) -> Result<Matrix<T>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, TrainMode::Infer, &mut rng, false)?.embedding)
    }

    /// Inference-mode logits; errors when the network has no head.
    pub fn logits(&self, x: &Tensor3<T>) -> Result<Matrix<T>> {
        if self.head.is_none() {
            return Err(Error::InvalidInput("network has no softmax head".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self
            .forward(x, TrainMode::Infer, &mut rng, false)?
            .logits
            .expect("head present"))
    }

    /// Backpropagates loss gradients w.r.t. the embedding and/or the logits.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        d_embedding: Option<&Matrix<T>>,
        d_logits: Option<&Matrix<T>>,
        need_input_grad: bool,
    ) -> Result<FcnGrads<T>> {
        let emb = &tape.embedding;
        let mut d_emb = match d_embedding {
            Some(d) => {
                if d.rows != emb.rows || d.cols != emb.cols {
                    return Err(Error::Shape(format!(
                        "embedding gradient {}x{} for embedding {}x{}",
                        d.rows, d.cols, emb.rows, emb.cols
                    )));
                }
                d.clone()
            }
            None => Matrix::zeros(emb.rows, emb.cols),
        };
        let mut head_grads = None;
        if let Some(dl) = d_logits {
            let head = self
                .head
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("logit gradient without a head".into()))?;
            let g = dense_backward(emb, dl, &head.weight);
            for (a, b) in d_emb.data.iter_mut().zip(&g.input.data) {
                *a += *b;
            }
            head_grads = Some((g.weight, g.bias));
        }

        let pre_norm = tape.projected.as_ref().unwrap_or(&tape.pooled);
        let d_pre = l2_normalize_backward(pre_norm, &tape.norms, &d_emb);
        let (d_pooled, proj_grads) = match &self.projection {
            Some(p) => {
                let g = dense_backward(&tape.pooled, &d_pre, &p.weight);
                (g.input, Some((g.weight, g.bias)))
            }
            None => (d_pre, None),
        };
        let mut dh = global_avg_pool_backward(&d_pooled, tape.last_time);

        let mut block_grads: Vec<[Vec<T>; 4]> = Vec::with_capacity(self.blocks.len());
        let mut input_grad = None;
        for (i, (block, bt)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            debug_assert_eq!(dh.time, bt.time);
            dropout_backward(bt.mask.as_deref(), &mut dh.data);
            relu_backward(&bt.activ, &mut dh.data);
            let bn = batchnorm_backward(&bt.bn, &dh, &block.gamma);
            let want_dx = i > 0 || need_input_grad;
            let conv = conv1d_backward(
                &bt.conv,
                &bn.input,
                &block.weight,
                block.spec.kernel,
                block.spec.stride,
                want_dx,
            );
            block_grads.push([conv.weight, conv.bias, bn.gamma, bn.beta]);
            match conv.input {
                Some(dx) if i > 0 => dh = dx,
                other => input_grad = other,
            }
        }
        block_grads.reverse();
        let mut params: Vec<Vec<T>> = block_grads.into_iter().flatten().collect();
        if let Some((w, b)) = proj_grads {
            params.push(w);
            params.push(b);
        }
        if let Some((w, b)) = head_grads {
            params.push(w);
            params.push(b);
        }
        Ok(FcnGrads {
            params,
            input: input_grad,
        })
    }
}

/// Inference-mode embedding of a batch; the `fcn_forward` entry point.
pub fn fcn_forward<T: Real, R: Rng + ?Sized>(
    params: &Fcn<T>,
    batch: &Tensor3<T>,
    mode: TrainMode,
    rng: &mut R,
) -> Result<Matrix<T>> {
    Ok(params.forward(batch, mode, rng, false)?.embedding)
}
