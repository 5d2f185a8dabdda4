//! Base-MLP, MLP, CNN and bidirectional attention LSTM classifiers.
//!
//! Every model maps a batch of encoded documents to one logit per label;
//! [`Model::predict_proba`] applies the sigmoid.

mod cnn;
mod config;
mod lstm;
mod mlp;

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    Architecture, CnnSpec, LstmSpec, MlpPreset, MlpSpec, ModelConfig, ModelKind, Preset,
};

use crate::error::{Error, Result};
use crate::features::TokenSequence;
use crate::seed::derive_seed;
use crate::tensor::gradcheck::{numeric_gradient, relative_error};
use crate::tensor::{
    read_checkpoint, write_checkpoint, BatchNormStats, CsrMatrix, Gradients, ParamStore,
    SparseVector, Tape, Tensor, Var,
};

/// Trailing padding marker inside a token sequence; maps to a zero vector.
pub const PAD: usize = usize::MAX;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;
const PREDICT_BATCH: usize = 256;

/// Encoded documents.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    /// TF-IDF vectors for the MLPs.
    Sparse { dim: usize, rows: Vec<SparseVector> },
    /// Token ids for the CNN and LSTM.
    Sequences(Vec<TokenSequence>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Sparse { rows, .. } => rows.len(),
            Inputs::Sequences(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Inputs {
        match self {
            Inputs::Sparse { dim, rows } => Inputs::Sparse {
                dim: *dim,
                rows: indices.iter().map(|&i| rows[i].clone()).collect(),
            },
            Inputs::Sequences(s) => {
                Inputs::Sequences(indices.iter().map(|&i| s[i].clone()).collect())
            }
        }
    }

    fn range(&self, start: usize, end: usize) -> Inputs {
        self.select(&(start..end).collect::<Vec<_>>())
    }
}

/// Running mean and variance of one batch-normalisation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(width: usize) -> Self {
        RunningStats {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    fn update(&mut self, batch: &BatchNormStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

/// Result of one recorded forward pass.
pub struct Forward {
    pub logits: Var,
    pub bn_stats: Vec<BatchNormStats>,
}

#[derive(Clone, Debug, PartialEq)]
enum Layout {
    Mlp(mlp::MlpLayout),
    Cnn(cnn::CnnLayout),
    Lstm(lstm::LstmLayout),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    running: Vec<RunningStats>,
    layout: Layout,
}

impl Model {
    /// Builds a model with freshly initialised parameters. Sequence models
    /// take their initial embedding matrix from `embeddings` when given.
    pub fn build(config: ModelConfig, embeddings: Option<&Tensor>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init", 0));
        let mut params = ParamStore::new();
        let mut running = Vec::new();
        let layout = match &config.arch {
            Architecture::BaseMlp(spec) | Architecture::Mlp(spec) => Layout::Mlp(
                mlp::build(spec, config.n_labels, &mut params, &mut running, &mut rng)?,
            ),
            Architecture::Cnn(spec) => Layout::Cnn(cnn::build(
                spec,
                config.n_labels,
                embeddings,
                &mut params,
                &mut rng,
            )?),
            Architecture::Lstm(spec) => Layout::Lstm(lstm::build(
                spec,
                config.n_labels,
                embeddings,
                &mut params,
                &mut rng,
            )?),
        };
        Ok(Model {
            config,
            params,
            running,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn n_labels(&self) -> usize {
        self.config.n_labels
    }

    /// Records a forward pass producing `n × |L|` logits. `train` enables
    /// dropout and batch statistics.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        inputs: &Inputs,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        if inputs.is_empty() {
            let logits = tape.constant(Tensor::zeros(&[0, self.config.n_labels]));
            return Ok(Forward {
                logits,
                bn_stats: Vec::new(),
            });
        }
        match (&self.layout, inputs, &self.config.arch) {
            (
                Layout::Mlp(layout),
                Inputs::Sparse { dim, rows },
                Architecture::BaseMlp(spec) | Architecture::Mlp(spec),
            ) => {
                if *dim != spec.input_dim {
                    return Err(Error::Shape(format!(
                        "model expects {} input features, batch has {dim}",
                        spec.input_dim
                    )));
                }
                let x = CsrMatrix::from_rows(*dim, rows)?;
                mlp::forward(layout, spec, &self.params, &self.running, tape, &x, train, rng)
            }
            (Layout::Cnn(layout), Inputs::Sequences(seqs), Architecture::Cnn(spec)) => {
                let logits = cnn::forward(layout, spec, &self.params, tape, seqs, train, rng)?;
                Ok(Forward {
                    logits,
                    bn_stats: Vec::new(),
                })
            }
            (Layout::Lstm(layout), Inputs::Sequences(seqs), Architecture::Lstm(spec)) => {
                let logits = lstm::forward(layout, spec, &self.params, tape, seqs, train, rng)?;
                Ok(Forward {
                    logits,
                    bn_stats: Vec::new(),
                })
            }
            _ => Err(Error::Validation(format!(
                "{} model cannot consume {} inputs",
                self.config.arch.kind(),
                match inputs {
                    Inputs::Sparse { .. } => "sparse TF-IDF",
                    Inputs::Sequences(_) => "token sequence",
                }
            ))),
        }
    }

    /// Attention distribution of the LSTM over the real tokens of `seq`.
    pub fn attention_weights(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        match (&self.layout, &self.config.arch) {
            (Layout::Lstm(layout), Architecture::Lstm(spec)) => {
                lstm::attention_weights(layout, spec, &self.params, seq)
            }
            _ => Err(Error::Validation(format!(
                "{} model has no attention",
                self.config.arch.kind()
            ))),
        }
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchNormStats]) {
        for (r, b) in self.running.iter_mut().zip(stats) {
            r.update(b);
        }
    }

    /// Summed binary cross-entropy and its gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        inputs: &Inputs,
        targets: &Tensor,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Gradients, Vec<BatchNormStats>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, inputs, train, rng)?;
        let loss = tape.bce_with_logits_sum(fwd.logits, targets)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, grads, fwd.bn_stats))
    }

    /// Summed binary cross-entropy of one batch, without gradients.
    pub fn loss(
        &self,
        inputs: &Inputs,
        targets: &Tensor,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, inputs, train, rng)?;
        let loss = tape.bce_with_logits_sum(fwd.logits, targets)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Evaluation-mode probabilities, `n × |L|`.
    pub fn predict_proba(&self, inputs: &Inputs) -> Result<Tensor> {
        let n = inputs.len();
        let l = self.config.n_labels;
        let mut data = Vec::with_capacity(n * l);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_BATCH).min(n);
            let batch = inputs.range(start, end);
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, false, &mut rng)?;
            let probs = tape.sigmoid(fwd.logits);
            data.extend_from_slice(tape.value(probs).data());
            start = end;
        }
        Tensor::new(vec![n, l], data)
    }

    /// Parameters followed by batch-normalisation running statistics.
    pub fn save_checkpoint<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut extra = Vec::new();
        for (i, r) in self.running.iter().enumerate() {
            let w = r.mean.len();
            extra.push((
                format!("running{i}.mean"),
                Tensor::new(vec![w], r.mean.clone()).expect("length matches"),
            ));
            extra.push((
                format!("running{i}.var"),
                Tensor::new(vec![w], r.var.clone()).expect("length matches"),
            ));
        }
        let mut records: Vec<(&str, &Tensor)> = self
            .params
            .iter()
            .map(|(_, p)| (p.name.as_str(), &p.value))
            .collect();
        records.extend(extra.iter().map(|(n, t)| (n.as_str(), t)));
        write_checkpoint(out, &records)
    }

    /// Rebuilds a model from its configuration and a checkpoint.
    pub fn load_checkpoint<R: Read>(config: ModelConfig, input: &mut R) -> Result<Self> {
        let embedding_shape = config.arch.embedding_shape();
        let placeholder = embedding_shape.map(|(v, d)| Tensor::zeros(&[v, d]));
        let mut model = Model::build(config, placeholder.as_ref())?;
        let mut records = read_checkpoint(input)?;
        let n_running = model.running.len();
        let split = records.len().checked_sub(2 * n_running).ok_or_else(|| {
            Error::Format("checkpoint is missing batch-normalisation statistics".into())
        })?;
        let running = records.split_off(split);
        model.params.load_values(&records)?;
        for (i, r) in model.running.iter_mut().enumerate() {
            let (mean_name, mean) = &running[2 * i];
            let (var_name, var) = &running[2 * i + 1];
            if *mean_name != format!("running{i}.mean") || *var_name != format!("running{i}.var") {
                return Err(Error::Format(format!(
                    "unexpected records `{mean_name}`, `{var_name}`"
                )));
            }
            if mean.len() != r.mean.len() || var.len() != r.var.len() {
                return Err(Error::Format("running statistics have the wrong width".into()));
            }
            r.mean = mean.data().to_vec();
            r.var = var.data().to_vec();
        }
        Ok(model)
    }
}

/// Largest relative error between tape gradients and central differences
/// of the summed loss, over every parameter tensor. Dropout masks are
/// reproduced by reseeding the generator with `seed` for each evaluation.
pub fn gradient_check(
    model: &Model,
    inputs: &Inputs,
    targets: &Tensor,
    train: bool,
    seed: u64,
) -> Result<f64> {
    let rng = || ChaCha8Rng::seed_from_u64(seed);
    let (_, grads, _) = model.loss_and_gradients(inputs, targets, train, &mut rng())?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for id in model.params.ids() {
        let base = model.params.value(id).clone();
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.shape()));
        let mut failure = None;
        let numeric = numeric_gradient(
            |x| {
                probe.params.get_mut(id).value = x.clone();
                probe
                    .loss(inputs, targets, train, &mut rng())
                    .unwrap_or_else(|e| {
                        failure = Some(e);
                        f64::NAN
                    })
            },
            &base,
            1e-5,
        );
        probe.params.get_mut(id).value = base;
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// `x · W + b` with a dense input.
pub(crate) fn dense(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    tape.add_bias(h, b)
}

/// Real (non-pad) prefix of a sequence.
pub(crate) fn real_tokens(seq: &TokenSequence) -> &[usize] {
    let n = seq.0.iter().take_while(|&&t| t != PAD).count();
    &seq.0[..n]
}

/// Embedding rows for `ids` followed by zero rows up to `min_len`.
pub(crate) fn embed_padded(
    tape: &mut Tape<'_>,
    table: Var,
    ids: &[usize],
    min_len: usize,
) -> Result<Var> {
    let dim = tape.value(table).cols();
    let pad = min_len.saturating_sub(ids.len());
    match (ids.is_empty(), pad) {
        (true, _) => Ok(tape.constant(Tensor::zeros(&[min_len.max(1), dim]))),
        (false, 0) => tape.embedding(table, ids),
        (false, _) => {
            let e = tape.embedding(table, ids)?;
            let zeros = tape.constant(Tensor::zeros(&[pad, dim]));
            tape.concat(&[e, zeros], 0)
        }
    }
}
