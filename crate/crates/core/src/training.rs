//! Adam on summed binary cross-entropy, validation-driven early stopping and
//! the online decision-threshold search.

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{binarize, sample_f1_at, LabelSet};
use crate::models::{Inputs, Model};
use crate::seed::derive_seed;
use crate::tensor::{Gradients, ParamStore, Tensor};

pub const INITIAL_THRESHOLD: f64 = 0.2;
pub const THRESHOLD_FLOOR: f64 = 0.01;
pub const THRESHOLD_CEIL: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    /// Mini-batches between validation events; `None` means once per epoch.
    pub eval_every: Option<usize>,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            patience: 10,
            eval_every: None,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.patience == 0 || self.eval_every == Some(0) {
            return Err(Error::Config(
                "batch size, patience and evaluation interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are
/// treated as having a zero gradient. Nothing is modified when any gradient
/// is non-finite.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (id, g) in grads.params() {
        let p = params.get(id);
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter `{}` of shape {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient for parameter `{}`",
                p.name
            )));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let grad = grads.param(id).map(Tensor::data);
        let p = params.get_mut(id);
        if !p.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let w = p.value.data_mut();
        for j in 0..w.len() {
            let g = grad.map_or(0.0, |g| g[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Candidates `θ + jα` for `j = -k..=k`, rounded to 10 decimals so that
/// e.g. `0.2 - 3·0.01` is exactly `0.17`.
pub fn threshold_grid(theta_prev: f64, k: usize, alpha: f64) -> Vec<f64> {
    let k = k as i64;
    (-k..=k)
        .map(|j| ((theta_prev + j as f64 * alpha) * 1e10).round() / 1e10)
        .collect()
}

/// Picks the grid candidate with the best sample F1; ties go to the
/// candidate closest to `theta_prev`, then to the smaller one. The result is
/// clamped to `[0.01, 0.99]`.
pub fn update_threshold(
    probs: &Tensor,
    gold: &[LabelSet],
    theta_prev: f64,
    k: usize,
    alpha: f64,
) -> Result<f64> {
    let grid = threshold_grid(theta_prev, k, alpha);
    let mut best: Option<(f64, usize, f64)> = None; // (f1, |j|, θ)
    for (pos, &cand) in grid.iter().enumerate() {
        let f1 = sample_f1_at(probs, gold, cand)?;
        let dist = pos.abs_diff(k);
        let better = match best {
            None => true,
            Some((bf, bd, bt)) => {
                f1 > bf || (f1 == bf && (dist < bd || (dist == bd && cand < bt)))
            }
        };
        if better {
            best = Some((f1, dist, cand));
        }
    }
    let theta = best.map_or(theta_prev, |b| b.2);
    Ok(theta.clamp(THRESHOLD_FLOOR, THRESHOLD_CEIL))
}

/// Current decision threshold and its trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdState {
    pub theta: f64,
    pub k: usize,
    pub alpha: f64,
    /// `(step, θ, validation F1 at θ)`
    pub history: Vec<(usize, f64, f64)>,
}

impl Default for ThresholdState {
    fn default() -> Self {
        ThresholdState {
            theta: INITIAL_THRESHOLD,
            k: 3,
            alpha: 0.01,
            history: Vec::new(),
        }
    }
}

impl ThresholdState {
    /// Moves θ on validation predictions and returns `(θ, F1 at θ)`.
    pub fn update(&mut self, step: usize, probs: &Tensor, gold: &[LabelSet]) -> Result<(f64, f64)> {
        self.theta = update_threshold(probs, gold, self.theta, self.k, self.alpha)?;
        let f1 = sample_f1_at(probs, gold, self.theta)?;
        self.history.push((step, self.theta, f1));
        Ok((self.theta, f1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub patience: usize,
    pub best: Option<f64>,
    /// Index of the evaluation that produced `best`.
    pub best_eval: Option<usize>,
    pub since_improvement: usize,
    pub evaluations: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        EarlyStopState {
            patience,
            best: None,
            best_eval: None,
            since_improvement: 0,
            evaluations: 0,
        }
    }

    /// Records one validation score. Only strict improvements reset the
    /// counter; training stops once `patience` evaluations in a row failed
    /// to improve.
    pub fn observe(&mut self, score: f64) -> StopSignal {
        let index = self.evaluations;
        self.evaluations += 1;
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_eval = Some(index);
            self.since_improvement = 0;
            return StopSignal::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Continue
        }
    }
}

/// Why the training loop ended.
#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Non-finite loss or gradient; the model is the last good checkpoint.
    Diverged(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub epoch: usize,
    /// Mean per-sample training loss since the previous evaluation.
    pub train_loss: f64,
    pub val_loss: f64,
    pub theta: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub theta: f64,
    pub history: Vec<HistoryEntry>,
    pub stop: StopReason,
}

impl TrainedModel {
    /// Best validation F1 seen, if any evaluation ran.
    pub fn best_val_f1(&self) -> Option<f64> {
        self.history.iter().map(|h| h.val_f1).reduce(f64::max)
    }
}

/// Encoded documents with their gold label sets.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub inputs: &'a Inputs,
    pub gold: &'a [LabelSet],
}

impl<'a> Labeled<'a> {
    pub fn new(inputs: &'a Inputs, gold: &'a [LabelSet]) -> Result<Self> {
        if inputs.len() != gold.len() {
            return Err(Error::Shape(format!(
                "{} inputs vs {} label sets",
                inputs.len(),
                gold.len()
            )));
        }
        Ok(Labeled { inputs, gold })
    }
}

/// Binary indicator matrix of `gold` over `n_labels` columns.
pub fn target_matrix(gold: &[LabelSet], n_labels: usize) -> Result<Tensor> {
    if let Some(l) = gold.iter().flatten().find(|&&l| l >= n_labels) {
        return Err(Error::Validation(format!(
            "label index {l} outside a space of {n_labels}"
        )));
    }
    Ok(indicator(gold, n_labels))
}

/// Like [`target_matrix`] but silently skips labels outside the space.
fn indicator(gold: &[LabelSet], n_labels: usize) -> Tensor {
    let mut t = Tensor::zeros(&[gold.len(), n_labels]);
    let data = t.data_mut();
    for (r, set) in gold.iter().enumerate() {
        for &l in set.iter().filter(|&&l| l < n_labels) {
            data[r * n_labels + l] = 1.0;
        }
    }
    t
}

fn write_log(log: &mut Option<&mut dyn Write>, line: std::fmt::Arguments<'_>) -> Result<()> {
    if let Some(w) = log.as_mut() {
        writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
    }
    Ok(())
}

/// Mini-batch training with validation-driven early stopping.
///
/// At every validation event θ moves by [`update_threshold`] and the sample
/// F1 at the new θ is compared with the best so far. The returned model is
/// the best checkpoint together with its θ. Each event appends two lines to
/// `log`: `step<TAB>train<TAB>loss<TAB>theta<TAB>NA` and
/// `step<TAB>val<TAB>loss<TAB>theta<TAB>sample_f1`.
pub fn train(
    model: Model,
    train_set: Labeled<'_>,
    val_set: Labeled<'_>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let n = train_set.inputs.len();
    if n == 0 {
        return Err(Error::Validation("training split is empty".into()));
    }
    let n_labels = model.n_labels();
    let targets = target_matrix(train_set.gold, n_labels)?;
    let mut model = model;
    let mut adam = AdamState::new(model.params());
    let mut threshold = ThresholdState::default();
    let mut stopper = EarlyStopState::new(cfg.patience);
    let mut best: Option<(Model, f64)> = None;
    let mut history = Vec::new();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout", 0));
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let eval_every = cfg.eval_every.unwrap_or(batches_per_epoch);
    // validation may carry labels never seen in training
    let val_targets = indicator(val_set.gold, n_labels);

    let mut step = 0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut stop = StopReason::MaxEpochs;
    'epochs: for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            "shuffle",
            epoch as u64,
        )));
        for chunk in order.chunks(cfg.batch_size) {
            let inputs = train_set.inputs.select(chunk);
            let batch_targets = select_rows(&targets, chunk);
            let (loss, grads, bn_stats) =
                model.loss_and_gradients(&inputs, &batch_targets, true, &mut dropout_rng)?;
            if !loss.is_finite() {
                stop = StopReason::Diverged(format!("non-finite loss at step {step}"));
                break 'epochs;
            }
            if let Err(e) = adam_step(model.params_mut(), &grads, &mut adam, cfg.learning_rate) {
                match e {
                    Error::Divergence(msg) => {
                        stop = StopReason::Diverged(format!("{msg} at step {step}"));
                        break 'epochs;
                    }
                    other => return Err(other),
                }
            }
            model.update_running_stats(&bn_stats);
            step += 1;
            loss_sum += loss;
            loss_count += chunk.len();

            if step % eval_every == 0 {
                let probs = model.predict_proba(val_set.inputs)?;
                let val_loss = if val_set.gold.is_empty() {
                    0.0
                } else {
                    crate::tensor::bce_sum_from_probs(&probs, &val_targets)?
                        / val_set.gold.len() as f64
                };
                let (theta, f1) = threshold.update(step, &probs, val_set.gold)?;
                let train_loss = loss_sum / loss_count.max(1) as f64;
                loss_sum = 0.0;
                loss_count = 0;
                write_log(&mut log, format_args!("{step}\ttrain\t{train_loss:.6}\t{theta:.6}\tNA"))?;
                write_log(&mut log, format_args!("{step}\tval\t{val_loss:.6}\t{theta:.6}\t{f1:.6}"))?;
                debug!("step {step}: train loss {train_loss:.4}, val F1 {f1:.4} at θ={theta:.2}");
                history.push(HistoryEntry {
                    step,
                    epoch,
                    train_loss,
                    val_loss,
                    theta,
                    val_f1: f1,
                });
                match stopper.observe(f1) {
                    StopSignal::Improved => best = Some((model.clone(), theta)),
                    StopSignal::Continue => {}
                    StopSignal::Stop => {
                        stop = StopReason::Patience;
                        break 'epochs;
                    }
                }
            }
        }
    }
    let (model, theta) = match best {
        Some(b) => b,
        None => (model, threshold.theta),
    };
    info!(
        "training stopped after {step} steps ({stop:?}); best validation F1 {:?}",
        stopper.best
    );
    Ok(TrainedModel {
        model,
        theta,
        history,
        stop,
    })
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let cols = t.cols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::new(vec![rows.len(), cols], data).expect("row count matches")
}

/// Probabilities and the labels whose probability exceeds θ.
pub fn predict(trained: &TrainedModel, inputs: &Inputs) -> Result<(Tensor, Vec<LabelSet>)> {
    let probs = trained.model.predict_proba(inputs)?;
    let sets = binarize(&probs, trained.theta);
    Ok((probs, sets))
}
