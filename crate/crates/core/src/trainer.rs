//! Adam, the masked-token pretraining loop and the joint sentiment +
//! language-id fine-tuning loop.

use std::fmt;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TweetRecord;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{forward_mlm, forward_multitask, mask_tokens, Bound, Corruption, Dropout, ModelWeights, ParamGroup};
use crate::tensor::{Graph, Tensor, Var, IGNORE_INDEX};
use crate::vocab::{align_tags, encode, Vocabulary};

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// One moment buffer pair per parameter size in `sizes`.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_weights(weights: &ModelWeights, lr: f64) -> Self {
        let sizes: Vec<usize> = weights.params().iter().map(|p| p.value.numel()).collect();
        Self::new(lr, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, idx: usize) -> &[f64] {
        &self.m[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[f64] {
        &self.v[idx]
    }

    /// Advances the step counter and updates every parameter whose gradient
    /// is `Some`. `None` leaves the parameter and its moments untouched.
    pub fn step<'a, I>(&mut self, slots: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut [f64], Option<&'a [f64]>)>,
    {
        let slots: Vec<_> = slots.into_iter().collect();
        if slots.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam tracks {} parameters, got {}",
                self.m.len(),
                slots.len()
            )));
        }
        for (idx, (param, grad)) in slots.iter().enumerate() {
            if param.len() != self.m[idx].len() || grad.is_some_and(|g| g.len() != param.len()) {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("parameter {idx} size mismatch"),
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, (param, grad)) in slots.into_iter().enumerate() {
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One Adam update over plain tensors.
pub fn adam_step(params: &mut [Tensor], grads: &[Option<Vec<f64>>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract("params and grads differ in length".into()));
    }
    state.step(
        params
            .iter_mut()
            .zip(grads)
            .map(|(p, g)| (p.data_mut(), g.as_deref())),
    )
}

/// Scales all gradients down to a global L2 norm of `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sentiment_weight: f64,
    pub langid_weight: f64,
    pub freeze_groups: Vec<ParamGroup>,
    pub seed: u64,
    pub mask_prob: f64,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            sentiment_weight: 1.0,
            langid_weight: 1.0,
            freeze_groups: Vec::new(),
            seed: 0,
            mask_prob: 0.15,
            max_steps: None,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.sentiment_weight < 0.0 || self.langid_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.sentiment_weight == 0.0 && self.langid_weight == 0.0 {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} must lie in [0, 1]", self.mask_prob)));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Mlm,
    Multitask,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mlm => "mlm",
            Task::Multitask => "multitask",
        })
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub task: Task,
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} task {} loss {:.6}", self.epoch, self.task, self.loss)?;
        if let Some(dev) = self.dev_f1 {
            write!(f, " dev_f1 {dev:.6}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<EpochStats>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub skipped_batches: usize,
    pub clipped_steps: usize,
}

impl TrainOutcome {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }

    /// Lines in training-log format.
    pub fn log_lines(&self) -> String {
        self.history.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// `λs · CE(sentiment) + λl · mean CE(langid over supervised positions)`.
/// A missing sentiment label or a zero weight drops that term.
pub fn multitask_loss(
    g: &mut Graph,
    sentiment_logits: Var,
    sentiment_label: Option<usize>,
    langid_logits: Var,
    langid_labels: &[usize],
    sentiment_weight: f64,
    langid_weight: f64,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    if let Some(label) = sentiment_label.filter(|_| sentiment_weight != 0.0) {
        let ce = g.cross_entropy(sentiment_logits, &[label])?;
        terms.push(g.scale(ce, sentiment_weight)?);
    }
    if langid_weight != 0.0 {
        let ce = g.cross_entropy(langid_logits, langid_labels)?;
        terms.push(g.scale(ce, langid_weight)?);
    }
    match terms[..] {
        [] => Ok(g.constant(Tensor::scalar(0.0))),
        [only] => Ok(only),
        [a, b] => g.add(a, b),
        _ => unreachable!(),
    }
}

struct Loop<'a> {
    weights: ModelWeights,
    cfg: &'a TrainConfig,
    task: Task,
    adam: AdamState,
    rng: ChaCha8Rng,
    history: Vec<EpochStats>,
    step_losses: Vec<f64>,
    skipped: usize,
    clipped: usize,
}

impl<'a> Loop<'a> {
    fn new(weights: ModelWeights, cfg: &'a TrainConfig, task: Task) -> Self {
        let adam = AdamState::for_weights(&weights, cfg.lr);
        Self {
            weights,
            cfg,
            task,
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            history: Vec::new(),
            step_losses: Vec::new(),
            skipped: 0,
            clipped: 0,
        }
    }

    fn budget_left(&self) -> bool {
        self.cfg.max_steps.is_none_or(|max| self.step_losses.len() < max)
    }

    /// Runs all epochs. `batch_loss` builds the batch loss on a fresh graph,
    /// or returns `None` when the batch has nothing to learn from.
    fn run<F, D>(mut self, n: usize, mut batch_loss: F, mut dev_f1: D) -> Result<TrainOutcome>
    where
        F: FnMut(&mut Graph, &Bound, &ModelWeights, &[usize], &mut ChaCha8Rng) -> Result<Option<Var>>,
        D: FnMut(&ModelWeights) -> Result<Option<f64>>,
    {
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 1..=self.cfg.epochs {
            if !self.budget_left() {
                break;
            }
            order.shuffle(&mut self.rng);
            let mut losses = Vec::new();
            for batch in order.chunks(self.cfg.batch_size) {
                if !self.budget_left() {
                    break;
                }
                let mut g = Graph::new();
                let bound = Bound::new(&mut g, &self.weights, true);
                let Some(loss) = batch_loss(&mut g, &bound, &self.weights, batch, &mut self.rng)? else {
                    self.skipped += 1;
                    info!("epoch {epoch}: batch without supervised positions skipped");
                    continue;
                };
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                g.backward(loss)?;
                let mut grads: Vec<Option<Vec<f64>>> =
                    bound.vars().iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect();
                if let Some(max_norm) = self.cfg.clip_norm {
                    let norm = clip_global_norm(&mut grads, max_norm);
                    if norm > max_norm {
                        self.clipped += 1;
                        debug!("step {}: gradient norm {norm:.4} clipped to {max_norm}", self.step_losses.len() + 1);
                    }
                }
                self.adam.step(
                    self.weights
                        .params_mut()
                        .iter_mut()
                        .zip(&grads)
                        .map(|(p, g)| (p.value.data_mut(), g.as_deref())),
                )?;
                losses.push(value);
                self.step_losses.push(value);
            }
            if losses.is_empty() {
                warn!("epoch {epoch}: no optimizer steps taken");
                continue;
            }
            let stats = EpochStats {
                epoch,
                task: self.task,
                loss: losses.iter().sum::<f64>() / losses.len() as f64,
                dev_f1: dev_f1(&self.weights)?,
            };
            info!("{stats}");
            self.history.push(stats);
        }
        Ok(TrainOutcome {
            weights: self.weights,
            history: self.history,
            step_losses: self.step_losses,
            skipped_batches: self.skipped,
            clipped_steps: self.clipped,
        })
    }
}

/// Masked-token pretraining of `weights` over `corpus`. The batch loss is
/// the mean cross-entropy over every selected position in the batch.
pub fn pretrain_mlm(
    weights: ModelWeights,
    corpus: &[TweetRecord],
    vocab: &Vocabulary,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Contract("pretraining corpus is empty".into()));
    }
    let cfg = weights.config().clone();
    if vocab.len() > cfg.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {} exceeds model vocab_size {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    let encoded: Vec<_> = corpus
        .iter()
        .map(|r| {
            let e = encode(&r.tokens, vocab, cfg.max_len);
            let n = e.real_len();
            (e.ids[..n].to_vec(), e.attention_mask[..n].to_vec())
        })
        .collect();
    let mask_prob = train_cfg.mask_prob;
    let dropout_rate = cfg.dropout_rate;
    Loop::new(weights, train_cfg, Task::Mlm).run(
        encoded.len(),
        |g, bound, w, batch, rng| {
            let mut weighted = Vec::new();
            let mut supervised = 0usize;
            for &i in batch {
                let (ids, mask) = &encoded[i];
                let (corrupted, labels) = mask_tokens(ids, w.config().vocab_size, mask_prob, Corruption::default(), rng);
                let count = labels.iter().filter(|&&l| l != IGNORE_INDEX).count();
                if count == 0 {
                    continue;
                }
                let mut dropout = Dropout::On { rate: dropout_rate, rng };
                let logits = forward_mlm(g, bound, w.config(), &corrupted, mask, &mut dropout)?;
                let ce = g.cross_entropy(logits, &labels)?;
                weighted.push(g.scale(ce, count as f64)?);
                supervised += count;
            }
            if supervised == 0 {
                return Ok(None);
            }
            let total = sum_vars(g, &weighted)?;
            Ok(Some(g.scale(total, 1.0 / supervised as f64)?))
        },
        |_| Ok(None),
    )
}

/// Joint sentiment + language-id fine-tuning. `train_cfg.freeze_groups` is
/// applied before the first step. When `dev` is given, its macro-F1 is
/// logged after every epoch.
pub fn finetune_multitask(
    mut weights: ModelWeights,
    labeled: &[TweetRecord],
    vocab: &Vocabulary,
    train_cfg: &TrainConfig,
    dev: Option<&[TweetRecord]>,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if let Some(r) = labeled.iter().find(|r| r.sentiment.is_none()) {
        return Err(Error::Contract(format!("record {} has no sentiment label", r.id)));
    }
    if labeled.is_empty() {
        return Err(Error::Contract("fine-tuning corpus is empty".into()));
    }
    weights.set_frozen(&train_cfg.freeze_groups);
    let cfg = weights.config().clone();
    let mut encoded = Vec::with_capacity(labeled.len());
    for r in labeled {
        let e = encode(&r.tokens, vocab, cfg.max_len);
        let n = e.real_len();
        let tags = align_tags(&r.tags, r.tokens.len(), cfg.max_len)?;
        encoded.push((
            e.ids[..n].to_vec(),
            e.attention_mask[..n].to_vec(),
            tags[..n].to_vec(),
            r.sentiment.map(|s| s.id()),
        ));
    }
    let (ws, wl) = (train_cfg.sentiment_weight, train_cfg.langid_weight);
    let dropout_rate = cfg.dropout_rate;
    Loop::new(weights, train_cfg, Task::Multitask).run(
        encoded.len(),
        |g, bound, w, batch, rng| {
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let (ids, mask, tags, label) = &encoded[i];
                let mut dropout = Dropout::On { rate: dropout_rate, rng };
                let (s, l) = forward_multitask(g, bound, w.config(), ids, mask, &mut dropout)?;
                losses.push(multitask_loss(g, s, *label, l, tags, ws, wl)?);
            }
            let total = sum_vars(g, &losses)?;
            Ok(Some(g.scale(total, 1.0 / batch.len() as f64)?))
        },
        |w| match dev {
            Some(d) => Ok(Some(evaluate(w, d, vocab)?.macro_f1)),
            None => Ok(None),
        },
    )
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut iter = vars.iter().copied();
    let first = iter.next().ok_or_else(|| Error::Contract("nothing to sum".into()))?;
    iter.try_fold(first, |acc, v| g.add(acc, v))
}
