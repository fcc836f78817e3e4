//! Negative sampling, the logistic loss, exact gradients, optimisers and the
//! epoch loop.
//!
//! The loss of a batch is the mean of `softplus(y·s)` over every scored
//! triple, with `y = -1` for observed triples and `y = +1` for corruptions.

mod backprop;
mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FilterIndex, Triple};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalOptions, MetricReport, TieBreak};
use crate::geometry::clamp_events;
use crate::model::{softplus, Model};

pub use backprop::Gradients;
pub use optim::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Corrupted tails per observed triple.
    pub neg_samples: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Rescale the batch gradient to at most this global norm.
    pub grad_clip: Option<f64>,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Stop after this many validation rounds without a better MRR.
    pub patience: usize,
    pub threads: usize,
    pub tie_break: TieBreak,
    /// Seed of the validation tie-break draws.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 500,
            neg_samples: 50,
            lr: 0.05,
            optimizer: OptimizerKind::Adagrad,
            seed: 0,
            grad_clip: None,
            eval_every: 5,
            patience: 10,
            threads: 1,
            tie_break: TieBreak::Random,
            eval_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::domain(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.neg_samples == 0 {
            return bad("neg_samples must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Ranking settings used for validation.
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            tie_break: self.tie_break,
            seed: self.eval_seed,
            threads: self.threads,
        }
    }
}

/// Observed triples and their corrupted tails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub positives: Vec<Triple>,
    /// `neg_samples` tail ids per positive, concatenated.
    pub negatives: Vec<usize>,
    pub neg_samples: usize,
}

impl Batch {
    pub fn new(positives: Vec<Triple>, negatives: Vec<usize>, neg_samples: usize) -> Result<Self> {
        if neg_samples == 0 || negatives.len() != positives.len() * neg_samples {
            return Err(Error::domain(format!(
                "{} negatives do not match {} positives x {neg_samples}",
                negatives.len(),
                positives.len()
            )));
        }
        Ok(Batch {
            positives,
            negatives,
            neg_samples,
        })
    }

    pub fn negatives_of(&self, i: usize) -> &[usize] {
        &self.negatives[i * self.neg_samples..(i + 1) * self.neg_samples]
    }

    /// Number of scored triples the loss averages over.
    pub fn n_terms(&self) -> usize {
        self.positives.len() * (1 + self.neg_samples)
    }

    /// Draws `neg_samples` tails for every positive from `rng`.
    pub fn sample<R: Rng + ?Sized>(
        positives: Vec<Triple>,
        n_entities: usize,
        neg_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut negatives = Vec::with_capacity(positives.len() * neg_samples);
        for _ in &positives {
            negatives.extend(sample_negatives(n_entities, neg_samples, rng)?);
        }
        Batch::new(positives, negatives, neg_samples)
    }
}

/// `n` independent uniform entity ids. Only tails are corrupted; head
/// corruption comes from reciprocal triples. Draws equal to a true tail are
/// kept.
pub fn sample_negatives<R: Rng + ?Sized>(n_entities: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n_entities == 0 {
        return Err(Error::domain("cannot sample negatives from an empty entity set"));
    }
    Ok((0..n).map(|_| rng.random_range(0..n_entities)).collect())
}

/// Mean logistic loss of the batch, computed with [`Model::score`].
pub fn loss(model: &Model, batch: &Batch) -> Result<f64> {
    if batch.positives.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut total = 0.0;
    for (i, pos) in batch.positives.iter().enumerate() {
        let tails = std::iter::once((pos.tail, -1.0)).chain(batch.negatives_of(i).iter().map(|&t| (t, 1.0)));
        for (t, y) in tails {
            let s = model.score(pos.head, pos.relation, t)?;
            if !s.is_finite() {
                return Err(Error::numeric(
                    "score",
                    format!("score {s} for batch triple #{i} ({}, {}, {t})", pos.head, pos.relation),
                ));
            }
            total += softplus(y * s);
        }
    }
    Ok(total / batch.n_terms() as f64)
}

/// Gradient of [`loss`] w.r.t. every parameter, accumulated into `grads`
/// (which is cleared first). Returns the loss.
pub fn gradients(model: &Model, batch: &Batch, grads: &mut Gradients) -> Result<f64> {
    if batch.positives.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    grads.clear();
    let n = batch.n_terms() as f64;
    let total = backprop::accumulate(model, batch, 0..batch.positives.len(), 1.0 / n, grads)?;
    Ok(total / n)
}

/// As [`gradients`], with positives split into contiguous shards computed on
/// the current rayon pool and summed in shard order.
fn gradients_sharded(model: &Model, batch: &Batch, shards: &mut [Gradients], out: &mut Gradients) -> Result<f64> {
    let n_pos = batch.positives.len();
    let k = shards.len().min(n_pos).max(1);
    let chunk = n_pos.div_ceil(k);
    let n = batch.n_terms() as f64;
    let losses: Vec<Result<f64>> = shards[..k]
        .par_iter_mut()
        .enumerate()
        .map(|(s, g)| {
            g.clear();
            let range = (s * chunk).min(n_pos)..((s + 1) * chunk).min(n_pos);
            backprop::accumulate(model, batch, range, 1.0 / n, g)
        })
        .collect();
    out.clear();
    let mut total = 0.0;
    for (l, g) in losses.into_iter().zip(shards.iter()) {
        total += l?;
        out.merge(g);
    }
    Ok(total / n)
}

/// Caps the gradient's global norm at `max_norm`.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.norm_sq().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Validation metrics when this epoch was evaluated.
    pub metrics: Option<MetricReport>,
    /// Ball clamp events during the epoch.
    pub clamp_events: u64,
}

impl EpochRecord {
    pub fn split(&self) -> &'static str {
        if self.metrics.is_some() {
            "valid"
        } else {
            "train"
        }
    }
}

pub const LOG_HEADER: [&str; 8] = ["epoch", "split", "loss", "mrr", "h1", "h3", "h10", "clamp_events"];

/// Writes the log with header `epoch,split,loss,mrr,h1,h3,h10,clamp_events`;
/// metric columns are blank for unevaluated epochs.
pub fn write_log_csv(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOG_HEADER)?;
    for rec in log {
        let m = |f: fn(&MetricReport) -> f64| rec.metrics.as_ref().map_or(String::new(), |m| f(m).to_string());
        w.write_record([
            rec.epoch.to_string(),
            rec.split().to_owned(),
            rec.loss.to_string(),
            m(|m| m.mrr),
            m(|m| m.h1),
            m(|m| m.h3),
            m(|m| m.h10),
            rec.clamp_events.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Training and validation triples (reciprocals included) plus the filter.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Triple],
    pub valid: &'a [Triple],
    pub filter: &'a FilterIndex,
}

/// Callbacks fired during [`train`].
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }

    /// Called with the `f32`-rounded model whenever validation MRR improves.
    fn on_best(&mut self, _model: &Model, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validated model (rounded to `f32`), or the last model when
    /// nothing was validated.
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metrics: Option<MetricReport>,
    pub stopped_early: bool,
    /// Set when training stopped on a numerical failure.
    pub aborted: Option<String>,
}

/// Runs the epoch loop.
///
/// Each epoch shuffles the training triples, cuts them into batches, samples
/// negatives from one master stream and applies a sparse optimiser step per
/// batch. Validation runs on the `f32`-rounded model, so a checkpoint written
/// from `on_best` reproduces the logged metrics exactly.
pub fn train(
    mut model: Model,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() && cfg.epochs > 0 {
        return Err(Error::domain("empty training split"));
    }
    for t in data.train.iter().chain(data.valid) {
        model.check_entity(t.head)?;
        model.check_entity(t.tail)?;
        model.check_relation(t.relation)?;
    }
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::domain(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model);
    let mut grads = Gradients::zeros_like(&model);
    let mut shards: Vec<Gradients> = (0..if cfg.threads > 1 { cfg.threads } else { 0 })
        .map(|_| Gradients::zeros_like(&model))
        .collect();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let mut log = Vec::new();
    let mut best: Option<(Model, usize, MetricReport)> = None;
    let mut rounds_without_gain = 0;
    let mut stopped_early = false;
    let mut aborted = None;
    let mut last_good = model.clone();

    'epochs: for epoch in 1..=cfg.epochs {
        let clamps_before = clamp_events();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let positives = chunk.iter().map(|&i| data.train[i]).collect();
            let batch = Batch::sample(positives, model.n_entities(), cfg.neg_samples, &mut rng)?;
            let result = match &pool {
                Some(pool) => pool.install(|| gradients_sharded(&model, &batch, &mut shards, &mut grads)),
                None => gradients(&model, &batch, &mut grads),
            };
            let batch_loss = match result {
                Ok(l) if l.is_finite() => l,
                Ok(l) => {
                    aborted = Some(format!("epoch {epoch}: non-finite loss {l}"));
                    break 'epochs;
                }
                Err(e) => {
                    aborted = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
            };
            loss_sum += batch_loss * batch.positives.len() as f64;
            if let Some(c) = cfg.grad_clip {
                clip_gradients(&mut grads, c);
            }
            optimizer.step(&mut model, &grads);
        }
        let loss = loss_sum / data.train.len() as f64;

        let evaluate = !data.valid.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let mut snapshot = None;
        let metrics = if evaluate {
            let mut rounded = model.clone();
            rounded.round_to_f32();
            match evaluate_split(&rounded, data.valid, data.filter, &cfg.eval_options()) {
                Ok(m) => {
                    snapshot = Some(rounded);
                    Some(m)
                }
                Err(e) => {
                    aborted = Some(format!("epoch {epoch}: validation failed: {e}"));
                    break 'epochs;
                }
            }
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss,
            metrics,
            clamp_events: clamp_events() - clamps_before,
        };
        observer.on_epoch(&record)?;
        if let (Some(m), Some(snap)) = (metrics, snapshot) {
            if best.as_ref().is_none_or(|b| m.mrr > b.2.mrr) {
                observer.on_best(&snap, &record)?;
                best = Some((snap, epoch, m));
                rounds_without_gain = 0;
            } else {
                rounds_without_gain += 1;
            }
        }
        log.push(record);
        last_good = model.clone();
        if cfg.patience > 0 && rounds_without_gain >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (model, best_epoch, best_metrics) = match best {
        Some((m, e, r)) => (m, Some(e), Some(r)),
        None if aborted.is_some() => (last_good, None, None),
        None => (model, None, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_metrics,
        stopped_early,
        aborted,
    })
}
