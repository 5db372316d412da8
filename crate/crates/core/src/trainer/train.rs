//! Joint training loop.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{RunConfig, Variant};
use super::model::{Model, ModelConfig, ITEM_TABLE};
use crate::buckets::{draw_uniform_negatives, init_buckets, BucketCensus, BucketState};
use crate::corpus::{chronological_split, load_attributes, load_sequences, Attributes, Corpus, ItemId, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSplit, RankReport, DEFAULT_KS};
use crate::girg::{build_girg, WeightedGraph};
use crate::interest::{fuse_interests, score_pair};
use crate::numerics::{adam_step, AdamConfig, Checkpoint, Gradients, NumericError, Tape};
use crate::objective::{bce_loss, info_nce_loss, total_loss};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::views::{sample_view, sample_view_pair};

/// Stream tags for the seeded generators.
const INIT: u64 = 0;
const BUCKETS: u64 = 1;
const SHUFFLE: u64 = 2;
const PRED: u64 = 3;
const CONTRAST: u64 = 4;

/// Corpus, split and graph shared by training and evaluation.
pub struct Prepared<T> {
    pub corpus: Corpus,
    pub attributes: Attributes,
    pub split: Split,
    pub graph: WeightedGraph<T>,
}

pub fn prepare<T: Scalar>(config: &RunConfig) -> Result<Prepared<T>> {
    let path = config
        .sequences
        .as_deref()
        .ok_or_else(|| Error::Config("`sequences` path is required".into()))?;
    let corpus = load_sequences(path)?;
    let attributes = match &config.attributes {
        Some(p) => load_attributes(p, &corpus)?,
        None => Attributes::all_unknown(corpus.num_items()),
    };
    prepare_from(config, corpus, attributes)
}

pub fn prepare_from<T: Scalar>(config: &RunConfig, corpus: Corpus, attributes: Attributes) -> Result<Prepared<T>> {
    let split = chronological_split(&corpus, config.split)?;
    if split.users.is_empty() {
        return Err(Error::Config("no user has enough interactions to split".into()));
    }
    let graph = build_girg(&split.train, corpus.num_items(), &config.effective_girg());
    Ok(Prepared {
        corpus,
        attributes,
        split,
        graph,
    })
}

pub fn model_config(config: &RunConfig, corpus: &Corpus) -> ModelConfig {
    ModelConfig {
        num_items: corpus.num_items(),
        num_users: corpus.num_users(),
        seq: config.seq,
        graph: config.graph,
        capsules: config.capsules,
        init_std: config.init_std,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub pred_loss: f64,
    pub cl_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub batches: usize,
    pub buckets: BucketCensus,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ndcg10: Option<f64>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch log serializes")
    }
}

pub struct Trained<T> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    pub config: RunConfig,
}

impl<T: Scalar> Trained<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        self.model.to_checkpoint(self.config.to_text())
    }

    pub fn evaluate(&self, prepared: &Prepared<T>, which: EvalSplit) -> Result<RankReport> {
        evaluate(&self.model, &prepared.split, which, &DEFAULT_KS, self.config.deterministic)
    }
}

/// Turns a non-finite intermediate into a divergence at the given step.
fn at_step(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(NumericError::NonFinite { .. }) => Error::Divergence { epoch, batch },
        other => other,
    }
}

fn numeric_at(e: NumericError, epoch: usize, batch: usize) -> Error {
    at_step(Error::Numeric(e), epoch, batch)
}

/// `n` items uniformly from those not yet in the history and not the target.
fn unobserved<R: Rng + ?Sized>(num_items: usize, seen: &BTreeSet<ItemId>, target: ItemId, n: usize, rng: &mut R) -> Vec<ItemId> {
    let all_seen = seen.iter().filter(|&&v| v != target).count() + 1 >= num_items;
    (0..n)
        .map(|_| loop {
            let v = ItemId(rng.random_range(1..=num_items as u32));
            if v != target && (all_seen || !seen.contains(&v)) {
                break v;
            }
        })
        .collect()
}

struct Step<T> {
    grads: Gradients<T>,
    loss: f64,
}

fn map_ordered<I: Sync, O: Send>(items: &[I], serial: bool, f: impl Fn(usize, &I) -> Result<O> + Sync) -> Result<Vec<O>> {
    if serial {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    } else {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

struct Batch<'a> {
    epoch: usize,
    index: usize,
    events: &'a [(usize, usize)],
}

struct Trainer<'a, T> {
    config: &'a RunConfig,
    prepared: &'a Prepared<T>,
    seed: u64,
}

impl<T: Scalar> Trainer<'_, T> {
    fn prediction_step(&self, model: &Model<T>, batch: &Batch, i: usize, &(k, t): &(usize, usize)) -> Result<Step<T>> {
        let split = &self.prepared.split;
        let mut rng = stream(self.seed, &[PRED, batch.epoch as u64, batch.index as u64, i as u64]);
        let target = split.train[k][t];
        let num_items = self.prepared.corpus.num_items();
        let mut items = vec![target];
        let history: BTreeSet<ItemId> = split.train[k][..t].iter().copied().collect();
        items.extend(unobserved(num_items, &history, target, self.config.pred_neg, &mut rng));
        let labels: Vec<bool> = (0..items.len()).map(|j| j == 0).collect();

        let mut tape = Tape::new();
        let state = model.encode_user(&mut tape, split.users[k], &split.train[k][..t])?;
        let table = tape.param(&model.store, ITEM_TABLE)?;
        let rows: Vec<usize> = items.iter().map(|v| v.index()).collect();
        let targets = tape.select_rows(table, &rows)?;
        let fused = fuse_interests(&mut tape, &state.interests, targets, state.user)?;
        let scored = score_pair(&mut tape, fused.q, targets)?;
        let bce = bce_loss(&mut tape, scored.prob, &labels)?;
        let weight = self.config.loss.theta1 / batch.events.len() as f64;
        let scaled = tape.scale_const(bce, T::lit(weight))?;
        Ok(Step {
            grads: tape.backward(scaled, &model.store)?,
            loss: tape.value(bce).item().as_f64(),
        })
    }

    fn contrastive_step(
        &self,
        model: &Model<T>,
        buckets: &BucketState<T>,
        batch: &Batch,
        j: usize,
        anchor: ItemId,
        anchors: usize,
    ) -> Result<Step<T>> {
        let graph = &self.prepared.graph;
        let depth = self.config.depth;
        let mut rng = stream(self.seed, &[CONTRAST, batch.epoch as u64, batch.index as u64, j as u64]);
        let (v1, v2) = sample_view_pair(graph, anchor, depth, &mut rng)?;
        let negatives = match self.config.variant {
            Variant::RandomNegatives => {
                draw_uniform_negatives(self.prepared.corpus.num_items(), anchor, self.config.n_neg, &mut rng)?
            }
            _ => buckets.draw_negatives(anchor, &mut rng)?,
        };
        let mut tape = Tape::new();
        let e1 = model.embed_view(&mut tape, &v1)?.anchor;
        let e2 = model.embed_view(&mut tape, &v2)?.anchor;
        let mut neg_rows = Vec::with_capacity(negatives.len());
        for &n in &negatives {
            let view = sample_view(graph, n, depth, &mut rng)?;
            neg_rows.push(model.embed_view(&mut tape, &view)?.anchor);
        }
        let negs = tape.concat_rows(&neg_rows)?;
        let loss = info_nce_loss(
            &mut tape,
            e1,
            e2,
            negs,
            self.config.loss.tau,
            self.config.contrastive_form,
            anchor.0,
        )?;
        let weight = self.config.loss.theta2 / anchors as f64;
        let scaled = tape.scale_const(loss, T::lit(weight))?;
        Ok(Step {
            grads: tape.backward(scaled, &model.store)?,
            loss: tape.value(loss).item().as_f64(),
        })
    }
}

#[derive(Default)]
struct Totals {
    pred: f64,
    cl: f64,
    reg: f64,
    total: f64,
}

/// Trains on the train split of `prepared`. `on_epoch` sees every log line
/// as soon as the epoch finishes.
pub fn train<T: Scalar>(
    config: &RunConfig,
    prepared: &Prepared<T>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained<T>> {
    config.validate()?;
    let seed = config.seed()?;
    let weights = config.effective_loss();
    let serial = config.deterministic;
    let split = &prepared.split;
    let num_items = prepared.corpus.num_items();
    if num_items < 2 {
        return Err(Error::Config("training needs at least two items".into()));
    }

    let mut model = Model::<T>::init(model_config(config, &prepared.corpus), &mut stream(seed, &[INIT]))?;
    let mut buckets = init_buckets::<T>(&prepared.attributes, config.buckets, config.lambda, config.n_neg);
    buckets.rule = config.assign_rule;
    let adam = AdamConfig::with_lr(config.lr);
    let trainer = Trainer {
        config,
        prepared,
        seed,
    };

    let mut events: Vec<(usize, usize)> = Vec::new();
    for (k, seq) in split.train.iter().enumerate() {
        events.extend((1..seq.len()).map(|t| (k, t)));
    }
    if events.is_empty() {
        return Err(Error::Config("the train split has no next-item events".into()));
    }

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, crate::numerics::ParamStore<T>)> = None;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let census = buckets.refresh(model.item_table(), &mut stream(seed, &[BUCKETS, epoch as u64]));
        let mut order = events.clone();
        order.shuffle(&mut stream(seed, &[SHUFFLE, epoch as u64]));

        let mut sums = Totals::default();
        let batches: Vec<&[(usize, usize)]> = order.chunks(config.batch_size).collect();
        for (index, chunk) in batches.iter().enumerate() {
            let batch = Batch {
                epoch,
                index,
                events: chunk,
            };
            let fail = |e: Error| at_step(e, epoch, index);
            let pred_steps = map_ordered(chunk, serial, |i, ev| trainer.prediction_step(&model, &batch, i, ev))
                .map_err(fail)?;

            let mut anchors: Vec<ItemId> = Vec::new();
            if weights.theta2 > 0.0 {
                let mut seen = BTreeSet::new();
                for &(k, t) in chunk.iter() {
                    let item = split.train[k][t];
                    if anchors.len() < config.cl_anchors && seen.insert(item) {
                        anchors.push(item);
                    }
                }
            }
            let count = anchors.len();
            let cl_steps = map_ordered(&anchors, serial, |j, &a| {
                trainer.contrastive_step(&model, &buckets, &batch, j, a, count)
            })
            .map_err(fail)?;

            let pred = pred_steps.iter().map(|s| s.loss).sum::<f64>() / pred_steps.len() as f64;
            let cl = if cl_steps.is_empty() {
                0.0
            } else {
                cl_steps.iter().map(|s| s.loss).sum::<f64>() / cl_steps.len() as f64
            };

            let reg = weights.theta3 * model.store.squared_norm().as_f64();
            // Constants for the data terms; only the penalty is differentiated here.
            let mut tape = Tape::new();
            let pred_c = tape.scalar(T::lit(pred)).map_err(|e| numeric_at(e, epoch, index))?;
            let cl_c = tape.scalar(T::lit(cl)).map_err(|e| numeric_at(e, epoch, index))?;
            let total = total_loss(&mut tape, pred_c, Some(cl_c), &weights, &model.store)
                .map_err(|e| numeric_at(e, epoch, index))?;
            let mut grads = tape
                .backward(total, &model.store)
                .map_err(|e| numeric_at(e, epoch, index))?;
            for s in pred_steps.iter().chain(&cl_steps) {
                grads.accumulate(&s.grads);
            }
            let total = tape.value(total).item().as_f64();
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch: index });
            }
            adam_step(&mut model.store, &grads, &adam).map_err(|e| numeric_at(e, epoch, index))?;
            if !model.store.iter().all(|(_, t)| t.is_finite()) {
                return Err(Error::Divergence { epoch, batch: index });
            }

            sums.pred += pred;
            sums.cl += cl;
            sums.total += total;
            sums.reg += reg;
        }

        let n = batches.len() as f64;
        let mut entry = EpochLog {
            epoch,
            pred_loss: sums.pred / n,
            cl_loss: sums.cl / n,
            reg_loss: sums.reg / n,
            total_loss: sums.total / n,
            batches: batches.len(),
            buckets: census,
            seconds: started.elapsed().as_secs_f64(),
            val_ndcg10: None,
        };
        let mut stop = false;
        if config.patience > 0 {
            let report = evaluate(&model, split, EvalSplit::Validation, &DEFAULT_KS, serial)?;
            let ndcg = report.metric(10).map_or(0.0, |m| m.ndcg);
            entry.val_ndcg10 = Some(ndcg);
            if best.as_ref().is_none_or(|(b, _)| ndcg > *b) {
                best = Some((ndcg, model.store.clone()));
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= config.patience;
            }
        }
        log::info!(
            "epoch {epoch}: pred {:.5} cl {:.5} total {:.5}",
            entry.pred_loss,
            entry.cl_loss,
            entry.total_loss
        );
        on_epoch(&entry);
        log.push(entry);
        if stop {
            break;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(Trained {
        model,
        log,
        config: config.clone(),
    })
}

/// Loads a checkpoint written by training, rebuilding data from the
/// configuration stored inside it.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(RunConfig, Prepared<T>, Model<T>)> {
    let checkpoint = Checkpoint::<T>::load(path)?;
    let config = RunConfig::from_text(&checkpoint.metadata)
        .map_err(|e| Error::Checkpoint(format!("embedded configuration: {e}")))?;
    let prepared = prepare::<T>(&config)?;
    let model = Model::from_checkpoint(model_config(&config, &prepared.corpus), &checkpoint)?;
    Ok((config, prepared, model))
}

pub fn evaluate_checkpoint<T: Scalar>(path: &Path, which: EvalSplit) -> Result<RankReport> {
    let (config, prepared, model) = load_checkpoint::<T>(path)?;
    evaluate(&model, &prepared.split, which, &DEFAULT_KS, config.deterministic)
}
