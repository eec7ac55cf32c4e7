use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{
    backward, describe, forward_edge_map, Descriptor, ForwardCache, Gradients, NetworkWeights,
};
use crate::rng::substream;
use crate::training::dataset::TrainingSet;
use crate::training::loss::contrastive_loss;
use crate::training::mining::mine_hard_negatives;
use crate::training::sgd::{lr_schedule, Sgd};
use crate::training::tuple::{Augmentation, TrainingItem, TrainingTuple, NEGATIVES_PER_TUPLE};
use crate::training::TrainConfig;

/// Per-epoch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean pair loss over the epoch's batches, each measured just before
    /// its update.
    pub train_loss: f64,
    /// Mean pair loss on the validation tuples after the epoch.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (lowest validation loss, earliest on ties).
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub history: History,
}

/// Summed loss, pair count and summed gradients of one tuple's six pairs.
/// Pairs whose descriptor is degenerate are skipped; a degenerate query
/// skips the whole tuple (`None`).
pub fn tuple_gradients(
    weights: &NetworkWeights,
    tuple: &TrainingTuple,
    margin: f64,
) -> Result<Option<(f64, usize, Gradients)>> {
    let Some((q, q_cache)) = forward_or_skip(weights, &tuple.query)? else {
        return Ok(None);
    };
    let others =
        std::iter::once((&tuple.positive, true)).chain(tuple.negatives.iter().map(|n| (n, false)));
    let mut grads = Gradients::zeros_like(weights);
    let mut grad_q = vec![0.0; q.dim()];
    let mut loss = 0.0;
    let mut pairs = 0;
    for (item, positive) in others {
        let Some((d, cache)) = forward_or_skip(weights, item)? else {
            continue;
        };
        let l = contrastive_loss(&q, &d, positive, margin);
        loss += l.loss;
        pairs += 1;
        for (a, b) in grad_q.iter_mut().zip(&l.grad_x) {
            *a += b;
        }
        grads.add_assign(&backward(weights, &cache, &l.grad_y)?);
    }
    grads.add_assign(&backward(weights, &q_cache, &grad_q)?);
    Ok(Some((loss, pairs, grads)))
}

fn forward_or_skip(
    weights: &NetworkWeights,
    item: &TrainingItem,
) -> Result<Option<(Descriptor, ForwardCache)>> {
    match forward_edge_map(weights, &item.map) {
        Ok(out) => Ok(Some(out)),
        Err(Error::ZeroDescriptor(_)) => {
            log::warn!("skipping `{}`: all-zero descriptor", item.id);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn describe_or_skip(weights: &NetworkWeights, item: &TrainingItem) -> Result<Option<Descriptor>> {
    match describe(weights, &item.map) {
        Ok(d) => Ok(Some(d)),
        Err(Error::ZeroDescriptor(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean contrastive loss over every non-degenerate pair of `tuples`.
pub fn mean_tuple_loss(
    weights: &NetworkWeights,
    tuples: &[TrainingTuple],
    margin: f64,
) -> Result<f64> {
    let per_tuple: Vec<Result<(f64, usize)>> = tuples
        .par_iter()
        .map(|t| {
            let Some(q) = describe_or_skip(weights, &t.query)? else {
                return Ok((0.0, 0));
            };
            let mut sum = 0.0;
            let mut n = 0;
            let others =
                std::iter::once((&t.positive, true)).chain(t.negatives.iter().map(|x| (x, false)));
            for (item, positive) in others {
                if let Some(d) = describe_or_skip(weights, item)? {
                    sum += contrastive_loss(&q, &d, positive, margin).loss;
                    n += 1;
                }
            }
            Ok((sum, n))
        })
        .collect();
    let (mut sum, mut n) = (0.0, 0);
    for r in per_tuple {
        let (s, k) = r?;
        sum += s;
        n += k;
    }
    if n == 0 {
        return Err(Error::Input("no scorable pairs among the tuples".into()));
    }
    Ok(sum / n as f64)
}

/// Batch indices at which negatives are re-mined: `floor(r * nb / rounds)`.
fn mining_points(batches: usize, rounds: usize) -> Vec<usize> {
    let mut pts: Vec<usize> = (0..rounds).map(|r| r * batches / rounds).collect();
    pts.dedup();
    pts
}

/// Train from `initial` weights and return the snapshot with the lowest
/// validation loss together with the per-epoch history.
///
/// Every random choice (tuple order, augmentation) comes from a substream of
/// `cfg.seed`, and all parallel work is reduced in a fixed order, so equal
/// inputs give bit-identical results regardless of thread count.
pub fn train(
    initial: NetworkWeights,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.anchors.is_empty() || data.validation.is_empty() {
        return Err(Error::Input(
            "training needs anchors and validation tuples".into(),
        ));
    }
    if let Some(item) = data
        .maps()
        .find(|it| it.map.max_side() != cfg.train_max_side)
    {
        return Err(Error::Input(format!(
            "item `{}` has max side {}, expected {}",
            item.id,
            item.map.max_side(),
            cfg.train_max_side
        )));
    }
    let mut weights = initial;
    let mut sgd = Sgd::new(&weights);
    let n = data.anchors.len();
    let batches = n.div_ceil(cfg.batch);
    let points = mining_points(batches, cfg.mining_per_epoch);

    let mut records = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, NetworkWeights)> = None;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(cfg.seed, &format!("shuffle/{epoch}")));
        let mut aug_rng = substream(cfg.seed, &format!("augment/{epoch}"));
        let augmented: Vec<(Arc<TrainingItem>, Arc<TrainingItem>)> = data
            .anchors
            .iter()
            .map(|a| {
                let aug = Augmentation::draw(&mut aug_rng);
                if aug == Augmentation::NONE {
                    (a.query.clone(), a.positive.clone())
                } else {
                    let (q, p) = aug.apply(&a.query, &a.positive);
                    (Arc::new(q), Arc::new(p))
                }
            })
            .collect();

        let mut negatives: Vec<Option<Vec<usize>>> = vec![None; n];
        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        let chunks: Vec<&[usize]> = order.chunks(cfg.batch).collect();
        for (b, chunk) in chunks.iter().enumerate() {
            if let Some(r) = points.iter().position(|&p| p == b) {
                let end = points.get(r + 1).copied().unwrap_or(batches);
                let upcoming: Vec<usize> = chunks[b..end]
                    .iter()
                    .flat_map(|c| c.iter().copied())
                    .collect();
                let queries: Vec<Arc<TrainingItem>> =
                    upcoming.iter().map(|&i| augmented[i].0.clone()).collect();
                let mined =
                    mine_hard_negatives(&weights, &queries, &data.pool, NEGATIVES_PER_TUPLE)?;
                for (i, m) in upcoming.into_iter().zip(mined) {
                    negatives[i] = m;
                }
            }
            let tuples: Vec<TrainingTuple> = chunk
                .iter()
                .filter_map(|&i| {
                    let negs = negatives[i].as_ref()?;
                    Some(TrainingTuple {
                        query: augmented[i].0.clone(),
                        positive: augmented[i].1.clone(),
                        negatives: negs.iter().map(|&k| data.pool[k].clone()).collect(),
                    })
                })
                .collect();
            let results: Vec<Result<Option<(f64, usize, Gradients)>>> = tuples
                .par_iter()
                .map(|t| tuple_gradients(&weights, t, cfg.margin))
                .collect();
            let mut total = Gradients::zeros_like(&weights);
            let mut batch_pairs = 0;
            for r in results {
                if let Some((l, k, g)) = r? {
                    loss_sum += l;
                    batch_pairs += k;
                    total.add_assign(&g);
                }
            }
            if batch_pairs == 0 {
                log::warn!("epoch {epoch} batch {b}: no usable pairs");
                continue;
            }
            pair_count += batch_pairs;
            total.scale(1.0 / batch_pairs as f64);
            sgd.step(&mut weights, &total, cfg, epoch)?;
        }
        if pair_count == 0 {
            return Err(Error::Input(format!(
                "epoch {epoch} produced no usable pairs"
            )));
        }
        let val_loss = mean_tuple_loss(&weights, &data.validation, cfg.margin)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / pair_count as f64,
            val_loss,
            lr: lr_schedule(epoch, cfg),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} lr {:.3e}",
            record.train_loss,
            record.val_loss,
            record.lr
        );
        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, weights.clone()));
        }
        records.push(record);
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        weights,
        history: History {
            epochs: records,
            best_epoch,
        },
    })
}

/// `epoch,train_loss,val_loss,lr` with a header row, preceded by a
/// `# config_hash=` comment when a hash is given.
pub fn write_history_csv<W: Write>(
    history: &History,
    config_hash: Option<u64>,
    mut sink: W,
) -> std::io::Result<()> {
    if let Some(h) = config_hash {
        writeln!(sink, "# config_hash={h:016x}")?;
    }
    writeln!(sink, "epoch,train_loss,val_loss,lr")?;
    for r in &history.epochs {
        writeln!(sink, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr)?;
    }
    Ok(())
}
