use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::config::{Task, TrainConfig};
use super::metrics::{ConfusionMatrix, Metrics};
use super::model::{Network, Sample};
use crate::data::{augment, LabeledCloud, Labels};
use crate::error::{Error, Result};
use crate::ops::{softmax, softmax_cross_entropy, FeatureMap, Mode};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    Points(Vec<usize>),
}

impl Target {
    pub fn of(cloud: &LabeledCloud, task: Task) -> Result<Target> {
        match (task, &cloud.labels) {
            (Task::Classification, Labels::Cloud(c)) => Ok(Target::Class(*c)),
            (Task::Segmentation, Labels::Points(l)) => Ok(Target::Points(l.clone())),
            (task, _) => Err(Error::invalid(format!("cloud labels do not fit a {task} task"))),
        }
    }

    fn rows(&self, rows: usize) -> Vec<usize> {
        match self {
            Target::Class(c) => vec![*c; rows],
            Target::Points(l) => l.clone(),
        }
    }
}

/// Mean over samples of each sample's mean cross-entropy, with logit
/// gradients scaled accordingly.
pub fn loss_and_grad(logits: &[FeatureMap], targets: &[Target]) -> Result<(f64, Vec<FeatureMap>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::invalid(format!(
            "{} logit maps for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let b = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, t) in logits.iter().zip(targets) {
        let (loss, mut g) = softmax_cross_entropy(l, &t.rows(l.rows()))?;
        g.scale(1.0 / b);
        total += loss;
        grads.push(g);
    }
    Ok((total / b, grads))
}

/// Row-wise argmax; the lowest index wins ties.
pub fn argmax_rows(logits: &FeatureMap) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn tally(confusion: &mut ConfusionMatrix, logits: &FeatureMap, target: &Target) {
    for (p, t) in argmax_rows(logits).into_iter().zip(target.rows(logits.rows())) {
        confusion.add(t, p);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// `epoch,loss,oa,macc,miou` rows.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,loss,oa,macc,miou\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.10},{:.10},{:.10},{:.10}",
                e.epoch, e.loss, e.metrics.overall_accuracy, e.metrics.mean_accuracy, e.metrics.mean_iou
            );
        }
        s
    }
}

/// Train with Adam. Per-epoch metrics come from `eval` when given, otherwise
/// from the training-mode predictions of that epoch. Training stops early when
/// `on_epoch` breaks.
///
/// With augmentation on, every sample is re-augmented and its pyramid rebuilt
/// each epoch; otherwise pyramids are built once.
pub fn train(
    net: &mut Network,
    train_set: &[LabeledCloud],
    eval: Option<&[LabeledCloud]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let task = net.config().task;
    let classes = net.config().classes;
    let targets: Vec<Target> = train_set.iter().map(|c| Target::of(c, task)).collect::<Result<_>>()?;
    net.set_dropout(cfg.dropout);
    let mut adam = Adam::from_config(cfg);
    let cached: Option<Vec<Sample>> = match cfg.augment {
        Some(_) => None,
        None => Some(
            train_set
                .par_iter()
                .enumerate()
                .map(|(i, c)| Sample::from_cloud(c, net.config(), derive_seed(cfg.seed, &[u64::MAX, i as u64])))
                .collect::<Result<_>>()?,
        ),
    };
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 1])));
        let mut batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
        // A lone trailing sample would give batch norm a single row per channel.
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let tail = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(tail);
        }
        adam.learning_rate = cfg.rate_at(epoch);
        let mut confusion = ConfusionMatrix::new(classes);
        let mut loss_sum = 0.0;
        for batch in &batches {
            let (samples, batch_targets): (Vec<Sample>, Vec<Target>) = match (&cached, &cfg.augment) {
                (Some(cache), _) => batch.iter().map(|&i| (cache[i].clone(), targets[i].clone())).unzip(),
                (None, Some(aug)) => batch
                    .par_iter()
                    .map(|&i| {
                        let e = epoch as u64;
                        let a = augment(&train_set[i], aug, derive_seed(cfg.seed, &[e, i as u64, 2]))?;
                        let s = Sample::from_cloud(&a, net.config(), derive_seed(cfg.seed, &[e, i as u64, 3]))?;
                        Ok((s, Target::of(&a, task)?))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip(),
                (None, None) => unreachable!("cache exists without augmentation"),
            };
            let logits = net.forward(&samples, Mode::Training)?;
            let (loss, grad) = loss_and_grad(&logits, &batch_targets)?;
            if !loss.is_finite() {
                net.clear_tape();
                return Err(Error::invalid(format!("loss diverged at epoch {}", epoch + 1)));
            }
            let grads = net.backward(&grad)?;
            adam.step(net, &grads)?;
            loss_sum += loss * batch.len() as f64;
            for (l, t) in logits.iter().zip(&batch_targets) {
                tally(&mut confusion, l, t);
            }
        }
        let metrics = match eval {
            Some(set) => evaluate(net, set, cfg.seed)?.metrics,
            None => confusion.metrics(),
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            learning_rate: adam.learning_rate,
            metrics,
        };
        let flow = on_epoch(&record);
        log.epochs.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub loss: f64,
    /// Per cloud: one label (classification) or one per point.
    pub predictions: Vec<Vec<usize>>,
}

const EVAL_BATCH: usize = 16;

/// Inference over every cloud. Clouds larger than the network's nominal input
/// are covered by repeated random subsets until every point is predicted;
/// per-point class probabilities are averaged over the subsets.
pub fn evaluate(net: &Network, data: &[LabeledCloud], seed: u64) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let task = net.config().task;
    let classes = net.config().classes;
    let nominal = net.config().pyramid.level_sizes[0];
    let targets: Vec<Target> = data.iter().map(|c| Target::of(c, task)).collect::<Result<_>>()?;

    // (cloud, point indices) jobs.
    let mut jobs: Vec<(usize, Vec<usize>)> = Vec::new();
    for (ci, c) in data.iter().enumerate() {
        let m = c.len();
        if m <= nominal {
            jobs.push((ci, (0..m).collect()));
            continue;
        }
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ci as u64, 0xe0])));
        for start in (0..m).step_by(nominal) {
            let mut idx: Vec<usize> = perm[start..(start + nominal).min(m)].to_vec();
            let mut k = 0;
            while idx.len() < nominal {
                idx.push(perm[k]);
                k += 1;
            }
            jobs.push((ci, idx));
        }
    }

    let mut probs: Vec<FeatureMap> = data
        .iter()
        .map(|c| match task {
            Task::Classification => FeatureMap::zeros(1, classes),
            Task::Segmentation => FeatureMap::zeros(c.len(), classes),
        })
        .collect();
    let mut hits: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.rows()]).collect();
    let mut loss_sum = 0.0;
    for (jb, chunk) in jobs.chunks(EVAL_BATCH).enumerate() {
        let built: Vec<(Sample, Target)> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, (ci, idx))| {
                let whole = idx.len() == data[*ci].len() && idx.iter().enumerate().all(|(a, &b)| a == b);
                let cloud = if whole { data[*ci].clone() } else { data[*ci].select(idx)? };
                let s = Sample::from_cloud(&cloud, net.config(), derive_seed(seed, &[(jb * EVAL_BATCH + k) as u64, 0xe1]))?;
                Ok((s, Target::of(&cloud, task)?))
            })
            .collect::<Result<_>>()?;
        let (samples, ts): (Vec<Sample>, Vec<Target>) = built.into_iter().unzip();
        let logits = net.predict(&samples)?;
        let (loss, _) = loss_and_grad(&logits, &ts)?;
        loss_sum += loss * chunk.len() as f64;
        for ((ci, idx), l) in chunk.iter().zip(&logits) {
            let p = softmax(l);
            match task {
                Task::Classification => {
                    for (a, v) in probs[*ci].row_mut(0).iter_mut().zip(p.row(0)) {
                        *a += v;
                    }
                    hits[*ci][0] += 1.0;
                }
                Task::Segmentation => {
                    for (r, &pt) in idx.iter().enumerate() {
                        for (a, v) in probs[*ci].row_mut(pt).iter_mut().zip(p.row(r)) {
                            *a += v;
                        }
                        hits[*ci][pt] += 1.0;
                    }
                }
            }
        }
    }

    let mut confusion = ConfusionMatrix::new(classes);
    let mut predictions = Vec::with_capacity(data.len());
    for (ci, p) in probs.iter().enumerate() {
        debug_assert!(hits[ci].iter().all(|&h| h > 0.0));
        tally(&mut confusion, p, &targets[ci]);
        predictions.push(argmax_rows(p));
    }
    Ok(Evaluation {
        metrics: confusion.metrics(),
        confusion,
        loss: loss_sum / jobs.len() as f64,
        predictions,
    })
}
