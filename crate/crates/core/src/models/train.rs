use std::collections::BTreeMap;

use rand::prelude::*;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::groups::{group_by_user, SequenceGroup, UserGroups};
use super::{ModelConfig, SequentialModel};
use crate::dataio::Instance;
use crate::error::{Error, Result};
use crate::metrics::target_rank;
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mrr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 means the initial ones).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Softmax cross-entropy against `target`, gradient scaled by `scale`.
pub(crate) fn cross_entropy(scores: &[f64], target: u32, scale: f64, dscores: &mut [f64]) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &s) in dscores.iter_mut().zip(scores) {
        *d = (s - m).exp();
        z += *d;
    }
    for d in dscores.iter_mut() {
        *d *= scale / z;
    }
    dscores[target as usize] -= scale;
    m + z.ln() - scores[target as usize]
}

/// Mean cross-entropy of the batch and its gradient.
pub fn loss_ce(model: &SequentialModel, batch: &[Instance]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("loss_ce needs a nonempty batch".into()));
    }
    let groups = SequenceGroup::build(batch, model.config().max_seq_len);
    let refs: Vec<&SequenceGroup> = groups.iter().collect();
    let mut grad = vec![0.0; model.n_params()];
    let scale = 1.0 / batch.len() as f64;
    let total = model.accumulate(&refs, None, &mut grad, None, |o, s, ds| {
        cross_entropy(s, o.target, scale, ds)
    });
    Ok((total * scale, grad))
}

/// Shuffled mini-batches of users, each a list of indices into `users`.
pub fn user_batches<R: Rng>(n_users: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Holds out the trailing `floor(frac * n_u)` instances of each user.
pub fn validation_split(instances: &[Instance], frac: f64) -> (Vec<Instance>, Vec<Instance>) {
    let mut by_user: BTreeMap<u32, Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        by_user.entry(inst.id.user).or_default().push(inst);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut list in by_user.into_values() {
        list.sort_by_key(|i| i.id.position);
        let n_val = ((frac * list.len() as f64) + 1e-9).floor() as usize;
        let cut = list.len() - n_val;
        train.extend(list[..cut].iter().map(|&i| i.clone()));
        val.extend(list[cut..].iter().map(|&i| i.clone()));
    }
    (train, val)
}

pub(crate) fn mean_reciprocal_rank(model: &SequentialModel, instances: &[Instance]) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    let groups = SequenceGroup::build(instances, model.config().max_seq_len);
    let rr: f64 = model
        .score_groups(&groups)
        .iter()
        .map(|(i, s)| 1.0 / target_rank(s, instances[*i].target) as f64)
        .sum();
    rr / instances.len() as f64
}

/// One pass of CE-only updates over user batches. Returns the mean batch loss.
pub(crate) fn ce_epoch<R: Rng>(
    model: &mut SequentialModel,
    users: &[UserGroups],
    batch_size: usize,
    opt: &mut Adam,
    rng: &mut R,
) -> f64 {
    let batches = user_batches(users.len(), batch_size, rng);
    let mut grad = vec![0.0; model.n_params()];
    let mut sum = 0.0;
    for b in &batches {
        let groups: Vec<&SequenceGroup> = b.iter().flat_map(|&u| users[u].groups.iter()).collect();
        let n: usize = b.iter().map(|&u| users[u].n_outputs).sum();
        let scale = 1.0 / n as f64;
        grad.fill(0.0);
        let loss = model.accumulate(&groups, None, &mut grad, None, |o, s, ds| {
            cross_entropy(s, o.target, scale, ds)
        });
        sum += loss * scale;
        opt.step(model.parameters_mut(), &grad);
    }
    sum / batches.len().max(1) as f64
}

pub(crate) fn batch_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mini-batch training on next-item cross-entropy with early stopping on
/// validation MRR. The best-scoring parameters are returned.
pub fn train_base(
    model: &SequentialModel,
    instances: &[Instance],
    cfg: &ModelConfig,
) -> Result<(SequentialModel, TrainLog)> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Config("train_base needs training instances".into()));
    }
    let (fit, val) = validation_split(instances, cfg.val_fraction);
    let users = group_by_user(&fit, model.config().max_seq_len);
    let mut model = model.clone();
    let mut opt = Adam::new(model.n_params(), cfg.learning_rate);
    let mut rng = batch_rng(cfg.seed, 1);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let loss = ce_epoch(&mut model, &users, cfg.batch_size, &mut opt, &mut rng);
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("training loss {loss}"),
            });
        }
        let val_mrr = (!val.is_empty()).then(|| mean_reciprocal_rank(&model, &val));
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_mrr,
        });
        let Some(mrr) = val_mrr else { continue };
        if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
            best = Some((mrr, model.parameters().to_vec()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((_, params)) => model.parameters_mut().copy_from_slice(&params),
        None => log.best_epoch = log.epochs.len(),
    }
    Ok((model, log))
}
