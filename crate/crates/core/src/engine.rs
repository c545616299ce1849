//! Shared fine-tuning loop behind FINEST and the comparator baselines.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataio::{build_instances, Dataset, Instance, InstanceId, SplitConfig};
use crate::error::{Error, Result};
use crate::finest::{hinge_terms, Normalization, ReferenceStore};
use crate::models::train::{batch_rng, cross_entropy, user_batches};
use crate::models::{group_by_user, SequenceGroup, SequentialModel, UserGroups};
use crate::optim::Adam;
use crate::perturbation::{sample_pseudo_perturbation_with, Pool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneEpoch {
    pub epoch: usize,
    pub ce_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub n_edits: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FineTuneLog {
    pub epochs: Vec<FineTuneEpoch>,
}

impl FineTuneLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Simulation {
    pub ratio: f64,
    pub pool: Pool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Regularizer<'a> {
    pub store: &'a ReferenceStore,
    pub lambda: f64,
    pub margin_first: f64,
    pub margin_second: f64,
    pub use_first: bool,
    pub use_second: bool,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EnginePlan<'a> {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub simulation: Option<Simulation>,
    pub regularizer: Option<Regularizer<'a>>,
    pub input_noise: Option<f64>,
}

fn by_user(groups: Vec<UserGroups>) -> HashMap<u32, UserGroups> {
    groups.into_iter().map(|g| (g.user, g)).collect()
}

/// Fast-gradient sign noise on the input embeddings of `groups`.
pub(crate) fn sign_noise(
    model: &SequentialModel,
    groups: &[&SequenceGroup],
    scale: f64,
    epsilon: f64,
) -> Vec<Vec<f64>> {
    let mut scratch = vec![0.0; model.n_params()];
    let mut dx = Vec::new();
    model.accumulate(groups, None, &mut scratch, Some(&mut dx), |o, s, ds| {
        cross_entropy(s, o.target, scale, ds)
    });
    dx.into_iter()
        .map(|g| {
            g.into_iter()
                .map(|v| {
                    if v > 0.0 {
                        epsilon
                    } else if v < 0.0 {
                        -epsilon
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub(crate) fn run_engine(
    base: &SequentialModel,
    train: &Dataset,
    plan: &EnginePlan<'_>,
) -> Result<(SequentialModel, FineTuneLog)> {
    let mut model = base.clone();
    let mut log = FineTuneLog::default();
    if plan.epochs == 0 {
        return Ok((model, log));
    }
    if plan.batch_size == 0 || !(plan.learning_rate > 0.0) {
        return Err(Error::Config(
            "fine-tuning needs batch_size >= 1 and learning_rate > 0".into(),
        ));
    }
    let l = base.config().max_seq_len;
    let split = SplitConfig {
        max_seq_len: l,
        ..SplitConfig::default()
    };
    let original = build_instances(train, &split);
    if original.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reg = plan
        .regularizer
        .filter(|r| r.lambda > 0.0 && (r.use_first || r.use_second));
    let original_refs: Vec<&[u32]> = match reg {
        Some(r) => original
            .iter()
            .map(|i| r.store.get(i.id))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let users: Vec<u32> = train.user_ids().collect();
    let mut opt = Adam::new(model.n_params(), plan.learning_rate);
    let mut order_rng = batch_rng(plan.seed, 2);
    let mut sim_rng = batch_rng(plan.seed, 3);
    let mut grad = vec![0.0; model.n_params()];

    for epoch in 1..=plan.epochs {
        let (ce_instances, excluded, n_edits) = match plan.simulation {
            Some(s) => {
                let pp = sample_pseudo_perturbation_with(train, s.pool, s.ratio, &mut sim_rng, l)?;
                (
                    build_instances(&pp.dataset, &split),
                    pp.perturbed,
                    pp.plan.len(),
                )
            }
            None => (original.clone(), BTreeSet::<InstanceId>::new(), 0),
        };
        let ce_groups = by_user(group_by_user(&ce_instances, l));
        let (kept, kept_refs): (Vec<Instance>, Vec<&[u32]>) = match reg {
            Some(_) => original
                .iter()
                .zip(&original_refs)
                .filter(|(i, _)| !excluded.contains(&i.id))
                .map(|(i, r)| (i.clone(), *r))
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };
        let reg_groups = by_user(group_by_user(&kept, l));

        let batches = user_batches(users.len(), plan.batch_size, &mut order_rng);
        let (mut ce_sum, mut reg_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for b in &batches {
            grad.fill(0.0);
            let ce: Vec<&SequenceGroup> = b
                .iter()
                .filter_map(|u| ce_groups.get(&users[*u]))
                .flat_map(|g| g.groups.iter())
                .collect();
            let n_ce = ce.iter().map(|g| g.outputs.len()).sum::<usize>();
            if n_ce > 0 {
                let scale = 1.0 / n_ce as f64;
                let noise = plan
                    .input_noise
                    .filter(|&e| e > 0.0)
                    .map(|e| sign_noise(&model, &ce, scale, e));
                let loss = model.accumulate(&ce, noise.as_deref(), &mut grad, None, |o, s, ds| {
                    cross_entropy(s, o.target, scale, ds)
                });
                ce_sum += loss * scale;
            }
            if let Some(r) = reg {
                let rg: Vec<&SequenceGroup> = b
                    .iter()
                    .filter_map(|u| reg_groups.get(&users[*u]))
                    .flat_map(|g| g.groups.iter())
                    .collect();
                let n_reg = rg.iter().map(|g| g.outputs.len()).sum::<usize>();
                if n_reg > 0 {
                    let norm = match r.normalization {
                        Normalization::Mean => 1.0 / n_reg as f64,
                        Normalization::Sum => 1.0,
                    };
                    let k = r.store.k();
                    let loss = model.accumulate(&rg, None, &mut grad, None, |o, s, ds| {
                        hinge_terms(
                            s,
                            kept_refs[o.instance],
                            k,
                            (r.margin_first, r.margin_second),
                            (r.use_first, r.use_second),
                            r.lambda * norm,
                            Some(ds),
                        )
                    });
                    reg_sum += loss * norm;
                }
            }
            opt.step(model.parameters_mut(), &grad);
            n_batches += 1;
        }
        let nb = n_batches.max(1) as f64;
        let lambda = reg.map_or(0.0, |r| r.lambda);
        let rec = FineTuneEpoch {
            epoch,
            ce_loss: ce_sum / nb,
            reg_loss: reg_sum / nb,
            total_loss: (ce_sum + lambda * reg_sum) / nb,
            n_edits,
            n_excluded: excluded.len(),
        };
        if !rec.total_loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("fine-tuning loss {}", rec.total_loss),
            });
        }
        log::debug!(
            "fine-tune epoch {epoch}: ce {:.4} reg {:.4}",
            rec.ce_loss,
            rec.reg_loss
        );
        log.epochs.push(rec);
    }
    Ok((model, log))
}
