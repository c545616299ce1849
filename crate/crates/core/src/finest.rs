//! FINEST: fine-tuning that keeps rank lists where the base model put them.
//!
//! References are the frozen base model's top-2K items per training
//! instance. Each epoch a fresh pseudo-perturbation of the training data
//! feeds the CE term, while a hinge regularizer holds the current model's
//! scores to the reference ordering on every instance the simulation left
//! untouched.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataio::{build_instances, Dataset, Instance, InstanceId, SplitConfig};
use crate::engine::{run_engine, EnginePlan, Regularizer, Simulation};
use crate::error::{Error, Result};
use crate::models::{rank, SequenceGroup, SequentialModel};
use crate::perturbation::Pool;

pub use crate::engine::{FineTuneEpoch, FineTuneLog};

/// How the per-batch regularizer sum is scaled before weighting by lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Mean,
    Sum,
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Normalization::Mean),
            "sum" => Ok(Normalization::Sum),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinestConfig {
    pub sampling_ratio: f64,
    /// K: the regularizer looks at the top 2K reference items.
    pub top_k: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub margin_first: f64,
    pub margin_second: f64,
    pub learning_rate: f64,
    /// Users per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub normalization: Normalization,
    /// Ablation switches.
    pub simulate: bool,
    pub use_first: bool,
    pub use_second: bool,
}

impl Default for FinestConfig {
    fn default() -> Self {
        Self {
            sampling_ratio: 0.01,
            top_k: 100,
            epochs: 50,
            lambda: 1.0,
            margin_first: 0.1,
            margin_second: 0.1,
            learning_rate: 0.001,
            batch_size: 32,
            seed: 0,
            normalization: Normalization::Mean,
            simulate: true,
            use_first: true,
            use_second: true,
        }
    }
}

impl FinestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.simulate && !(self.sampling_ratio > 0.0 && self.sampling_ratio < 1.0) {
            return bad("sampling_ratio must lie in (0, 1)");
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.margin_first >= 0.0 && self.margin_second >= 0.0) {
            return bad("lambda and margins must be nonnegative");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("batch_size must be >= 1 and learning_rate > 0");
        }
        Ok(())
    }
}

/// Top-2K items of the base model per training instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceStore {
    k: usize,
    lists: BTreeMap<InstanceId, Vec<u32>>,
}

impl ReferenceStore {
    /// Effective K after clamping to the catalog.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn get(&self, id: InstanceId) -> Result<&[u32]> {
        self.lists
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(Error::MissingReference {
                user: id.user,
                position: id.position,
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&InstanceId, &Vec<u32>)> {
        self.lists.iter()
    }
}

/// Runs the frozen base model over every instance and keeps its top 2K
/// items. K is clamped to half the catalog with a warning.
pub fn generate_references(
    base: &SequentialModel,
    instances: &[Instance],
    k: usize,
) -> Result<ReferenceStore> {
    let half = base.n_items() / 2;
    let k = if 2 * k > base.n_items() {
        log::warn!(
            "top_k {k} exceeds half the catalog ({}); clamped to {half}",
            base.n_items()
        );
        half
    } else {
        k
    };
    if k == 0 {
        return Err(Error::Config(
            "catalog too small for a reference list".into(),
        ));
    }
    let scores = base.score_instances(instances)?;
    let mut lists = BTreeMap::new();
    for (inst, s) in instances.iter().zip(scores) {
        lists.insert(inst.id, rank(&s)?.top(2 * k).to_vec());
    }
    Ok(ReferenceStore { k, lists })
}

/// The two hinge sums over one score vector. `scale` multiplies the
/// gradient written into `dscores`; the returned loss is unscaled.
pub(crate) fn hinge_terms(
    scores: &[f64],
    refs: &[u32],
    k: usize,
    (m1, m2): (f64, f64),
    (first, second): (bool, bool),
    scale: f64,
    mut dscores: Option<&mut [f64]>,
) -> f64 {
    let s = |j: usize| scores[refs[j] as usize];
    let mut loss = 0.0;
    let mut push = |hi: usize, lo: usize, margin: f64, ds: &mut Option<&mut [f64]>| {
        let v = s(lo) - s(hi) + margin;
        if v > 0.0 {
            loss += v;
            if let Some(ds) = ds.as_deref_mut() {
                ds[refs[lo] as usize] += scale;
                ds[refs[hi] as usize] -= scale;
            }
        }
    };
    if first {
        for j in 0..k.saturating_sub(1) {
            push(j, j + 1, m1, &mut dscores);
        }
    }
    if second {
        for j in 0..k {
            push(j, j + k, m2, &mut dscores);
        }
    }
    loss
}

/// The regularizer evaluated on a score vector, with K = `refs.len() / 2`.
pub fn reg_loss_scores(scores: &[f64], refs: &[u32], margin_first: f64, margin_second: f64) -> f64 {
    let k = refs.len() / 2;
    hinge_terms(
        scores,
        refs,
        k,
        (margin_first, margin_second),
        (true, true),
        1.0,
        None,
    )
}

fn check_refs(refs: &[u32], k: usize) -> Result<()> {
    if refs.len() < 2 * k {
        return Err(Error::ShortReferences {
            got: refs.len(),
            need: 2 * k,
        });
    }
    Ok(())
}

/// Regularizer for one instance and its gradient in parameter space.
/// `refs` must hold 2K items; K is `refs.len() / 2` when `k` is `None`.
pub fn reg_loss_instance(
    model: &SequentialModel,
    instance: &Instance,
    refs: &[u32],
    k: Option<usize>,
    margin_first: f64,
    margin_second: f64,
) -> Result<(f64, Vec<f64>)> {
    let k = k.unwrap_or(refs.len() / 2);
    check_refs(refs, k)?;
    let groups = SequenceGroup::build(std::slice::from_ref(instance), model.config().max_seq_len);
    let refs_ = &refs[..2 * k];
    let mut grad = vec![0.0; model.n_params()];
    let g: Vec<&SequenceGroup> = groups.iter().collect();
    let loss = model.accumulate(&g, None, &mut grad, None, |_, s, ds| {
        hinge_terms(
            s,
            refs_,
            k,
            (margin_first, margin_second),
            (true, true),
            1.0,
            Some(ds),
        )
    });
    Ok((loss, grad))
}

/// Unnormalized regularizer sum over the instances not in `excluded`.
pub fn reg_loss_total(
    model: &SequentialModel,
    instances: &[Instance],
    excluded: &BTreeSet<InstanceId>,
    store: &ReferenceStore,
    cfg: &FinestConfig,
) -> Result<(f64, Vec<f64>)> {
    let kept: Vec<Instance> = instances
        .iter()
        .filter(|i| !excluded.contains(&i.id))
        .cloned()
        .collect();
    let refs: Vec<&[u32]> = kept
        .iter()
        .map(|i| store.get(i.id))
        .collect::<Result<_>>()?;
    let k = store.k();
    let mut grad = vec![0.0; model.n_params()];
    if kept.is_empty() {
        return Ok((0.0, grad));
    }
    let groups = SequenceGroup::build(&kept, model.config().max_seq_len);
    let g: Vec<&SequenceGroup> = groups.iter().collect();
    let flags = (cfg.use_first, cfg.use_second);
    let margins = (cfg.margin_first, cfg.margin_second);
    let loss = model.accumulate(&g, None, &mut grad, None, |o, s, ds| {
        hinge_terms(s, refs[o.instance], k, margins, flags, 1.0, Some(ds))
    });
    Ok((loss, grad))
}

/// Mean CE on `perturbed_batch` plus lambda times the regularizer over the
/// non-excluded `instances`, normalized per `cfg.normalization`.
pub fn total_loss(
    model: &SequentialModel,
    perturbed_batch: &[Instance],
    instances: &[Instance],
    excluded: &BTreeSet<InstanceId>,
    store: &ReferenceStore,
    cfg: &FinestConfig,
) -> Result<(f64, Vec<f64>)> {
    let (ce, mut grad) = if perturbed_batch.is_empty() {
        (0.0, vec![0.0; model.n_params()])
    } else {
        crate::models::loss_ce(model, perturbed_batch)?
    };
    if cfg.lambda == 0.0 {
        return Ok((ce, grad));
    }
    let (reg, rgrad) = reg_loss_total(model, instances, excluded, store, cfg)?;
    let n_kept = instances
        .iter()
        .filter(|i| !excluded.contains(&i.id))
        .count();
    let norm = match cfg.normalization {
        Normalization::Mean if n_kept > 0 => 1.0 / n_kept as f64,
        Normalization::Mean => 0.0,
        Normalization::Sum => 1.0,
    };
    let w = cfg.lambda * norm;
    for (g, r) in grad.iter_mut().zip(&rgrad) {
        *g += w * r;
    }
    Ok((ce + w * reg, grad))
}

pub(crate) fn engine_plan<'a>(cfg: &FinestConfig, store: &'a ReferenceStore) -> EnginePlan<'a> {
    EnginePlan {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        simulation: cfg.simulate.then_some(Simulation {
            ratio: cfg.sampling_ratio,
            pool: Pool::All,
        }),
        regularizer: Some(Regularizer {
            store,
            lambda: cfg.lambda,
            margin_first: cfg.margin_first,
            margin_second: cfg.margin_second,
            use_first: cfg.use_first,
            use_second: cfg.use_second,
            normalization: cfg.normalization,
        }),
        input_noise: None,
    }
}

/// Fine-tunes against references already drawn from `base`.
pub fn finetune_with_references(
    base: &SequentialModel,
    train: &Dataset,
    store: &ReferenceStore,
    cfg: &FinestConfig,
) -> Result<(SequentialModel, FineTuneLog)> {
    cfg.validate()?;
    run_engine(base, train, &engine_plan(cfg, store))
}

/// Full FINEST run: references from `base`, then `cfg.epochs` epochs of
/// simulated perturbation plus regularized CE updates.
pub fn finetune(
    base: &SequentialModel,
    train: &Dataset,
    cfg: &FinestConfig,
) -> Result<(SequentialModel, FineTuneLog)> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((base.clone(), FineTuneLog::default()));
    }
    let split = SplitConfig {
        max_seq_len: base.config().max_seq_len,
        ..SplitConfig::default()
    };
    let instances = build_instances(train, &split);
    let store = generate_references(base, &instances, cfg.top_k)?;
    finetune_with_references(base, train, &store, cfg)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataio::{synth_generate, Regime};
    use crate::models::{init_model, score, Arch, ModelConfig};

    fn toy_model(n: usize, seed: u64) -> SequentialModel {
        let cfg = ModelConfig {
            embed_dim: 6,
            arch: Arch::Recurrent,
            seed,
            max_seq_len: 8,
            init_std: 0.5,
            ..ModelConfig::default()
        };
        init_model(&cfg, n).unwrap()
    }

    #[test]
    fn hand_example() {
        let scores = [0.5, 0.7, 0.1, 0.6];
        let v = reg_loss_scores(&scores, &[0, 1, 2, 3], 0.1, 0.1);
        assert!((v - 0.3).abs() < 1e-15, "{v}");
    }

    #[test]
    fn slack_hinges_are_zero() {
        let scores = [3.0, 2.0, 0.5, 0.0];
        assert_eq!(reg_loss_scores(&scores, &[0, 1, 2, 3], 0.1, 0.1), 0.0);
    }

    #[test]
    fn short_references_error() {
        let m = toy_model(10, 0);
        let inst = Instance {
            id: InstanceId {
                user: 0,
                position: 1,
            },
            prefix: vec![1],
            target: 2,
        };
        assert!(matches!(
            reg_loss_instance(&m, &inst, &[1, 2, 3], Some(2), 0.1, 0.1),
            Err(Error::ShortReferences { got: 3, need: 4 })
        ));
    }

    #[test]
    fn references_are_base_top_list() {
        let ds = synth_generate(6, 12, 1, Regime::Markov);
        let m = toy_model(12, 3);
        let inst = build_instances(
            &ds,
            &SplitConfig {
                max_seq_len: 8,
                ..Default::default()
            },
        );
        let store = generate_references(&m, &inst, 3).unwrap();
        assert_eq!(store.len(), inst.len());
        for i in inst.iter().step_by(7) {
            let expect = rank(&score(&m, &i.prefix).unwrap()).unwrap();
            assert_eq!(store.get(i.id).unwrap(), expect.top(6));
        }
        assert_eq!(generate_references(&m, &inst, 3).unwrap(), store);
        assert_eq!(generate_references(&m, &inst, 50).unwrap().k(), 6);
    }

    #[test]
    fn zero_margins_at_base_are_zero() {
        let ds = synth_generate(5, 10, 2, Regime::Markov);
        let m = toy_model(10, 4);
        let inst = build_instances(
            &ds,
            &SplitConfig {
                max_seq_len: 8,
                ..Default::default()
            },
        );
        let store = generate_references(&m, &inst, 5).unwrap();
        let cfg = FinestConfig {
            margin_first: 0.0,
            margin_second: 0.0,
            ..Default::default()
        };
        let (v, g) = reg_loss_total(&m, &inst, &BTreeSet::new(), &store, &cfg).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn excluding_everything_is_zero() {
        let ds = synth_generate(5, 10, 2, Regime::Markov);
        let m = toy_model(10, 4);
        let inst = build_instances(
            &ds,
            &SplitConfig {
                max_seq_len: 8,
                ..Default::default()
            },
        );
        let store = generate_references(&toy_model(10, 9), &inst, 5).unwrap();
        let all: BTreeSet<InstanceId> = inst.iter().map(|i| i.id).collect();
        let (v, _) = reg_loss_total(&m, &inst, &all, &store, &FinestConfig::default()).unwrap();
        assert_eq!(v, 0.0);
        let (v, _) = reg_loss_total(
            &m,
            &inst,
            &BTreeSet::new(),
            &store,
            &FinestConfig::default(),
        )
        .unwrap();
        let loop_sum: f64 = inst
            .iter()
            .map(|i| {
                reg_loss_instance(&m, i, store.get(i.id).unwrap(), None, 0.1, 0.1)
                    .unwrap()
                    .0
            })
            .sum();
        assert!((v - loop_sum).abs() < 1e-9 * loop_sum.max(1.0));
    }

    #[test]
    fn zero_epochs_returns_base() {
        let ds = synth_generate(5, 10, 2, Regime::Markov);
        let m = toy_model(10, 4);
        let (out, log) = finetune(
            &m,
            &ds,
            &FinestConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.parameters(), m.parameters());
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn lambda_zero_total_is_ce() {
        let ds = synth_generate(5, 10, 2, Regime::Markov);
        let m = toy_model(10, 4);
        let inst = build_instances(
            &ds,
            &SplitConfig {
                max_seq_len: 8,
                ..Default::default()
            },
        );
        let store = generate_references(&toy_model(10, 9), &inst, 5).unwrap();
        let cfg = FinestConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let (t, g) = total_loss(&m, &inst[..10], &inst, &BTreeSet::new(), &store, &cfg).unwrap();
        let (c, gc) = crate::models::loss_ce(&m, &inst[..10]).unwrap();
        assert_eq!(t, c);
        assert_eq!(g, gc);
    }

    proptest! {
        #[test]
        fn reg_nonnegative_and_monotone_in_margins(
            scores in proptest::collection::vec(-2.0f64..2.0, 12),
            m1 in 0.0f64..0.5, m2 in 0.0f64..0.5, bump in 0.0f64..0.5,
        ) {
            let refs: Vec<u32> = (0..12).collect();
            let base = reg_loss_scores(&scores, &refs, m1, m2);
            prop_assert!(base >= 0.0);
            prop_assert!(reg_loss_scores(&scores, &refs, m1 + bump, m2) >= base);
            prop_assert!(reg_loss_scores(&scores, &refs, m1, m2 + bump) >= base);
        }
    }
}
