use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::edit::{apply_plan, budget_count, PerturbationPlan};
use super::select::{select_from_pool, EditChoice, Pool};
use crate::dataio::{Dataset, InstanceId};
use crate::error::{Error, Result};

/// A simulated perturbation of the training data.
#[derive(Debug, Clone)]
pub struct PseudoPerturbation {
    pub dataset: Dataset,
    pub plan: PerturbationPlan,
    /// Instances of the original data whose prefix or target an edit touched.
    pub perturbed: BTreeSet<InstanceId>,
}

/// Original instances affected by `plan`: their (prefix, target) content
/// changed, or an edited position lies inside their window.
pub fn perturbed_instances(
    original: &Dataset,
    edited: &Dataset,
    plan: &PerturbationPlan,
    max_seq_len: usize,
) -> Result<BTreeSet<InstanceId>> {
    let located = original.locate_all();
    let mut touched: HashMap<u32, Vec<usize>> = HashMap::new();
    for e in &plan.edits {
        let &(user, pos) = located
            .get(&e.target_uid)
            .ok_or(Error::UnknownUid(e.target_uid))?;
        touched.entry(user).or_default().push(pos);
    }
    let mut out = BTreeSet::new();
    for (user, positions) in touched {
        let old = original.sequence(user);
        let new = edited.sequence(user);
        let old_items: Vec<u32> = old.iter().map(|i| i.item).collect();
        let new_items: Vec<u32> = new.iter().map(|i| i.item).collect();
        let new_pos: HashMap<u64, usize> =
            new.iter().enumerate().map(|(p, i)| (i.uid, p)).collect();
        for t in 1..old.len() {
            let ws = t.saturating_sub(max_seq_len);
            let in_window = positions.iter().any(|&p| ws <= p && p <= t);
            let changed = match new_pos.get(&old[t].uid) {
                None => true,
                Some(&q) => {
                    let qs = q.saturating_sub(max_seq_len);
                    new_items[q] != old_items[t] || new_items[qs..q] != old_items[ws..t]
                }
            };
            if in_window || changed {
                out.insert(InstanceId {
                    user,
                    position: t as u32,
                });
            }
        }
    }
    Ok(out)
}

/// Edits `ceil(ratio * N)` uniformly chosen interactions of `pool`, each by a
/// mixed delete/replace/insert draw.
pub fn sample_pseudo_perturbation_with(
    ds: &Dataset,
    pool: Pool,
    ratio: f64,
    rng: &mut impl Rng,
    max_seq_len: usize,
) -> Result<PseudoPerturbation> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "simulation ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = budget_count(ratio, ds.len());
    let plan = select_from_pool(ds, pool, n, rng, EditChoice::Mixed)?;
    let dataset = apply_plan(ds, &plan)?;
    let perturbed = perturbed_instances(ds, &dataset, &plan, max_seq_len)?;
    Ok(PseudoPerturbation {
        dataset,
        plan,
        perturbed,
    })
}

pub fn sample_pseudo_perturbation(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
    max_seq_len: usize,
) -> Result<PseudoPerturbation> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sample_pseudo_perturbation_with(ds, Pool::All, ratio, &mut rng, max_seq_len)
}
