use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edit::{least_popular_item, Edit, EditKind, PerturbationPlan};
use super::idag::{all_cascading_scores, build_idag};
use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Which edit to apply at a selected target. `Mixed` draws delete, replace
/// or insert with equal probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditChoice {
    Fixed(EditKind),
    Mixed,
}

/// Candidate targets: every interaction, or each user's first/last 10%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    All,
    Earliest,
    Latest,
}

impl std::str::FromStr for Pool {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Pool::All),
            "earliest" => Ok(Pool::Earliest),
            "latest" => Ok(Pool::Latest),
            other => Err(format!("unknown pool `{other}`")),
        }
    }
}

const POOL_FRACTION: f64 = 0.1;

/// Pool members in (user, position) order.
pub fn pool_uids(ds: &Dataset, pool: Pool) -> Vec<u64> {
    let mut out = Vec::new();
    for seq in ds.sequences().values() {
        let m = seq.len();
        let k = ((POOL_FRACTION * m as f64) - 1e-9).ceil().max(1.0) as usize;
        let range = match pool {
            Pool::All => 0..m,
            Pool::Earliest => 0..k.min(m),
            Pool::Latest => m.saturating_sub(k)..m,
        };
        out.extend(seq[range].iter().map(|i| i.uid));
    }
    out
}

fn make_edits(ds: &Dataset, targets: &[u64], choice: EditChoice, rng: &mut impl Rng) -> Vec<Edit> {
    let filler = least_popular_item(ds);
    targets
        .iter()
        .map(|&uid| {
            let kind = match choice {
                EditChoice::Fixed(k) => k,
                EditChoice::Mixed => match rng.random_range(0..3) {
                    0 => EditKind::Delete,
                    1 => EditKind::Replace,
                    _ => EditKind::Insert,
                },
            };
            match kind {
                EditKind::Delete => Edit::delete(uid),
                k => Edit::with_item(k, uid, filler),
            }
        })
        .collect()
}

fn fraction(n: usize, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        0.0
    } else {
        n as f64 / ds.len() as f64
    }
}

/// `n` distinct targets drawn uniformly from `pool`.
pub fn select_from_pool(
    ds: &Dataset,
    pool: Pool,
    n: usize,
    rng: &mut impl Rng,
    choice: EditChoice,
) -> Result<PerturbationPlan> {
    let uids = pool_uids(ds, pool);
    if n > uids.len() {
        return Err(Error::PoolTooSmall {
            pool: uids.len(),
            requested: n,
        });
    }
    let targets: Vec<u64> = sample(rng, uids.len(), n)
        .into_iter()
        .map(|k| uids[k])
        .collect();
    Ok(PerturbationPlan {
        edits: make_edits(ds, &targets, choice, rng),
        budget_fraction: fraction(n, ds),
    })
}

pub fn select_random(
    ds: &Dataset,
    n: usize,
    seed: u64,
    choice: EditChoice,
) -> Result<PerturbationPlan> {
    select_from_pool(
        ds,
        Pool::All,
        n,
        &mut ChaCha8Rng::seed_from_u64(seed),
        choice,
    )
}

pub fn select_earliest_random(
    ds: &Dataset,
    n: usize,
    seed: u64,
    choice: EditChoice,
) -> Result<PerturbationPlan> {
    select_from_pool(
        ds,
        Pool::Earliest,
        n,
        &mut ChaCha8Rng::seed_from_u64(seed),
        choice,
    )
}

pub fn select_latest_random(
    ds: &Dataset,
    n: usize,
    seed: u64,
    choice: EditChoice,
) -> Result<PerturbationPlan> {
    select_from_pool(
        ds,
        Pool::Latest,
        n,
        &mut ChaCha8Rng::seed_from_u64(seed),
        choice,
    )
}

/// All interactions as `(uid, cascading score)`, highest score first, ties by
/// ascending uid.
pub fn casper_ranking(ds: &Dataset) -> Vec<(u64, usize)> {
    let g = build_idag(ds);
    let scores = all_cascading_scores(&g);
    let mut ranked: Vec<(u64, usize)> = (0..g.len()).map(|v| (g.uid(v), scores[v])).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// The `n` interactions with the largest cascading scores.
pub fn select_casper(
    ds: &Dataset,
    n: usize,
    seed: u64,
    choice: EditChoice,
) -> Result<PerturbationPlan> {
    if n > ds.len() {
        return Err(Error::PoolTooSmall {
            pool: ds.len(),
            requested: n,
        });
    }
    let targets: Vec<u64> = casper_ranking(ds)
        .into_iter()
        .take(n)
        .map(|(u, _)| u)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PerturbationPlan {
        edits: make_edits(ds, &targets, choice, &mut rng),
        budget_fraction: fraction(n, ds),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;
    use crate::dataio::{synth_generate, Regime};
    use crate::perturbation::{budget_count, build_idag, cascading_score};

    #[test]
    fn pools_are_prefix_and_suffix() {
        let ds = synth_generate(10, 20, 2, Regime::Markov);
        let early: HashSet<u64> = pool_uids(&ds, Pool::Earliest).into_iter().collect();
        let late: HashSet<u64> = pool_uids(&ds, Pool::Latest).into_iter().collect();
        for seq in ds.sequences().values() {
            let k = (seq.len() as f64 / 10.0).ceil() as usize;
            for (p, it) in seq.iter().enumerate() {
                assert_eq!(early.contains(&it.uid), p < k);
                assert_eq!(late.contains(&it.uid), p >= seq.len() - k);
            }
        }
    }

    #[test]
    fn pool_too_small() {
        let ds = synth_generate(3, 10, 2, Regime::Markov);
        let r = select_earliest_random(&ds, 1000, 0, EditChoice::Mixed);
        assert!(matches!(r, Err(Error::PoolTooSmall { .. })));
    }

    #[test]
    fn casper_picks_top_score() {
        let ds = synth_generate(30, 20, 4, Regime::Markov);
        let g = build_idag(&ds);
        let plan = select_casper(&ds, 5, 0, EditChoice::Fixed(EditKind::Delete)).unwrap();
        let chosen: Vec<usize> = plan
            .edits
            .iter()
            .map(|e| cascading_score(&g, e.target_uid).unwrap())
            .collect();
        let mut brute: Vec<usize> = ds
            .interactions()
            .iter()
            .map(|i| cascading_score(&g, i.uid).unwrap())
            .collect();
        brute.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(chosen, brute[..5].to_vec());
    }

    #[test]
    fn mixed_uses_least_popular() {
        let ds = synth_generate(30, 20, 4, Regime::Popularity);
        let lp = least_popular_item(&ds);
        let plan = select_random(&ds, 60, 9, EditChoice::Mixed).unwrap();
        let kinds: HashSet<EditKind> = plan.edits.iter().map(|e| e.kind).collect();
        assert_eq!(kinds.len(), 3);
        for e in &plan.edits {
            assert_eq!(e.new_item.is_some(), e.kind != EditKind::Delete);
            if let Some(i) = e.new_item {
                assert_eq!(i, lp);
            }
        }
    }

    proptest! {
        #[test]
        fn plan_size_matches_budget(seed in 0u64..40, frac in 0.001f64..0.3) {
            let ds = synth_generate(15, 12, seed, Regime::Markov);
            let n = budget_count(frac, ds.len());
            let plan = select_random(&ds, n, seed, EditChoice::Mixed).unwrap();
            prop_assert_eq!(plan.len(), n);
            prop_assert_eq!(budget_count(plan.budget_fraction, ds.len()), plan.len());
            let distinct: HashSet<u64> = plan.edits.iter().map(|e| e.target_uid).collect();
            prop_assert_eq!(distinct.len(), n);
        }
    }
}
