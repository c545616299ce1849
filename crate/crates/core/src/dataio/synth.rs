use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Interaction, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Next item follows a per-user mixture of a shared sparse transition
    /// kernel, a user taste block, and uniform noise.
    Markov,
    /// Items drawn i.i.d. from a Zipf-shaped popularity law.
    Popularity,
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "markov" => Ok(Regime::Markov),
            "popularity" => Ok(Regime::Popularity),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
    pub regime: Regime,
    pub min_len: usize,
    pub max_len: usize,
}

impl SynthConfig {
    pub fn new(n_users: usize, n_items: usize, seed: u64, regime: Regime) -> Self {
        Self {
            n_users,
            n_items,
            seed,
            regime,
            min_len: 12,
            max_len: 30,
        }
    }
}

/// Out-degree of every item in the shared transition kernel.
const FANOUT: usize = 3;
const FANOUT_WEIGHTS: [f64; FANOUT] = [0.6, 0.3, 0.1];
const ZIPF_EXPONENT: f64 = 1.1;

pub fn synth_generate(n_users: usize, n_items: usize, seed: u64, regime: Regime) -> Dataset {
    synth_generate_with(&SynthConfig::new(n_users, n_items, seed, regime))
}

/// Deterministic in `cfg`. Timestamps start at a per-user offset and advance
/// by at least 2 per event, so every gap admits an inserted event; uids follow
/// global time order, as in a real log file.
pub fn synth_generate_with(cfg: &SynthConfig) -> Dataset {
    assert!(
        cfg.n_users >= 1 && cfg.n_items >= 1,
        "empty synthetic catalog"
    );
    assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_items = cfg.n_items;

    let users = Arc::new(Vocab::from_names(
        (0..cfg.n_users).map(|u| format!("u{u:05}")),
    ));
    let items = Arc::new(Vocab::from_names((0..n_items).map(|i| format!("i{i:05}"))));

    let successors: Vec<Vec<u32>> = (0..n_items)
        .map(|_| {
            (0..FANOUT)
                .map(|_| rng.random_range(0..n_items) as u32)
                .collect()
        })
        .collect();
    let succ_pick = WeightedIndex::new(FANOUT_WEIGHTS).expect("weights");

    let mut order: Vec<u32> = (0..n_items as u32).collect();
    order.shuffle(&mut rng);
    let zipf = WeightedIndex::new((0..n_items).map(|r| 1.0 / ((r + 1) as f64).powf(ZIPF_EXPONENT)))
        .expect("weights");

    let block = (n_items / 10).max(1);
    let mut events: Vec<(u64, u32, u32)> = Vec::new();
    for user in 0..cfg.n_users as u32 {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut ts: u64 = rng.random_range(1..1000);
        let taste_start = rng.random_range(0..n_items);
        let follow: f64 = rng.random_range(0.6..0.85);
        let taste: f64 = follow + 0.7 * (1.0 - follow);
        let mut prev: Option<u32> = None;
        for _ in 0..len {
            let item = match cfg.regime {
                Regime::Popularity => order[zipf.sample(&mut rng)],
                Regime::Markov => {
                    let r: f64 = rng.random();
                    match prev {
                        Some(p) if r < follow => successors[p as usize][succ_pick.sample(&mut rng)],
                        _ if r < taste || prev.is_none() => {
                            ((taste_start + rng.random_range(0..block)) % n_items) as u32
                        }
                        _ => rng.random_range(0..n_items) as u32,
                    }
                }
            };
            events.push((ts, user, item));
            prev = Some(item);
            ts += rng.random_range(2..20);
        }
    }
    events.sort_by_key(|&(ts, user, _)| (ts, user));
    let interactions = events
        .into_iter()
        .enumerate()
        .map(|(uid, (timestamp, user, item))| Interaction {
            uid: uid as u64,
            user,
            item,
            timestamp,
        })
        .collect();
    Dataset::from_interactions(users, items, interactions)
}
