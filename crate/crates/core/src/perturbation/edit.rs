use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Interaction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Delete,
    Insert,
    Replace,
}

impl std::str::FromStr for EditKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "delete" => Ok(EditKind::Delete),
            "insert" => Ok(EditKind::Insert),
            "replace" => Ok(EditKind::Replace),
            other => Err(format!("unknown edit kind `{other}`")),
        }
    }
}

/// One edit against an existing interaction. Inserts place a new event
/// immediately before the target; replaces swap the target's item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub target_uid: u64,
    pub new_item: Option<u32>,
}

impl Edit {
    pub fn delete(target_uid: u64) -> Self {
        Self {
            kind: EditKind::Delete,
            target_uid,
            new_item: None,
        }
    }

    pub fn with_item(kind: EditKind, target_uid: u64, item: u32) -> Self {
        debug_assert_ne!(kind, EditKind::Delete);
        Self {
            kind,
            target_uid,
            new_item: Some(item),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub edits: Vec<Edit>,
    pub budget_fraction: f64,
}

impl PerturbationPlan {
    pub fn empty() -> Self {
        Self {
            edits: Vec::new(),
            budget_fraction: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

/// `ceil(fraction * total)`, ignoring floating-point excess such as
/// `0.001 * 9000 = 9.000000000000002`.
pub fn budget_count(fraction: f64, total: usize) -> usize {
    let x = fraction * total as f64;
    if x <= 0.0 {
        0
    } else {
        (x - 1e-9).ceil().max(0.0) as usize
    }
}

/// Least popular catalog item; ties go to the smaller item index.
pub fn least_popular_item(ds: &Dataset) -> u32 {
    ds.popularity()
        .iter()
        .enumerate()
        .min_by_key(|&(i, &c)| (c, i))
        .map(|(i, _)| i as u32)
        .expect("nonempty catalog")
}

/// Returns an edited copy; `ds` is untouched. Inserted events get fresh uids
/// in plan order and a timestamp one unit before their target, raised to the
/// predecessor's timestamp when that would go backwards. Their place in the
/// sequence is fixed by position, not by timestamp.
pub fn apply_plan(ds: &Dataset, plan: &PerturbationPlan) -> Result<Dataset> {
    let located = ds.locate_all();
    let mut seen = HashSet::new();
    let mut next_uid = ds.next_uid();
    let mut by_user: HashMap<u32, HashMap<usize, (Edit, Option<u64>)>> = HashMap::new();
    for e in &plan.edits {
        let &(user, pos) = located
            .get(&e.target_uid)
            .ok_or(Error::UnknownUid(e.target_uid))?;
        if !seen.insert(e.target_uid) {
            return Err(Error::Config(format!("uid {} edited twice", e.target_uid)));
        }
        match (e.kind, e.new_item) {
            (EditKind::Delete, None) => {}
            (EditKind::Delete, Some(_)) => {
                return Err(Error::Config("delete edits carry no item".into()))
            }
            (_, None) => return Err(Error::Config("insert/replace edits need an item".into())),
            (_, Some(i)) if i as usize >= ds.n_items() => return Err(Error::UnknownItem(i)),
            _ => {}
        }
        let fresh = (e.kind == EditKind::Insert).then(|| {
            next_uid += 1;
            next_uid - 1
        });
        by_user.entry(user).or_default().insert(pos, (*e, fresh));
    }

    let mut sequences: BTreeMap<u32, Vec<Interaction>> = ds.sequences().clone();
    for (user, edits) in by_user {
        let old = &ds.sequences()[&user];
        let mut new = Vec::with_capacity(old.len() + edits.len());
        for (pos, it) in old.iter().enumerate() {
            match edits.get(&pos) {
                None => new.push(*it),
                Some((e, _)) if e.kind == EditKind::Delete => {}
                Some((e, _)) if e.kind == EditKind::Replace => new.push(Interaction {
                    item: e.new_item.expect("checked"),
                    ..*it
                }),
                Some((e, fresh)) => {
                    let floor = new.last().map_or(0, |p: &Interaction| p.timestamp);
                    new.push(Interaction {
                        uid: fresh.expect("insert uid"),
                        user,
                        item: e.new_item.expect("checked"),
                        timestamp: it.timestamp.saturating_sub(1).max(floor),
                    });
                    new.push(*it);
                }
            }
        }
        sequences.insert(user, new);
    }
    Ok(Dataset::from_sequences(
        ds.users().clone(),
        ds.items().clone(),
        sequences,
        next_uid,
    ))
}

/// Human-auditable reference to an edited interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRef {
    pub uid: u64,
    pub user: String,
    pub position: usize,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub kind: EditKind,
    pub target: TargetRef,
    pub new_item: Option<String>,
}

/// JSON form of a plan, resolved against the dataset it targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub budget_fraction: f64,
    pub edits: Vec<EditRecord>,
}

pub fn plan_to_record(plan: &PerturbationPlan, ds: &Dataset) -> Result<PlanRecord> {
    let located = ds.locate_all();
    let edits = plan
        .edits
        .iter()
        .map(|e| {
            let &(user, pos) = located
                .get(&e.target_uid)
                .ok_or(Error::UnknownUid(e.target_uid))?;
            Ok(EditRecord {
                kind: e.kind,
                target: TargetRef {
                    uid: e.target_uid,
                    user: ds.users().name(user).to_string(),
                    position: pos,
                    timestamp: ds.sequence(user)[pos].timestamp,
                },
                new_item: e.new_item.map(|i| ds.items().name(i).to_string()),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PlanRecord {
        budget_fraction: plan.budget_fraction,
        edits,
    })
}

pub fn plan_from_record(rec: &PlanRecord, ds: &Dataset) -> Result<PerturbationPlan> {
    let edits = rec
        .edits
        .iter()
        .map(|r| {
            let new_item = r
                .new_item
                .as_deref()
                .map(|n| {
                    ds.items()
                        .get(n)
                        .ok_or_else(|| Error::UnknownItemName(n.into()))
                })
                .transpose()?;
            Ok(Edit {
                kind: r.kind,
                target_uid: r.target.uid,
                new_item,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PerturbationPlan {
        edits,
        budget_fraction: rec.budget_fraction,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataio::{synth_generate, Regime};

    fn toy() -> Dataset {
        synth_generate(10, 8, 3, Regime::Markov)
    }

    #[test]
    fn delete_one() {
        let ds = synth_generate(5, 10, 1, Regime::Markov);
        let mut all = ds.interactions();
        let target = all[17].uid;
        let out = apply_plan(
            &ds,
            &PerturbationPlan {
                edits: vec![Edit::delete(target)],
                budget_fraction: 0.0,
            },
        )
        .unwrap();
        assert_eq!(out.len(), ds.len() - 1);
        all.remove(17);
        let uids: Vec<u64> = out.interactions().iter().map(|i| i.uid).collect();
        assert_eq!(uids, all.iter().map(|i| i.uid).collect::<Vec<_>>());
    }

    #[test]
    fn replace_changes_one_item() {
        let ds = toy();
        let target = ds.interactions()[4];
        let new = (target.item + 1) % ds.n_items() as u32;
        let plan = PerturbationPlan {
            edits: vec![Edit::with_item(EditKind::Replace, target.uid, new)],
            budget_fraction: 0.0,
        };
        let out = apply_plan(&ds, &plan).unwrap();
        assert_eq!(out.len(), ds.len());
        let diff = ds
            .interactions()
            .iter()
            .zip(out.interactions())
            .filter(|(a, b)| a.item != b.item)
            .count();
        assert_eq!(diff, 1);
    }

    #[test]
    fn insert_lands_before_target() {
        let ds = toy();
        let (user, seq) = ds.sequences().iter().next().unwrap();
        let target = seq[3];
        let plan = PerturbationPlan {
            edits: vec![Edit::with_item(EditKind::Insert, target.uid, 0)],
            budget_fraction: 0.0,
        };
        let out = apply_plan(&ds, &plan).unwrap();
        let new_seq = out.sequence(*user);
        assert_eq!(new_seq.len(), seq.len() + 1);
        assert_eq!(new_seq[4].uid, target.uid);
        assert_eq!(new_seq[3].item, 0);
        assert_eq!(new_seq[3].timestamp, target.timestamp - 1);
        assert_eq!(new_seq[3].uid, ds.next_uid());
        // Position agrees with a re-sort by (timestamp, uid) when no collision occurs.
        let mut resorted = new_seq.to_vec();
        resorted.sort_by_key(|i| (i.timestamp, i.uid));
        assert_eq!(resorted, new_seq);
    }

    #[test]
    fn unknown_uid_errors() {
        let ds = toy();
        let plan = PerturbationPlan {
            edits: vec![Edit::delete(999_999)],
            budget_fraction: 0.0,
        };
        assert!(matches!(
            apply_plan(&ds, &plan),
            Err(Error::UnknownUid(999_999))
        ));
    }

    #[test]
    fn least_popular_rules() {
        use crate::dataio::{Interaction, Vocab};
        use std::sync::Arc;
        let users = Arc::new(Vocab::from_names(["u"]));
        let items = Arc::new(Vocab::from_names(["a", "b", "c"]));
        let mk = |counts: [usize; 3]| {
            let mut v = Vec::new();
            for (item, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    let uid = v.len() as u64;
                    v.push(Interaction {
                        uid,
                        user: 0,
                        item: item as u32,
                        timestamp: uid,
                    });
                }
            }
            Dataset::from_interactions(users.clone(), items.clone(), v)
        };
        assert_eq!(least_popular_item(&mk([5, 1, 9])), 1);
        assert_eq!(least_popular_item(&mk([1, 1, 4])), 0);
    }

    #[test]
    fn budget_ceiling() {
        assert_eq!(budget_count(0.001, 9000), 9);
        assert_eq!(budget_count(0.001, 9001), 10);
        assert_eq!(budget_count(0.01, 5), 1);
        assert_eq!(budget_count(0.0, 5000), 0);
    }

    #[test]
    fn record_round_trip() {
        let ds = toy();
        let all = ds.interactions();
        let plan = PerturbationPlan {
            edits: vec![
                Edit::delete(all[0].uid),
                Edit::with_item(EditKind::Replace, all[5].uid, 2),
            ],
            budget_fraction: 0.02,
        };
        let rec = plan_to_record(&plan, &ds).unwrap();
        let json = serde_json::to_string(&rec).unwrap();
        let back: PlanRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(plan_from_record(&back, &ds).unwrap(), plan);
    }

    proptest! {
        #[test]
        fn apply_never_mutates_input(seed in 0u64..50, picks in proptest::collection::vec(0usize..1000, 1..10)) {
            let ds = synth_generate(20, 15, seed, Regime::Markov);
            let before = ds.fingerprint();
            let all = ds.interactions();
            let mut uids: Vec<u64> = picks.iter().map(|p| all[p % all.len()].uid).collect();
            uids.sort();
            uids.dedup();
            let edits = uids.iter().enumerate().map(|(k, &u)| match k % 3 {
                0 => Edit::delete(u),
                1 => Edit::with_item(EditKind::Insert, u, 0),
                _ => Edit::with_item(EditKind::Replace, u, 1),
            }).collect();
            let out = apply_plan(&ds, &PerturbationPlan { edits, budget_fraction: 0.0 }).unwrap();
            prop_assert_eq!(ds.fingerprint(), before);
            prop_assert_eq!(out.popularity().iter().sum::<u32>() as usize, out.len());
        }
    }
}
