use crate::dataio::Instance;

/// Where an instance's prediction is read off inside a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupOutput {
    /// Input position whose encoder state produces the scores.
    pub index: usize,
    pub target: u32,
    /// Index of the instance in the slice the group was built from.
    pub instance: usize,
}

/// A single encoder pass shared by instances whose prefixes nest. For an
/// untruncated user sequence this turns `m - 1` instances into one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceGroup {
    pub inputs: Vec<u32>,
    pub outputs: Vec<GroupOutput>,
}

impl SequenceGroup {
    /// Greedily chains consecutive instances: an instance joins the current
    /// group when its (cut) prefix equals the group's inputs followed by the
    /// previous target. Both encoders are causal, so outputs are exact.
    pub fn build(instances: &[Instance], max_len: usize) -> Vec<SequenceGroup> {
        let mut groups: Vec<SequenceGroup> = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            let start = inst.prefix.len().saturating_sub(max_len);
            let prefix = &inst.prefix[start..];
            if let Some(g) = groups.last_mut() {
                let last = g.outputs.last().expect("nonempty group");
                let extends = prefix.len() == g.inputs.len() + 1
                    && prefix[..g.inputs.len()] == g.inputs[..]
                    && prefix[g.inputs.len()] == last.target;
                if extends {
                    g.inputs.push(last.target);
                    g.outputs.push(GroupOutput {
                        index: g.inputs.len() - 1,
                        target: inst.target,
                        instance: i,
                    });
                    continue;
                }
            }
            groups.push(SequenceGroup {
                inputs: prefix.to_vec(),
                outputs: vec![GroupOutput {
                    index: prefix.len() - 1,
                    target: inst.target,
                    instance: i,
                }],
            });
        }
        groups
    }

    pub fn n_outputs(groups: &[SequenceGroup]) -> usize {
        groups.iter().map(|g| g.outputs.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::InstanceId;

    fn inst(prefix: &[u32], target: u32) -> Instance {
        Instance {
            id: InstanceId {
                user: 0,
                position: prefix.len() as u32,
            },
            prefix: prefix.to_vec(),
            target,
        }
    }

    #[test]
    fn chains_nested_prefixes() {
        let insts = vec![inst(&[1], 2), inst(&[1, 2], 3), inst(&[1, 2, 3], 4)];
        let g = SequenceGroup::build(&insts, 50);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].inputs, vec![1, 2, 3]);
        let idx: Vec<usize> = g[0].outputs.iter().map(|o| o.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn truncated_prefixes_split() {
        let insts = vec![inst(&[1, 2], 3), inst(&[2, 3], 4)];
        let g = SequenceGroup::build(&insts, 2);
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].inputs, vec![2, 3]);
    }

    #[test]
    fn long_prefix_is_cut() {
        let insts = vec![inst(&[1, 2, 3, 4], 5)];
        let g = SequenceGroup::build(&insts, 3);
        assert_eq!(g[0].inputs, vec![2, 3, 4]);
    }
}

/// Groups of one user's instances; `outputs[..].instance` indexes the full
/// instance slice passed to [`group_by_user`].
#[derive(Debug, Clone)]
pub struct UserGroups {
    pub user: u32,
    pub groups: Vec<SequenceGroup>,
    pub n_outputs: usize,
}

/// Splits `instances` (any order) into per-user runs, preserving the
/// relative order inside each user, and builds groups for each.
pub fn group_by_user(instances: &[Instance], max_len: usize) -> Vec<UserGroups> {
    let mut by_user: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, inst) in instances.iter().enumerate() {
        by_user.entry(inst.id.user).or_default().push(i);
    }
    by_user
        .into_iter()
        .map(|(user, idx)| {
            let local: Vec<Instance> = idx.iter().map(|&i| instances[i].clone()).collect();
            let mut groups = SequenceGroup::build(&local, max_len);
            for g in &mut groups {
                for o in &mut g.outputs {
                    o.instance = idx[o.instance];
                }
            }
            UserGroups {
                user,
                n_outputs: idx.len(),
                groups,
            }
        })
        .collect()
}
