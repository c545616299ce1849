//! Desk-scale sequential next-item scorers with hand-derived gradients.
//!
//! Parameters live in one flat `Vec<f64>`: item embeddings, output
//! projection and bias, then the encoder's own weights. Scores for a prefix
//! are `O h + b` where `h` is the encoder state after the last prefix item.

mod attention;
mod checkpoint;
mod groups;
mod recurrent;
pub(crate) mod train;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use groups::{group_by_user, GroupOutput, SequenceGroup, UserGroups};
pub use train::{loss_ce, train_base, user_batches, validation_split, EpochRecord, TrainLog};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Single-layer Elman encoder with tanh units.
    Recurrent,
    /// One causal self-attention block with learned positions and a tanh
    /// residual output.
    Attention,
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "recurrent" => Ok(Arch::Recurrent),
            "attention" => Ok(Arch::Attention),
            other => Err(format!("unknown arch `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub arch: Arch,
    pub seed: u64,
    pub max_seq_len: usize,
    /// Users per mini-batch.
    pub batch_size: usize,
    /// Epochs without validation-MRR improvement before stopping.
    pub patience: usize,
    /// Trailing share of each user's training instances held out for early
    /// stopping.
    pub val_fraction: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            learning_rate: 0.001,
            max_epochs: 100,
            arch: Arch::Recurrent,
            seed: 0,
            max_seq_len: 50,
            batch_size: 32,
            patience: 5,
            val_fraction: 0.1,
            init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.max_seq_len == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_seq_len and batch_size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub d: usize,
    pub max_len: usize,
    pub emb: usize,
    pub out_w: usize,
    pub out_b: usize,
    /// Recurrent: W, U, bias. Attention: positions, Wq, Wk, Wv.
    pub enc: usize,
    pub total: usize,
}

impl Layout {
    fn new(arch: Arch, n: usize, d: usize, max_len: usize) -> Self {
        let emb = 0;
        let out_w = emb + n * d;
        let out_b = out_w + n * d;
        let enc = out_b + n;
        let enc_len = match arch {
            Arch::Recurrent => 2 * d * d + d,
            Arch::Attention => max_len * d + 3 * d * d,
        };
        Self {
            d,
            max_len,
            emb,
            out_w,
            out_b,
            enc,
            total: enc + enc_len,
        }
    }
}

/// Encoder activations kept for the backward pass.
pub(crate) enum Cache {
    Recurrent(recurrent::Cache),
    Attention(attention::Cache),
}

impl Cache {
    fn hidden(&self, j: usize, d: usize) -> &[f64] {
        let h = match self {
            Cache::Recurrent(c) => &c.h,
            Cache::Attention(c) => &c.h,
        };
        &h[j * d..(j + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialModel {
    config: ModelConfig,
    n_items: usize,
    params: Vec<f64>,
}

/// Fresh model with small Gaussian weights drawn from `cfg.seed`.
pub fn init_model(cfg: &ModelConfig, n_items: usize) -> Result<SequentialModel> {
    cfg.validate()?;
    if n_items == 0 {
        return Err(Error::Config("n_items must be >= 1".into()));
    }
    let layout = Layout::new(cfg.arch, n_items, cfg.embed_dim, cfg.max_seq_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut params: Vec<f64> = (0..layout.total).map(|_| normal.sample(&mut rng)).collect();
    params[layout.out_b..layout.out_b + n_items].fill(0.0);
    if cfg.arch == Arch::Recurrent {
        let d = cfg.embed_dim;
        let b = layout.enc + 2 * d * d;
        params[b..b + d].fill(0.0);
    }
    Ok(SequentialModel {
        config: *cfg,
        n_items,
        params,
    })
}

impl SequentialModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        n_items: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expect = Layout::new(config.arch, n_items, config.embed_dim, config.max_seq_len).total;
        if params.len() != expect {
            return Err(Error::Checkpoint(format!(
                "expected {expect} parameters, found {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            n_items,
            params,
        })
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(
            self.config.arch,
            self.n_items,
            self.config.embed_dim,
            self.config.max_seq_len,
        )
    }

    fn check_items(&self, items: &[u32]) -> Result<()> {
        match items.iter().find(|&&i| i as usize >= self.n_items) {
            Some(&bad) => Err(Error::UnknownItem(bad)),
            None => Ok(()),
        }
    }

    pub(crate) fn encode(&self, inputs: &[u32], noise: Option<&[f64]>) -> Cache {
        let l = self.layout();
        match self.config.arch {
            Arch::Recurrent => {
                Cache::Recurrent(recurrent::forward(&l, &self.params, inputs, noise))
            }
            Arch::Attention => {
                Cache::Attention(attention::forward(&l, &self.params, inputs, noise))
            }
        }
    }

    fn encode_backward(
        &self,
        inputs: &[u32],
        cache: &Cache,
        dh: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let l = self.layout();
        match cache {
            Cache::Recurrent(c) => recurrent::backward(&l, &self.params, inputs, c, dh, grad, dx),
            Cache::Attention(c) => attention::backward(&l, &self.params, inputs, c, dh, grad, dx),
        }
    }

    fn head(&self, h: &[f64], out: &mut [f64]) {
        let l = self.layout();
        let w = &self.params[l.out_w..l.out_b];
        let b = &self.params[l.out_b..l.enc];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * l.d..(i + 1) * l.d];
            *o = b[i] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn head_backward(&self, h: &[f64], dscores: &[f64], grad: &mut [f64], dh: &mut [f64]) {
        let l = self.layout();
        let d = l.d;
        for (i, &g) in dscores.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = l.out_w + i * d;
            for k in 0..d {
                grad[row + k] += g * h[k];
                dh[k] += g * self.params[row + k];
            }
            grad[l.out_b + i] += g;
        }
    }

    /// Forward and backward over a set of groups. `loss_fn` receives each
    /// output's scores and writes d(loss)/d(scores) into the zeroed buffer;
    /// its return values are summed. Gradients are added into `grad`.
    ///
    /// `noise` perturbs the input embeddings of each group (one `len * d`
    /// buffer per group); `dx` receives the gradient with respect to those
    /// inputs.
    pub(crate) fn accumulate<F>(
        &self,
        groups: &[&SequenceGroup],
        noise: Option<&[Vec<f64>]>,
        grad: &mut [f64],
        mut dx: Option<&mut Vec<Vec<f64>>>,
        mut loss_fn: F,
    ) -> f64
    where
        F: FnMut(&GroupOutput, &[f64], &mut [f64]) -> f64,
    {
        let d = self.config.embed_dim;
        let n = self.n_items;
        let mut scores = vec![0.0; n];
        let mut dscores = vec![0.0; n];
        let mut total = 0.0;
        if let Some(dx) = dx.as_deref_mut() {
            dx.clear();
        }
        for (gi, g) in groups.iter().enumerate() {
            let nz = noise.map(|nz| nz[gi].as_slice());
            let cache = self.encode(&g.inputs, nz);
            let mut dh = vec![0.0; g.inputs.len() * d];
            let mut touched = false;
            for out in &g.outputs {
                let h = cache.hidden(out.index, d);
                self.head(h, &mut scores);
                dscores.fill(0.0);
                total += loss_fn(out, &scores, &mut dscores);
                if dscores.iter().any(|&v| v != 0.0) {
                    touched = true;
                    let dhj = &mut dh[out.index * d..(out.index + 1) * d];
                    self.head_backward(h, &dscores, grad, dhj);
                }
            }
            match dx.as_deref_mut() {
                Some(dx) => {
                    let mut buf = vec![0.0; g.inputs.len() * d];
                    if touched {
                        self.encode_backward(&g.inputs, &cache, &dh, grad, Some(&mut buf));
                    }
                    dx.push(buf);
                }
                None if touched => self.encode_backward(&g.inputs, &cache, &dh, grad, None),
                None => {}
            }
        }
        total
    }

    /// Scores of every output in `groups`, in group/output order.
    pub(crate) fn score_groups(&self, groups: &[SequenceGroup]) -> Vec<(usize, Vec<f64>)> {
        let d = self.config.embed_dim;
        let mut out = Vec::new();
        for g in groups {
            let cache = self.encode(&g.inputs, None);
            for o in &g.outputs {
                let mut s = vec![0.0; self.n_items];
                self.head(cache.hidden(o.index, d), &mut s);
                out.push((o.instance, s));
            }
        }
        out
    }

    /// Score vectors for many prefixes at once, shared prefixes encoded once.
    pub fn score_instances(&self, instances: &[crate::dataio::Instance]) -> Result<Vec<Vec<f64>>> {
        for inst in instances {
            self.check_items(&inst.prefix)?;
            if inst.prefix.is_empty() {
                return Err(Error::Config("empty prefix".into()));
            }
        }
        let groups = SequenceGroup::build(instances, self.config.max_seq_len);
        let mut out = vec![Vec::new(); instances.len()];
        for (i, s) in self.score_groups(&groups) {
            out[i] = s;
        }
        Ok(out)
    }
}

/// Next-item scores over the whole catalog for one prefix. Prefixes longer
/// than `max_seq_len` are cut to their most recent items.
pub fn score(model: &SequentialModel, prefix: &[u32]) -> Result<Vec<f64>> {
    if prefix.is_empty() {
        return Err(Error::Config("empty prefix".into()));
    }
    model.check_items(prefix)?;
    let start = prefix.len().saturating_sub(model.config.max_seq_len);
    let inputs = &prefix[start..];
    let cache = model.encode(inputs, None);
    let mut s = vec![0.0; model.n_items];
    model.head(
        cache.hidden(inputs.len() - 1, model.config.embed_dim),
        &mut s,
    );
    Ok(s)
}

/// Full-catalog ordering by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub ordering: Vec<u32>,
    pub scores: Vec<f64>,
}

impl RankList {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn top(&self, k: usize) -> &[u32] {
        &self.ordering[..k.min(self.ordering.len())]
    }

    /// 1-based rank of `item`.
    pub fn rank_of(&self, item: u32) -> Option<usize> {
        self.ordering.iter().position(|&i| i == item).map(|p| p + 1)
    }
}

/// Sorts items by descending score; equal scores fall back to ascending
/// item index.
pub fn rank(scores: &[f64]) -> Result<RankList> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NanScore(i));
    }
    let mut ordering: Vec<u32> = (0..scores.len() as u32).collect();
    ordering.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .expect("no NaN")
            .then(a.cmp(&b))
    });
    Ok(RankList {
        ordering,
        scores: scores.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cfg(arch: Arch) -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            arch,
            seed: 11,
            max_seq_len: 10,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        for arch in [Arch::Recurrent, Arch::Attention] {
            let a = init_model(&cfg(arch), 20).unwrap();
            let b = init_model(&cfg(arch), 20).unwrap();
            assert_eq!(a.parameters(), b.parameters());
            let c = init_model(
                &ModelConfig {
                    seed: 12,
                    ..cfg(arch)
                },
                20,
            )
            .unwrap();
            assert_ne!(a.parameters(), c.parameters());
        }
    }

    #[test]
    fn snapshot_restore_is_identity() {
        let mut m = init_model(&cfg(Arch::Recurrent), 20).unwrap();
        let snap = m.parameters().to_vec();
        m.parameters_mut()[0] += 1.0;
        m.parameters_mut().copy_from_slice(&snap);
        assert_eq!(m.parameters(), &snap[..]);
    }

    #[test]
    fn score_shape_and_purity() {
        for arch in [Arch::Recurrent, Arch::Attention] {
            let m = init_model(&cfg(arch), 20).unwrap();
            let s = score(&m, &[1, 4, 7]).unwrap();
            assert_eq!(s.len(), 20);
            assert!(s.iter().all(|v| v.is_finite()));
            assert_eq!(s, score(&m, &[1, 4, 7]).unwrap());
        }
    }

    #[test]
    fn score_rejects_unknown_item() {
        let m = init_model(&cfg(Arch::Recurrent), 20).unwrap();
        assert!(matches!(score(&m, &[1, 25]), Err(Error::UnknownItem(25))));
    }

    #[test]
    fn order_sensitivity() {
        for arch in [Arch::Recurrent, Arch::Attention] {
            let m = init_model(&cfg(arch), 20).unwrap();
            let a = score(&m, &[3, 9, 5]).unwrap();
            let b = score(&m, &[9, 3, 5]).unwrap();
            assert_ne!(a, b, "{arch:?}");
        }
    }

    #[test]
    fn batched_scores_match_single() {
        use crate::dataio::{Instance, InstanceId};
        for arch in [Arch::Recurrent, Arch::Attention] {
            let m = init_model(&cfg(arch), 20).unwrap();
            let seq = [2u32, 5, 9, 1, 0, 7, 3, 3, 8, 4, 6, 11, 13];
            let insts: Vec<Instance> = (1..seq.len())
                .map(|t| Instance {
                    id: InstanceId {
                        user: 0,
                        position: t as u32,
                    },
                    prefix: seq[t.saturating_sub(10)..t].to_vec(),
                    target: seq[t],
                })
                .collect();
            let batched = m.score_instances(&insts).unwrap();
            for (inst, s) in insts.iter().zip(&batched) {
                let single = score(&m, &inst.prefix).unwrap();
                for (a, b) in single.iter().zip(s) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rank_tie_rule() {
        let r = rank(&[0.3, 0.9, 0.3]).unwrap();
        assert_eq!(r.ordering, vec![1, 0, 2]);
        let r = rank(&[0.5; 4]).unwrap();
        assert_eq!(r.ordering, vec![0, 1, 2, 3]);
        assert!(matches!(rank(&[0.1, f64::NAN]), Err(Error::NanScore(1))));
    }

    proptest! {
        #[test]
        fn rank_is_shift_invariant(v in proptest::collection::vec(-5.0f64..5.0, 1..60), c in -3.0f64..3.0) {
            // A uniform shift can perturb ties through rounding, so quantise first.
            let v: Vec<f64> = v.iter().map(|x| (x * 8.0).round() / 8.0).collect();
            let shifted: Vec<f64> = v.iter().map(|x| x + c.round()).collect();
            prop_assert_eq!(rank(&v).unwrap().ordering, rank(&shifted).unwrap().ordering);
        }

        #[test]
        fn rank_is_permutation(v in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
            let mut o = rank(&v).unwrap().ordering;
            o.sort();
            prop_assert_eq!(o, (0..v.len() as u32).collect::<Vec<_>>());
        }
    }
}
