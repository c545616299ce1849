//! Comparator fine-tuning methods: CE fine-tuning on randomly perturbed
//! data drawn from a chosen pool, and fast-gradient sign noise on the input
//! embeddings.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Instance};
use crate::engine::{run_engine, sign_noise, EnginePlan, FineTuneLog, Simulation};
use crate::error::{Error, Result};
use crate::models::train::cross_entropy;
use crate::models::{SequenceGroup, SequentialModel};
use crate::perturbation::Pool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    Random,
    EarliestRandom,
    LatestRandom,
    AcaeNoise,
}

impl std::str::FromStr for BaselineVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(BaselineVariant::Random),
            "earliest_random" => Ok(BaselineVariant::EarliestRandom),
            "latest_random" => Ok(BaselineVariant::LatestRandom),
            "acae_noise" | "acae" => Ok(BaselineVariant::AcaeNoise),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

impl BaselineVariant {
    pub fn name(self) -> &'static str {
        match self {
            BaselineVariant::Random => "random",
            BaselineVariant::EarliestRandom => "earliest_random",
            BaselineVariant::LatestRandom => "latest_random",
            BaselineVariant::AcaeNoise => "acae_noise",
        }
    }

    pub fn pool(self) -> Option<Pool> {
        match self {
            BaselineVariant::Random => Some(Pool::All),
            BaselineVariant::EarliestRandom => Some(Pool::Earliest),
            BaselineVariant::LatestRandom => Some(Pool::Latest),
            BaselineVariant::AcaeNoise => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub variant: BaselineVariant,
    pub ratio: f64,
    /// Sign-noise magnitude for the adversarial variant.
    pub epsilon: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            variant: BaselineVariant::Random,
            ratio: 0.01,
            epsilon: 0.01,
            epochs: 50,
            learning_rate: 0.001,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variant.pool().is_some() && !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config("baseline ratio must lie in (0, 1)".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be nonnegative".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "batch_size must be >= 1 and learning_rate > 0".into(),
            ));
        }
        Ok(())
    }

    fn plan(&self) -> EnginePlan<'static> {
        EnginePlan {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            simulation: self.variant.pool().map(|pool| Simulation {
                ratio: self.ratio,
                pool,
            }),
            regularizer: None,
            input_noise: (self.variant == BaselineVariant::AcaeNoise).then_some(self.epsilon),
        }
    }
}

/// Each epoch: fresh random edits drawn from the variant's pool, then CE
/// updates on the edited data.
pub fn finetune_random_family(
    base: &SequentialModel,
    train: &Dataset,
    cfg: &BaselineConfig,
) -> Result<(SequentialModel, FineTuneLog)> {
    cfg.validate()?;
    if cfg.variant.pool().is_none() {
        return Err(Error::Config(format!(
            "`{}` is not a random-pool variant",
            cfg.variant.name()
        )));
    }
    run_engine(base, train, &cfg.plan())
}

/// Each batch: CE gradient with respect to the input embeddings, add
/// `epsilon * sign(gradient)` to them, and step on the noised CE.
pub fn finetune_acae(
    base: &SequentialModel,
    train: &Dataset,
    cfg: &BaselineConfig,
) -> Result<(SequentialModel, FineTuneLog)> {
    cfg.validate()?;
    let cfg = BaselineConfig {
        variant: BaselineVariant::AcaeNoise,
        ..cfg.clone()
    };
    run_engine(base, train, &cfg.plan())
}

pub fn finetune_baseline(
    base: &SequentialModel,
    train: &Dataset,
    cfg: &BaselineConfig,
) -> Result<(SequentialModel, FineTuneLog)> {
    match cfg.variant {
        BaselineVariant::AcaeNoise => finetune_acae(base, train, cfg),
        _ => finetune_random_family(base, train, cfg),
    }
}

/// Clean CE, sign-noised CE and the noise itself for one batch, all at the
/// same parameters.
pub fn acae_losses(
    model: &SequentialModel,
    batch: &[Instance],
    epsilon: f64,
) -> Result<(f64, f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Config("acae_losses needs a nonempty batch".into()));
    }
    let groups = SequenceGroup::build(batch, model.config().max_seq_len);
    let g: Vec<&SequenceGroup> = groups.iter().collect();
    let scale = 1.0 / batch.len() as f64;
    let noise = sign_noise(model, &g, scale, epsilon);
    let mut scratch = vec![0.0; model.n_params()];
    let mut eval = |nz: Option<&[Vec<f64>]>| {
        scratch.fill(0.0);
        model.accumulate(&g, nz, &mut scratch, None, |o, s, ds| {
            cross_entropy(s, o.target, scale, ds)
        }) * scale
    };
    let clean = eval(None);
    let noised = eval(Some(&noise));
    Ok((clean, noised, noise))
}
