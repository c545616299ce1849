use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::dataio::{Regime, SplitConfig};
use crate::error::{Error, Result};
use crate::finest::FinestConfig;
use crate::metrics::SimilarityConfig;
use crate::models::{Arch, ModelConfig};
use crate::perturbation::{EditChoice, EditKind};

/// A TSV interaction log, or a synthetic generator setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: Option<PathBuf>,
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
    pub regime: Regime,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            path: None,
            n_users: 300,
            n_items: 100,
            seed: 0,
            regime: Regime::Markov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Casper,
    Random,
    EarliestRandom,
    LatestRandom,
}

impl std::str::FromStr for Selector {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "casper" => Ok(Selector::Casper),
            "random" => Ok(Selector::Random),
            "earliest_random" => Ok(Selector::EarliestRandom),
            "latest_random" => Ok(Selector::LatestRandom),
            other => Err(format!("unknown selector `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackEdit {
    Delete,
    Insert,
    Replace,
    Mixed,
}

impl AttackEdit {
    pub fn choice(self) -> EditChoice {
        match self {
            AttackEdit::Delete => EditChoice::Fixed(EditKind::Delete),
            AttackEdit::Insert => EditChoice::Fixed(EditKind::Insert),
            AttackEdit::Replace => EditChoice::Fixed(EditKind::Replace),
            AttackEdit::Mixed => EditChoice::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub selector: Selector,
    pub edit_kind: AttackEdit,
    /// Fraction of training interactions edited; 0 gives an unperturbed twin.
    pub budget: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            selector: Selector::Casper,
            edit_kind: AttackEdit::Delete,
            budget: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    Finest,
    Baseline,
}

/// How the twin side of a defended arm is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinMode {
    /// Retrain on perturbed data and apply the same defense again.
    Retrain,
    /// Compare against the undefended perturbed-data model.
    FrozenCheckpoint,
    /// Apply the defense to the original base model using the perturbed
    /// data; the fine-tuning stage then starts from shared parameters.
    SharedBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DatasetSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub defense: DefenseKind,
    pub finest: FinestConfig,
    pub baseline: BaselineConfig,
    pub attack: AttackConfig,
    pub seeds: Vec<u64>,
    pub metrics: SimilarityConfig,
    pub twin_mode: TwinMode,
    /// Number of user groups in the accuracy-stratified breakdown.
    pub quantiles: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            data: DatasetSpec::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            defense: DefenseKind::Finest,
            finest: FinestConfig::default(),
            baseline: BaselineConfig::default(),
            attack: AttackConfig::default(),
            seeds: (0..5).collect(),
            metrics: SimilarityConfig::default(),
            twin_mode: TwinMode::Retrain,
            quantiles: 5,
        }
    }
}

impl ExperimentConfig {
    /// Small, fast settings for the synthetic benchmark.
    pub fn desk_scale() -> Self {
        let mut cfg = Self::default();
        cfg.model = ModelConfig {
            embed_dim: 32,
            learning_rate: 0.005,
            max_epochs: 40,
            arch: Arch::Recurrent,
            batch_size: 16,
            val_fraction: 0.0,
            ..ModelConfig::default()
        };
        cfg.twin_mode = TwinMode::SharedBase;
        cfg.finest.top_k = 20;
        cfg.finest.learning_rate = 0.001;
        cfg.finest.batch_size = 16;
        cfg.baseline.learning_rate = 0.001;
        cfg.baseline.batch_size = 16;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.model.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.attack.budget >= 0.0 && self.attack.budget < 1.0) {
            return Err(Error::Config(format!(
                "attack budget must lie in [0, 1), got {}",
                self.attack.budget
            )));
        }
        if self.split.max_seq_len != self.model.max_seq_len {
            return Err(Error::Config(
                "split.max_seq_len and model.max_seq_len must agree".into(),
            ));
        }
        match self.defense {
            DefenseKind::Finest => self.finest.validate()?,
            DefenseKind::Baseline => self.baseline.validate()?,
            DefenseKind::None => {}
        }
        if self.data.path.is_none() && (self.data.n_users == 0 || self.data.n_items < 2) {
            return Err(Error::Config(
                "synthetic data needs users and >= 2 items".into(),
            ));
        }
        Ok(())
    }

    /// Applies `key=value` overrides addressed by dotted paths such as
    /// `model.embed_dim` or `finest.lambda`. Values are parsed as TOML
    /// scalars or arrays, falling back to bare strings.
    pub fn with_overrides<'a, I>(&self, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut v = serde_json::to_value(self)?;
        for (key, raw) in pairs {
            set_path(&mut v, key, parse_scalar(raw))?;
        }
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a flat key-value TOML file (`model.embed_dim = 32`, one key
    /// per line) on top of `self`.
    pub fn with_file(&self, text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat);
        let mut v = serde_json::to_value(self)?;
        for (key, val) in flat {
            set_path(&mut v, &key, val)?;
        }
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, serde_json::Value)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, x) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => out.push((prefix.to_string(), toml_to_json(other))),
    }
}

fn toml_to_json(v: &toml::Value) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn parse_scalar(raw: &str) -> serde_json::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(t) => toml_to_json(&t["v"]),
        Err(_) => serde_json::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut serde_json::Value, key: &str, val: serde_json::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a setting")))?;
        if !obj.contains_key(*p) {
            return Err(Error::Config(format!("unknown setting `{key}`")));
        }
        if i + 1 == parts.len() {
            obj.insert((*p).to_string(), val);
            return Ok(());
        }
        cur = obj.get_mut(*p).expect("checked");
    }
    Ok(())
}
