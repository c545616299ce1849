use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DefenseKind, ExperimentConfig, Selector, TwinMode};
use super::groups::{group_stability_report, GroupTable};
use super::stats::ttest_one_tailed;
use crate::baselines::{finetune_baseline, BaselineConfig, BaselineVariant};
use crate::dataio::{
    build_instances, build_test_instances, chronological_split, filter_min_interactions,
    load_interactions, synth_generate, Dataset, Format, Instance, InstanceId,
};
use crate::error::{Error, Result};
use crate::finest::{finetune, FinestConfig};
use crate::metrics::{mrr, recall_at_k, rls_per_instance, shifted_mean, Similarity};
use crate::models::{init_model, rank, train_base, RankList, SequentialModel};
use crate::perturbation::{
    apply_plan, budget_count, select_casper, select_earliest_random, select_latest_random,
    select_random, PerturbationPlan,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Defense applied after base training, on both sides of the twin pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum Defense {
    None,
    Finest(FinestConfig),
    Baseline(BaselineConfig),
}

impl Defense {
    fn seeded(&self, seed: u64) -> Self {
        match self {
            Defense::None => Defense::None,
            Defense::Finest(c) => Defense::Finest(FinestConfig { seed, ..c.clone() }),
            Defense::Baseline(c) => Defense::Baseline(BaselineConfig { seed, ..c.clone() }),
        }
    }

    /// Rewrites degenerate settings onto the equivalent simpler defense so
    /// identical training runs are shared between arms.
    fn canonical(&self) -> Self {
        match self {
            Defense::Finest(c) if c.epochs == 0 => Defense::None,
            Defense::Baseline(c) if c.epochs == 0 => Defense::None,
            Defense::Finest(c) if c.lambda == 0.0 || !(c.use_first || c.use_second) => {
                let variant = if c.simulate {
                    BaselineVariant::Random
                } else {
                    BaselineVariant::AcaeNoise
                };
                Defense::Baseline(BaselineConfig {
                    variant,
                    ratio: c.sampling_ratio,
                    epsilon: 0.0,
                    epochs: c.epochs,
                    learning_rate: c.learning_rate,
                    batch_size: c.batch_size,
                    seed: c.seed,
                })
            }
            Defense::Baseline(c) if c.variant == BaselineVariant::AcaeNoise => {
                Defense::Baseline(BaselineConfig {
                    ratio: 0.0,
                    ..c.clone()
                })
            }
            Defense::Baseline(c) => Defense::Baseline(BaselineConfig {
                epsilon: 0.0,
                ..c.clone()
            }),
            other => other.clone(),
        }
    }

    fn apply(&self, model: &SequentialModel, train: &Dataset) -> Result<SequentialModel> {
        Ok(match self {
            Defense::None => model.clone(),
            Defense::Finest(c) => finetune(model, train, c)?.0,
            Defense::Baseline(c) => finetune_baseline(model, train, c)?.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub defense: Defense,
}

impl Arm {
    pub fn new(name: impl Into<String>, defense: Defense) -> Self {
        Self {
            name: name.into(),
            defense,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rls_rbo: Option<f64>,
    pub rls_jaccard: Option<f64>,
    pub mrr: Option<f64>,
    pub recall_at_10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricSet,
    pub n_test_instances: usize,
    pub n_edits: usize,
    pub runtime_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub per_seed: Vec<GroupTable>,
    pub mean_bucket_rls: Vec<f64>,
    pub mean_relative_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub defense: Defense,
    pub seeds: Vec<SeedResult>,
    pub mean: MetricSet,
    /// One-tailed p for `mean(this arm) > mean(reference arm)`.
    pub p_value_rls_rbo: Option<f64>,
    pub p_value_mrr: Option<f64>,
    pub groups: Option<GroupSummary>,
}

impl ArmReport {
    pub fn values(&self, f: impl Fn(&MetricSet) -> Option<f64>) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| f(&s.metrics)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub knob: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub reference_arm: String,
    pub arms: Vec<ArmReport>,
    pub missing_seeds: Vec<u64>,
    pub n_items: usize,
    /// RBO of a rank list with itself over the full catalog.
    pub rbo_identity: f64,
    pub sweep: Option<SweepPoint>,
    pub runtime_secs: f64,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == name)
    }

    pub fn failed(&self) -> bool {
        !self.missing_seeds.is_empty()
    }

    pub fn metric_rows(&self) -> Vec<crate::metrics::MetricRow> {
        let mut rows = Vec::new();
        for a in &self.arms {
            for s in &a.seeds {
                let m = &s.metrics;
                for (name, v) in [
                    ("rls_rbo", m.rls_rbo),
                    ("rls_jaccard", m.rls_jaccard),
                    ("mrr", m.mrr),
                    ("recall_at_10", m.recall_at_10),
                ] {
                    if let Some(value) = v {
                        rows.push(crate::metrics::MetricRow {
                            run: self.name.clone(),
                            arm: a.arm.clone(),
                            seed: Some(s.seed),
                            metric: name.into(),
                            value,
                        });
                    }
                }
            }
        }
        rows
    }
}

/// Filtered, split data shared by every seed and arm.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_instances: Vec<Instance>,
    pub test_instances: Vec<Instance>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let raw = match &cfg.data.path {
        Some(p) => load_interactions(p, Format::Tsv)?,
        None => synth_generate(
            cfg.data.n_users,
            cfg.data.n_items,
            cfg.data.seed,
            cfg.data.regime,
        ),
    };
    let ds = filter_min_interactions(&raw, cfg.split.min_user_interactions);
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, test) = chronological_split(&ds, &cfg.split)?;
    let train_instances = build_instances(&train, &cfg.split);
    let test_instances = build_test_instances(&train, &test, &cfg.split);
    Ok(PreparedData {
        train,
        test,
        train_instances,
        test_instances,
    })
}

pub fn build_attack(
    train: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<PerturbationPlan> {
    let n = budget_count(cfg.attack.budget, train.len());
    let choice = cfg.attack.edit_kind.choice();
    let mut plan = match cfg.attack.selector {
        Selector::Casper => select_casper(train, n, seed, choice),
        Selector::Random => select_random(train, n, seed, choice),
        Selector::EarliestRandom => select_earliest_random(train, n, seed, choice),
        Selector::LatestRandom => select_latest_random(train, n, seed, choice),
    }?;
    plan.budget_fraction = cfg.attack.budget;
    Ok(plan)
}

fn rank_all(
    model: &SequentialModel,
    instances: &[Instance],
) -> Result<BTreeMap<InstanceId, RankList>> {
    let scores = model.score_instances(instances)?;
    instances
        .iter()
        .zip(scores)
        .map(|(i, s)| Ok((i.id, rank(&s)?)))
        .collect()
}

struct SeedContext {
    base: SequentialModel,
    twin_base: SequentialModel,
    perturbed: Dataset,
    n_edits: usize,
    user_mrr: BTreeMap<u32, f64>,
}

fn seed_context(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<SeedContext> {
    let mcfg = crate::models::ModelConfig { seed, ..cfg.model };
    let n_items = data.train.n_items();
    let theta0 = init_model(&mcfg, n_items)?;
    let (base, _) = train_base(&theta0, &data.train_instances, &mcfg)?;
    let plan = build_attack(&data.train, cfg, seed)?;
    let perturbed = apply_plan(&data.train, &plan)?;
    let twin_base = if plan.is_empty() {
        base.clone()
    } else {
        let inst = build_instances(&perturbed, &cfg.split);
        train_base(&theta0, &inst, &mcfg)?.0
    };
    let lists = rank_all(&base, &data.test_instances)?;
    let mut rr: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for inst in &data.test_instances {
        let r = lists[&inst.id]
            .rank_of(inst.target)
            .expect("target in catalog");
        rr.entry(inst.id.user).or_default().push(1.0 / r as f64);
    }
    let user_mrr = rr
        .into_iter()
        .map(|(u, v)| (u, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    Ok(SeedContext {
        base,
        twin_base,
        perturbed,
        n_edits: plan.len(),
        user_mrr,
    })
}

struct ArmSeed {
    result: SeedResult,
    groups: Option<GroupTable>,
}

fn evaluate_pair(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    ctx: &SeedContext,
    defended: &SequentialModel,
    twin: &SequentialModel,
) -> Result<(MetricSet, Option<GroupTable>)> {
    let a = rank_all(defended, &data.test_instances)?;
    let b = rank_all(twin, &data.test_instances)?;
    let targets: BTreeMap<InstanceId, u32> = data
        .test_instances
        .iter()
        .map(|i| (i.id, i.target))
        .collect();
    let sim_rbo = rls_per_instance(&a, &b, Similarity::Rbo, &cfg.metrics)?;
    let sim_jac = rls_per_instance(&a, &b, Similarity::Jaccard, &cfg.metrics)?;
    let mean =
        |m: &BTreeMap<InstanceId, f64>| shifted_mean(&m.values().copied().collect::<Vec<_>>());
    let metrics = MetricSet {
        rls_rbo: Some(mean(&sim_rbo)),
        rls_jaccard: Some(mean(&sim_jac)),
        mrr: Some(mrr(&a, &targets)),
        recall_at_10: Some(recall_at_k(&a, &targets, 10)),
    };
    let groups = (ctx.user_mrr.len() >= cfg.quantiles && cfg.quantiles > 0)
        .then(|| group_stability_report(&ctx.user_mrr, &sim_rbo, cfg.quantiles))
        .transpose()?;
    Ok((metrics, groups))
}

type Trained = std::result::Result<(SequentialModel, SequentialModel), String>;

/// Runs every arm on every seed with shared base models and attack plans.
/// A failing seed is recorded in the report rather than aborting the run.
pub fn run_arms(cfg: &ExperimentConfig, arms: &[Arm]) -> Result<ExperimentReport> {
    cfg.validate()?;
    if arms.is_empty() {
        return Err(Error::Config("no arms to run".into()));
    }
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    cfg.metrics.validate(data.train.n_items())?;
    let mut per_arm: Vec<Vec<ArmSeed>> = arms.iter().map(|_| Vec::new()).collect();
    let mut missing = Vec::new();
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        log::info!("{}: seed {seed}", cfg.name);
        let ctx = match seed_context(cfg, &data, seed) {
            Ok(c) => c,
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                missing.push(seed);
                for out in &mut per_arm {
                    out.push(ArmSeed {
                        result: SeedResult {
                            seed,
                            metrics: MetricSet::default(),
                            n_test_instances: data.test_instances.len(),
                            n_edits: 0,
                            runtime_secs: t0.elapsed().as_secs_f64(),
                            error: Some(e.to_string()),
                        },
                        groups: None,
                    });
                }
                continue;
            }
        };
        let mut cache: HashMap<String, Trained> = HashMap::new();
        let mut seed_failed = false;
        for (ai, arm) in arms.iter().enumerate() {
            let ta = Instant::now();
            let defense = arm.defense.seeded(seed).canonical();
            let key = serde_json::to_string(&defense)?;
            let trained = cache
                .entry(key)
                .or_insert_with(|| {
                    log::info!("  seed {seed}: training arm {}", arm.name);
                    let run = || -> Result<(SequentialModel, SequentialModel)> {
                        let defended = defense.apply(&ctx.base, &data.train)?;
                        let twin = match cfg.twin_mode {
                            TwinMode::Retrain => defense.apply(&ctx.twin_base, &ctx.perturbed)?,
                            TwinMode::FrozenCheckpoint => ctx.twin_base.clone(),
                            TwinMode::SharedBase if defense == Defense::None => {
                                ctx.twin_base.clone()
                            }
                            TwinMode::SharedBase => defense.apply(&ctx.base, &ctx.perturbed)?,
                        };
                        Ok((defended, twin))
                    };
                    run().map_err(|e| e.to_string())
                })
                .clone();
            let outcome = trained.and_then(|(d, t)| {
                evaluate_pair(cfg, &data, &ctx, &d, &t).map_err(|e| e.to_string())
            });
            let (metrics, groups, error) = match outcome {
                Ok((m, g)) => (m, g, None),
                Err(e) => {
                    log::error!("seed {seed} arm {} failed: {e}", arm.name);
                    seed_failed = true;
                    (MetricSet::default(), None, Some(e))
                }
            };
            per_arm[ai].push(ArmSeed {
                result: SeedResult {
                    seed,
                    metrics,
                    n_test_instances: data.test_instances.len(),
                    n_edits: ctx.n_edits,
                    runtime_secs: ta.elapsed().as_secs_f64(),
                    error,
                },
                groups,
            });
        }
        if seed_failed {
            missing.push(seed);
        }
    }
    let reference = arms
        .iter()
        .find(|a| a.name == "none")
        .unwrap_or(&arms[0])
        .name
        .clone();
    let mut reports: Vec<ArmReport> = arms
        .iter()
        .zip(per_arm)
        .map(|(arm, outs)| summarize(arm, outs))
        .collect();
    let ref_idx = reports
        .iter()
        .position(|a| a.arm == reference)
        .expect("reference arm");
    let ref_rbo = reports[ref_idx].values(|m| m.rls_rbo);
    let ref_mrr = reports[ref_idx].values(|m| m.mrr);
    for r in &mut reports {
        r.p_value_rls_rbo = ttest_one_tailed(&r.values(|m| m.rls_rbo), &ref_rbo).ok();
        r.p_value_mrr = ttest_one_tailed(&r.values(|m| m.mrr), &ref_mrr).ok();
    }
    let n_items = data.train.n_items();
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        name: cfg.name.clone(),
        reference_arm: reference,
        arms: reports,
        missing_seeds: missing,
        n_items,
        rbo_identity: 1.0 - cfg.metrics.rbo_p.powf(n_items as f64),
        sweep: None,
        runtime_secs: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| shifted_mean(v))
}

fn summarize(arm: &Arm, outs: Vec<ArmSeed>) -> ArmReport {
    let seeds: Vec<SeedResult> = outs.iter().map(|o| o.result.clone()).collect();
    let col = |f: fn(&MetricSet) -> Option<f64>| -> Option<f64> {
        mean_opt(
            &seeds
                .iter()
                .filter_map(|s| f(&s.metrics))
                .collect::<Vec<_>>(),
        )
    };
    let mean = MetricSet {
        rls_rbo: col(|m| m.rls_rbo),
        rls_jaccard: col(|m| m.rls_jaccard),
        mrr: col(|m| m.mrr),
        recall_at_10: col(|m| m.recall_at_10),
    };
    let tables: Vec<GroupTable> = outs.into_iter().filter_map(|o| o.groups).collect();
    let groups = (!tables.is_empty()).then(|| {
        let q = tables[0].buckets.len();
        let mean_bucket_rls = (0..q)
            .map(|b| {
                shifted_mean(
                    &tables
                        .iter()
                        .map(|t| t.buckets[b].mean_rls)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let gaps: Vec<f64> = tables.iter().filter_map(|t| t.relative_gap).collect();
        GroupSummary {
            per_seed: tables,
            mean_bucket_rls,
            mean_relative_gap: mean_opt(&gaps),
        }
    });
    ArmReport {
        arm: arm.name.clone(),
        defense: arm.defense.clone(),
        seeds,
        mean,
        p_value_rls_rbo: None,
        p_value_mrr: None,
        groups,
    }
}

fn configured_defense(cfg: &ExperimentConfig) -> Option<Arm> {
    match cfg.defense {
        DefenseKind::None => None,
        DefenseKind::Finest => Some(Arm::new("finest", Defense::Finest(cfg.finest.clone()))),
        DefenseKind::Baseline => Some(Arm::new(
            cfg.baseline.variant.name(),
            Defense::Baseline(cfg.baseline.clone()),
        )),
    }
}

/// The no-defense arm plus the configured defense, twin-retrained per seed.
pub fn run_twin_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut arms = vec![Arm::new("none", Defense::None)];
    arms.extend(configured_defense(cfg));
    run_arms(cfg, &arms)
}

/// The five ablation arms of FINEST.
pub fn ablation_arms(f: &FinestConfig) -> Vec<Arm> {
    let fin = |c: FinestConfig| Defense::Finest(c);
    vec![
        Arm::new("full", fin(f.clone())),
        Arm::new(
            "no_simulation",
            fin(FinestConfig {
                simulate: false,
                ..f.clone()
            }),
        ),
        Arm::new(
            "no_regularization",
            fin(FinestConfig {
                lambda: 0.0,
                ..f.clone()
            }),
        ),
        Arm::new(
            "no_first_term",
            fin(FinestConfig {
                use_first: false,
                ..f.clone()
            }),
        ),
        Arm::new(
            "no_second_term",
            fin(FinestConfig {
                use_second: false,
                ..f.clone()
            }),
        ),
    ]
}

/// Ablation arms alongside the no-defense reference.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.defense != DefenseKind::Finest {
        return Err(Error::Config("ablation requires defense = finest".into()));
    }
    let mut arms = vec![Arm::new("none", Defense::None)];
    arms.extend(ablation_arms(&cfg.finest));
    run_arms(cfg, &arms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKnob {
    Epochs,
    Ratio,
    TopK,
    Lambda,
}

impl std::str::FromStr for SweepKnob {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "epochs" => Ok(SweepKnob::Epochs),
            "ratio" => Ok(SweepKnob::Ratio),
            "k" | "top_k" => Ok(SweepKnob::TopK),
            "lambda" => Ok(SweepKnob::Lambda),
            other => Err(format!("unknown sweep knob `{other}`")),
        }
    }
}

impl SweepKnob {
    pub fn name(self) -> &'static str {
        match self {
            SweepKnob::Epochs => "epochs",
            SweepKnob::Ratio => "ratio",
            SweepKnob::TopK => "top_k",
            SweepKnob::Lambda => "lambda",
        }
    }

    pub fn apply(self, base: &FinestConfig, value: f64) -> Result<FinestConfig> {
        let whole = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!(
                    "{} needs a whole number, got {value}",
                    self.name()
                )))
            }
        };
        let mut c = base.clone();
        match self {
            SweepKnob::Epochs => c.epochs = whole()?,
            SweepKnob::Ratio => c.sampling_ratio = value,
            SweepKnob::TopK => c.top_k = whole()?,
            SweepKnob::Lambda => c.lambda = value,
        }
        c.validate()?;
        Ok(c)
    }
}

/// One report per knob value, each holding the no-defense arm and FINEST
/// at that value. All values share seeds, base models and attack plans.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    knob: SweepKnob,
    values: &[f64],
) -> Result<Vec<ExperimentReport>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut arms = vec![Arm::new("none", Defense::None)];
    for &v in values {
        let c = knob.apply(&cfg.finest, v)?;
        arms.push(Arm::new(
            format!("finest[{}={v}]", knob.name()),
            Defense::Finest(c),
        ));
    }
    let all = run_arms(cfg, &arms)?;
    let none = all.arms[0].clone();
    Ok(values
        .iter()
        .zip(&all.arms[1..])
        .map(|(&v, a)| {
            let mut arm = a.clone();
            arm.arm = "finest".into();
            let mut config = cfg.clone();
            if let Defense::Finest(c) = &arm.defense {
                config.finest = c.clone();
            }
            ExperimentReport {
                name: format!("{}-{}={v}", cfg.name, knob.name()),
                arms: vec![none.clone(), arm],
                sweep: Some(SweepPoint {
                    knob: knob.name().into(),
                    value: v,
                }),
                config,
                ..all.clone()
            }
        })
        .collect())
}
