//! `rankstab` command line: thin wrappers over the library.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rankstab::baselines::{finetune_baseline, BaselineVariant};
use rankstab::dataio::{save_interactions, Dataset, DatasetManifest};
use rankstab::finest::finetune;
use rankstab::harness::{
    build_attack, prepare_data, read_report, run_ablation, run_sweep, run_twin_experiment,
    write_aggregate_csv, write_report, ExperimentConfig, ExperimentReport, PreparedData, SweepKnob,
};
use rankstab::metrics::{mrr, recall_at_k, rls, MetricReport, Similarity};
use rankstab::models::{
    init_model, load_checkpoint, rank, save_checkpoint, train_base, ModelConfig, RankList,
    SequentialModel,
};
use rankstab::perturbation::{apply_plan, plan_to_record};
use rankstab::{Error, Result};

#[derive(Parser)]
#[command(name = "rankstab", version, about = "Rank-list stability toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key-value TOML file, e.g. `model.embed_dim = 32`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set finest.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Start from the desk-scale defaults instead of the full-size ones.
    #[arg(long)]
    desk: bool,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args, Clone)]
struct FinestFlags {
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    margin_first: Option<f64>,
    #[arg(long)]
    margin_second: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train base models, one checkpoint per seed.
    Train(Common),
    /// FINEST fine-tuning of a base checkpoint (or a freshly trained base).
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: FinestFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Comparator fine-tuning.
    FinetuneBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<BaselineVariant>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Build an attack plan on the training split and write the edited data.
    Perturb(Common),
    /// Twin-retraining evaluation, or metrics for given checkpoints.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Twin checkpoint for rank-list stability.
        #[arg(long, requires = "checkpoint")]
        twin: Option<PathBuf>,
    },
    /// FINEST ablation arms against the no-defense reference.
    Ablate(Common),
    /// One-knob sweep of FINEST.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        knob: SweepKnob,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Merge report JSON files into one CSV and print a summary.
    Report {
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "aggregate.csv")]
        csv: PathBuf,
    },
}

fn load_config(c: &Common, extra: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = if c.desk {
        ExperimentConfig::desk_scale()
    } else {
        ExperimentConfig::default()
    };
    if let Some(p) = &c.config {
        cfg = cfg.with_file(&fs::read_to_string(p)?)?;
    }
    let mut pairs: Vec<(String, String)> = extra.to_vec();
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{s}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seeds) = &c.seeds {
        pairs.push(("seeds".into(), format!("{seeds:?}")));
    }
    cfg = cfg.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn finest_pairs(f: &FinestFlags) -> Vec<(String, String)> {
    let mut v = Vec::new();
    let mut push = |k: &str, x: Option<String>| {
        if let Some(x) = x {
            v.push((format!("finest.{k}"), x));
        }
    };
    push("sampling_ratio", f.ratio.map(|x| x.to_string()));
    push("top_k", f.top_k.map(|x| x.to_string()));
    push("epochs", f.epochs.map(|x| x.to_string()));
    push("lambda", f.lambda.map(|x| x.to_string()));
    push("margin_first", f.margin_first.map(|x| x.to_string()));
    push("margin_second", f.margin_second.map(|x| x.to_string()));
    v
}

fn emit(reports: &[ExperimentReport], out: &Path) -> Result<bool> {
    fs::create_dir_all(out)?;
    for r in reports {
        let path = out.join(format!("{}.json", sanitize(&r.name)));
        write_report(r, &path)?;
        println!("wrote {}", path.display());
        print_summary(r);
    }
    let csv = out.join("aggregate.csv");
    write_aggregate_csv(reports, fs::File::create(&csv)?)?;
    println!("wrote {}", csv.display());
    Ok(reports.iter().all(|r| !r.failed()))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.=".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn print_summary(r: &ExperimentReport) {
    println!("{} (reference arm: {})", r.name, r.reference_arm);
    println!(
        "  {:<20} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "arm", "rbo", "jaccard", "mrr", "r@10", "p(rbo)"
    );
    for a in &r.arms {
        println!(
            "  {:<20} {:>8} {:>8} {:>8} {:>8} {:>8}",
            a.arm,
            fmt(a.mean.rls_rbo),
            fmt(a.mean.rls_jaccard),
            fmt(a.mean.mrr),
            fmt(a.mean.recall_at_10),
            fmt(a.p_value_rls_rbo)
        );
    }
    if r.failed() {
        println!("  failed seeds: {:?}", r.missing_seeds);
    }
}

fn base_for_seed(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<SequentialModel> {
    let mcfg = ModelConfig { seed, ..cfg.model };
    let theta0 = init_model(&mcfg, data.train.n_items())?;
    Ok(train_base(&theta0, &data.train_instances, &mcfg)?.0)
}

/// Runs `f` once per seed; failures are reported and make the exit nonzero.
fn per_seed(cfg: &ExperimentConfig, mut f: impl FnMut(u64) -> Result<()>) -> bool {
    let mut ok = true;
    for &seed in &cfg.seeds {
        if let Err(e) = f(seed) {
            eprintln!("seed {seed} failed: {e}");
            ok = false;
        }
    }
    ok
}

fn starting_model(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    checkpoint: &Option<PathBuf>,
    seed: u64,
) -> Result<SequentialModel> {
    match checkpoint {
        Some(p) => Ok(load_checkpoint(p)?.0),
        None => base_for_seed(cfg, data, seed),
    }
}

fn write_log(log: &rankstab::FineTuneLog, path: &Path) -> Result<()> {
    log.write_csv(fs::File::create(path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn rank_lists(
    model: &SequentialModel,
    data: &PreparedData,
) -> Result<BTreeMap<rankstab::dataio::InstanceId, RankList>> {
    let scores = model.score_instances(&data.test_instances)?;
    data.test_instances
        .iter()
        .zip(scores)
        .map(|(i, s)| Ok((i.id, rank(&s)?)))
        .collect()
}

fn evaluate_checkpoints(
    cfg: &ExperimentConfig,
    ckpt: &Path,
    twin: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let data = prepare_data(cfg)?;
    let (model, _) = load_checkpoint(ckpt)?;
    let lists = rank_lists(&model, &data)?;
    let targets = data
        .test_instances
        .iter()
        .map(|i| (i.id, i.target))
        .collect();
    let n = data.test_instances.len();
    let mk = |metric: &str, value: f64| MetricReport {
        metric: metric.into(),
        value,
        n_instances: n,
        config: serde_json::to_value(cfg.metrics).unwrap_or_default(),
    };
    let mut reports = vec![
        mk("mrr", mrr(&lists, &targets)),
        mk("recall_at_10", recall_at_k(&lists, &targets, 10)),
    ];
    if let Some(t) = twin {
        let twin_lists = rank_lists(&load_checkpoint(t)?.0, &data)?;
        reports.push(mk(
            "rls_rbo",
            rls(&lists, &twin_lists, Similarity::Rbo, &cfg.metrics)?,
        ));
        reports.push(mk(
            "rls_jaccard",
            rls(&lists, &twin_lists, Similarity::Jaccard, &cfg.metrics)?,
        ));
    }
    for r in &reports {
        println!("{:<14} {:.6}", r.metric, r.value);
    }
    fs::create_dir_all(out)?;
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&reports)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Train(c) => {
            let cfg = load_config(&c, &[])?;
            let data = prepare_data(&cfg)?;
            fs::create_dir_all(&c.out)?;
            Ok(per_seed(&cfg, |seed| {
                let mcfg = ModelConfig { seed, ..cfg.model };
                let theta0 = init_model(&mcfg, data.train.n_items())?;
                let (model, log) = train_base(&theta0, &data.train_instances, &mcfg)?;
                let path = c.out.join(format!("base-seed{seed}.ckpt"));
                save_checkpoint(&model, log.best_epoch, &path)?;
                fs::write(
                    c.out.join(format!("base-seed{seed}.log.json")),
                    serde_json::to_string_pretty(&log)?,
                )?;
                println!("wrote {} (best epoch {})", path.display(), log.best_epoch);
                Ok(())
            }))
        }
        Cmd::Finetune {
            common,
            flags,
            checkpoint,
        } => {
            let cfg = load_config(&common, &finest_pairs(&flags))?;
            cfg.finest.validate()?;
            let data = prepare_data(&cfg)?;
            fs::create_dir_all(&common.out)?;
            Ok(per_seed(&cfg, |seed| {
                let base = starting_model(&cfg, &data, &checkpoint, seed)?;
                let fc = rankstab::finest::FinestConfig {
                    seed,
                    ..cfg.finest.clone()
                };
                let (model, log) = finetune(&base, &data.train, &fc)?;
                let path = common.out.join(format!("finest-seed{seed}.ckpt"));
                save_checkpoint(&model, fc.epochs, &path)?;
                println!("wrote {}", path.display());
                write_log(
                    &log,
                    &common.out.join(format!("finest-seed{seed}.epochs.csv")),
                )
            }))
        }
        Cmd::FinetuneBaseline {
            common,
            variant,
            epsilon,
            checkpoint,
        } => {
            let mut extra = Vec::new();
            if let Some(v) = variant {
                extra.push(("baseline.variant".into(), v.name().into()));
            }
            if let Some(e) = epsilon {
                extra.push(("baseline.epsilon".into(), e.to_string()));
            }
            let cfg = load_config(&common, &extra)?;
            cfg.baseline.validate()?;
            let data = prepare_data(&cfg)?;
            fs::create_dir_all(&common.out)?;
            let name = cfg.baseline.variant.name();
            Ok(per_seed(&cfg, |seed| {
                let base = starting_model(&cfg, &data, &checkpoint, seed)?;
                let bc = rankstab::baselines::BaselineConfig {
                    seed,
                    ..cfg.baseline.clone()
                };
                let (model, log) = finetune_baseline(&base, &data.train, &bc)?;
                let path = common.out.join(format!("{name}-seed{seed}.ckpt"));
                save_checkpoint(&model, bc.epochs, &path)?;
                println!("wrote {}", path.display());
                write_log(
                    &log,
                    &common.out.join(format!("{name}-seed{seed}.epochs.csv")),
                )
            }))
        }
        Cmd::Perturb(c) => {
            let cfg = load_config(&c, &[])?;
            let data = prepare_data(&cfg)?;
            fs::create_dir_all(&c.out)?;
            Ok(per_seed(&cfg, |seed| {
                let plan = build_attack(&data.train, &cfg, seed)?;
                let edited: Dataset = apply_plan(&data.train, &plan)?;
                let rec = plan_to_record(&plan, &data.train)?;
                let plan_path = c.out.join(format!("plan-seed{seed}.json"));
                fs::write(&plan_path, serde_json::to_string_pretty(&rec)?)?;
                let data_path = c.out.join(format!("perturbed-seed{seed}.tsv"));
                let manifest = DatasetManifest {
                    source: "perturbed training split".into(),
                    seed: Some(seed),
                    split: Some(cfg.split),
                    ..DatasetManifest::default()
                };
                save_interactions(&edited, &data_path, Some(&manifest))?;
                println!(
                    "{} edits -> {}, {}",
                    plan.len(),
                    plan_path.display(),
                    data_path.display()
                );
                Ok(())
            }))
        }
        Cmd::Evaluate {
            common,
            checkpoint,
            twin,
        } => {
            let cfg = load_config(&common, &[])?;
            match checkpoint {
                Some(ck) => {
                    evaluate_checkpoints(&cfg, &ck, twin.as_deref(), &common.out)?;
                    Ok(true)
                }
                None => emit(&[run_twin_experiment(&cfg)?], &common.out),
            }
        }
        Cmd::Ablate(c) => {
            let cfg = load_config(&c, &[])?;
            emit(&[run_ablation(&cfg)?], &c.out)
        }
        Cmd::Sweep {
            common,
            knob,
            values,
        } => {
            let cfg = load_config(&common, &[])?;
            emit(&run_sweep(&cfg, knob, &values)?, &common.out)
        }
        Cmd::Report { reports, csv } => {
            let loaded: Vec<ExperimentReport> = reports
                .iter()
                .map(|p| read_report(p))
                .collect::<Result<_>>()?;
            for r in &loaded {
                print_summary(r);
            }
            write_aggregate_csv(&loaded, fs::File::create(&csv)?)?;
            println!("wrote {}", csv.display());
            Ok(loaded.iter().all(|r| !r.failed()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
