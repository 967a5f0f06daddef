//! Command-line front end.
//!
//! Every artifact lands under one run directory:
//!
//! ```text
//! <run_dir>/instructions/   instruction store
//! <run_dir>/predictions/    <mode>-<task>.jsonl and .meta.json sidecars
//! <run_dir>/reports/        evaluation, comparison and sweep reports
//! <run_dir>/cache/          replay cache
//! <run_dir>/ledger.jsonl    every model call
//! <run_dir>/manifest.json   artifact index
//! ```
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration or
//! validation failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::cascade::{run_cascade, InstructionSet};
use crate::catalog::{load_catalog, target_pairs, Catalog, LabeledCase, Task};
use crate::classifier::{Classifier, ParsePolicy, PredictionSet, PromptMode};
use crate::config::{BackendChoice, RunConfig};
use crate::error::{Error, IntegrityError, Result};
use crate::gateway::{estimate_cost, read_ledger, write_ledger, Gateway, Purpose};
use crate::instruction::{load_seed_file, SeedSet};
use crate::metrics::{evaluate, paired_bootstrap, render_table, BootstrapConfig, BootstrapMetric};
use crate::store::InstructionStore;
use crate::sweep::{SweepSpec, Sweeper};

#[derive(Debug, Parser)]
#[command(name = "prompt-cascade", version, about = "Instruction cascade and attribute quality checks")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// mock, http or replay.
    #[arg(long, global = true)]
    pub backend: Option<BackendChoice>,
    /// Mock backend script (JSON).
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    #[arg(long, global = true)]
    pub prices: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the instruction cascade and write the instruction store.
    Generate(GenerateArgs),
    /// Classify the catalog's labeled cases.
    Classify(ClassifyArgs),
    /// Score a prediction file against the catalog's gold labels.
    Evaluate(EvaluateArgs),
    /// Paired bootstrap comparison of two prediction files.
    Compare(CompareArgs),
    /// Two-phase (T, M) sweep on a tuning catalog.
    Sweep(SweepArgs),
    /// Price the calls recorded in a ledger.
    Cost(CostArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Iterations, T.
    #[arg(short = 't', long)]
    pub iterations: Option<u32>,
    /// Few-shots per call, M.
    #[arg(short = 'm', long)]
    pub fewshots: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// baseline, cot or apc.
    #[arg(long)]
    pub mode: Option<PromptMode>,
    /// correctness or applicability.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub model_id: Option<String>,
    /// Instruction store; defaults to `<run_dir>/instructions`.
    #[arg(long)]
    pub instructions: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Fail on unparseable output instead of defaulting to the positive class.
    #[arg(long)]
    pub hard_fail: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub predictions: PathBuf,
    #[arg(long)]
    pub task: Option<Task>,
    /// Authoring effort per PC-SA pair, echoed into the report.
    #[arg(long)]
    pub effort_minutes: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// negative_f1, positive_f1 or macro_f1.
    #[arg(long, default_value = "negative_f1")]
    pub metric: BootstrapMetric,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Comma-separated T values; 0 is chain-of-thought without instructions.
    #[arg(long = "t", value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
    pub t_values: Vec<u32>,
    /// Comma-separated M values.
    #[arg(long = "m", value_delimiter = ',', default_value = "2,4,6,8")]
    pub m_values: Vec<usize>,
    #[arg(long, default_value_t = crate::cascade::DEFAULT_FEWSHOTS)]
    pub default_m: usize,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Defaults to `<run_dir>/ledger.jsonl`.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Only price calls of one purpose: instruction_gen or classification.
    #[arg(long)]
    pub purpose: Option<String>,
    /// Also report cost per PC-SA pair over this many pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.run_dir {
            config.run_dir = Some(v.clone());
        }
        if let Some(v) = &self.catalog {
            config.catalog = Some(v.clone());
        }
        if let Some(v) = self.backend {
            config.backend.kind = v;
        }
        if let Some(v) = &self.script {
            config.backend.script = Some(v.clone());
        }
        if let Some(v) = &self.base_url {
            config.backend.base_url = Some(v.clone());
        }
        if let Some(v) = self.max_in_flight {
            config.backend.max_in_flight = v;
        }
        if let Some(v) = &self.prices {
            config.prices = Some(v.clone());
        }
        match &self.command {
            Command::Generate(a) => {
                if let Some(v) = &a.seeds {
                    config.seeds = Some(v.clone());
                }
                if let Some(v) = a.iterations {
                    config.cascade.iterations = v;
                }
                if let Some(v) = a.fewshots {
                    config.cascade.fewshots = v;
                }
                if let Some(v) = a.seed {
                    config.cascade.seed = v;
                }
                if let Some(v) = &a.model_id {
                    config.cascade.model_id = v.clone();
                }
            }
            Command::Classify(a) => {
                if let Some(v) = a.mode {
                    config.classify.mode = v;
                }
                if let Some(v) = a.task {
                    config.classify.task = v;
                }
                if let Some(v) = &a.model_id {
                    config.classify.model_id = v.clone();
                }
                if let Some(v) = &a.rules {
                    config.classify.rules = Some(v.clone());
                }
                config.classify.hard_fail |= a.hard_fail;
            }
            Command::Evaluate(a) => {
                if let Some(v) = a.effort_minutes {
                    config.classify.effort_minutes = Some(v);
                }
            }
            Command::Sweep(a) => {
                if let Some(v) = &a.seeds {
                    config.seeds = Some(v.clone());
                }
                if let Some(v) = a.task {
                    config.classify.task = v;
                }
                if let Some(v) = a.seed {
                    config.cascade.seed = v;
                }
            }
            Command::Compare(_) | Command::Cost(_) => {}
        }
        config.check_paths()?;
        Ok(config)
    }
}

/// Parses `args` and runs the command, writing the summary to `out`.
/// Returns the process exit code.
pub fn main_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let config = cli.run_config()?;
    let run_dir = config.run_dir();
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;
    match &cli.command {
        Command::Generate(_) => cmd_generate(&config, out),
        Command::Classify(args) => cmd_classify(&config, args, out),
        Command::Evaluate(args) => cmd_evaluate(&config, args, out),
        Command::Compare(args) => cmd_compare(&config, args, out),
        Command::Sweep(args) => cmd_sweep(&config, args, out),
        Command::Cost(args) => cmd_cost(&config, args, out),
    }
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| Error::io("writing output", e))
}

fn load_configured_catalog(config: &RunConfig) -> Result<Catalog> {
    load_catalog(config.catalog_path()?)
}

fn load_seed_pool(config: &RunConfig) -> Result<Vec<crate::instruction::Instruction>> {
    let path = config
        .seeds
        .as_ref()
        .ok_or_else(|| Error::Config("no seed file configured".into()))?;
    load_seed_file(path)
}

fn append_ledger(run_dir: &Path, gateway: &Gateway) -> Result<()> {
    let path = run_dir.join("ledger.jsonl");
    let mut entries = if path.exists() { read_ledger(&path)? } else { Vec::new() };
    entries.extend(gateway.ledger());
    write_ledger(&path, &entries)
}

/// Records an artifact in `<run_dir>/manifest.json`, keyed by its path
/// relative to the run directory.
fn record_artifact(run_dir: &Path, artifact: &Path, details: Value) -> Result<()> {
    let path = run_dir.join("manifest.json");
    let mut manifest: BTreeMap<String, Value> = match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::json("run manifest", e))?,
        Err(_) => BTreeMap::new(),
    };
    let key = artifact.strip_prefix(run_dir).unwrap_or(artifact).display().to_string();
    manifest.insert(key, details);
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json("run manifest", e))?;
    fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json("report", e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn cost_line(config: &RunConfig, gateway: &Gateway) -> Result<String> {
    Ok(match config.price_table()? {
        Some(prices) => {
            let report = estimate_cost(&gateway.ledger(), &prices)?;
            format!("cost: {:.6} ({} call(s), {:.6} per call)\n", report.total, report.calls, report.per_call)
        }
        None => "cost: no price table configured\n".into(),
    })
}

fn cmd_generate(config: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let catalog = load_configured_catalog(config)?;
    let cascade = config.cascade.to_config();
    cascade.validate()?;
    let pool = load_seed_pool(config)?;
    let seeds = SeedSet::first(&pool, cascade.fewshots)?;
    seeds.check_against(&catalog)?;
    let targets = target_pairs(&catalog);
    if targets.is_empty() {
        return Err(Error::Argument("catalog has no labeled cases to derive target pairs from".into()));
    }
    let run_dir = config.run_dir();
    let store = InstructionStore::open(run_dir.join("instructions"))?;
    let gateway = config.gateway()?;
    let outcome = run_cascade(&catalog, &seeds, &cascade, &targets, &gateway, Some(&store))?;
    append_ledger(&run_dir, &gateway)?;

    let covered = targets.iter().filter(|t| outcome.instructions.get(t).is_some()).count();
    let mut summary = format!(
        "generation calls: {}\nnetwork calls: {}\ninstructions: {}\ncoverage: {covered}/{} target pairs\nresumed iterations: {}\nfailures: {}\n",
        outcome.generation_calls,
        gateway.upstream_calls(),
        outcome.instructions.len(),
        targets.len(),
        outcome.resumed_iterations,
        outcome.failures.len(),
    );
    for f in &outcome.failures {
        summary.push_str(&format!("  ({}, {}) iteration {}: {}\n", f.pc_id, f.sa_id, f.iteration, f.reason));
    }
    summary.push_str(&cost_line(config, &gateway)?);
    emit(out, summary)?;
    record_artifact(
        &run_dir,
        store.dir(),
        json!({
            "command": "generate",
            "iterations": cascade.iterations,
            "fewshots": cascade.fewshots,
            "seed": cascade.rng_seed,
            "instructions": outcome.instructions.len(),
            "failures": outcome.failures.len(),
            "instruction_set_id": outcome.instructions.fingerprint(),
        }),
    )
}

fn task_cases(catalog: &Catalog, task: Task) -> Vec<LabeledCase> {
    catalog.cases().iter().filter(|c| c.task == task).cloned().collect()
}

fn cmd_classify(config: &RunConfig, args: &ClassifyArgs, out: &mut dyn Write) -> Result<()> {
    let catalog = load_configured_catalog(config)?;
    let settings = &config.classify;
    let cases = task_cases(&catalog, settings.task);
    if cases.is_empty() {
        return Err(Error::Argument(format!("catalog has no {} cases", settings.task)));
    }
    let run_dir = config.run_dir();
    let instructions = match settings.mode {
        PromptMode::Apc => {
            let dir = args.instructions.clone().unwrap_or_else(|| run_dir.join("instructions"));
            if !dir.is_dir() {
                return Err(Error::Config(format!("instruction store {} does not exist", dir.display())));
            }
            Some(InstructionSet::from_store(&InstructionStore::open(dir)?)?)
        }
        _ => None,
    };
    let rules = config.rule_book()?;
    let gateway = config.gateway()?;
    let policy = if settings.hard_fail { ParsePolicy::HardFail } else { ParsePolicy::DefaultPositive };
    let classifier = Classifier::new(&catalog, &gateway, &rules, &settings.model_id).with_policy(policy);
    let result = classifier.run_task(&cases, settings.mode, instructions.as_ref());
    append_ledger(&run_dir, &gateway)?;
    let preds = result?;

    let path = args
        .output
        .clone()
        .unwrap_or_else(|| run_dir.join("predictions").join(format!("{}-{}.jsonl", settings.mode, settings.task)));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    preds.save(&path)?;
    emit(
        out,
        format!(
            "classified: {} case(s) ({} mode, {} task)\ndefaulted parses: {}\nclassification calls: {}\nnetwork calls: {}\npredictions: {}\n{}",
            preds.results.len(),
            settings.mode,
            settings.task,
            preds.defaulted(),
            gateway.calls_for(Purpose::Classification),
            gateway.upstream_calls(),
            path.display(),
            cost_line(config, &gateway)?,
        ),
    )?;
    record_artifact(
        &run_dir,
        &path,
        json!({
            "command": "classify",
            "mode": settings.mode,
            "task": settings.task,
            "model_id": settings.model_id,
            "cases": preds.results.len(),
            "defaulted": preds.defaulted(),
            "instruction_set_id": preds.meta.instruction_set_id,
        }),
    )
}

fn load_predictions(path: &Path) -> Result<PredictionSet> {
    if !path.exists() {
        return Err(Error::Config(format!("prediction file {} does not exist", path.display())));
    }
    let preds = PredictionSet::load(path)?;
    if preds.results.is_empty() {
        return Err(Error::Argument(format!("prediction file {} is empty", path.display())));
    }
    Ok(preds)
}

/// Every labeled case of the predicted task must have exactly one prediction.
fn check_coverage(preds: &PredictionSet, catalog: &Catalog) -> Result<()> {
    let task = preds.results[0].task;
    let predicted: std::collections::BTreeSet<&str> = preds.results.iter().map(|r| r.case_id.as_str()).collect();
    if predicted.len() != preds.results.len() {
        return Err(IntegrityError::CaseSetMismatch("duplicate case ids in predictions".into()).into());
    }
    let missing: Vec<&str> = catalog
        .cases()
        .iter()
        .filter(|c| c.task == task && !predicted.contains(c.id.as_str()))
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(IntegrityError::CaseSetMismatch(format!(
            "{} labeled case(s) have no prediction, first `{}`",
            missing.len(),
            missing[0]
        ))
        .into());
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "predictions".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_evaluate(config: &RunConfig, args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let catalog = load_configured_catalog(config)?;
    let preds = load_predictions(&args.predictions)?;
    check_coverage(&preds, &catalog)?;
    let mut report = evaluate(&preds, &catalog, args.task)?;
    report.effort_minutes = config.classify.effort_minutes;
    let run_dir = config.run_dir();
    let base = run_dir.join("reports").join(format!("eval-{}", stem(&args.predictions)));
    let json_path = base.with_extension("json");
    write_json(&json_path, &report)?;
    let table = report.to_table();
    write_text(&base.with_extension("txt"), &table)?;
    emit(
        out,
        format!(
            "{table}cases: {}  defaulted parses: {}\nreport: {}\n",
            report.total,
            report.defaulted,
            json_path.display()
        ),
    )?;
    record_artifact(&run_dir, &json_path, json!({"command": "evaluate", "predictions": args.predictions}))
}

fn cmd_compare(config: &RunConfig, args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let catalog = load_configured_catalog(config)?;
    let a = load_predictions(&args.a)?;
    let b = load_predictions(&args.b)?;
    let bootstrap = BootstrapConfig {
        draws: args.draws,
        fraction: args.fraction,
        seed: args.seed,
        metric: args.metric,
    };
    let result = paired_bootstrap(&a, &b, &catalog, &bootstrap)?;
    let reports = [evaluate(&a, &catalog, None)?, evaluate(&b, &catalog, None)?];
    let run_dir = config.run_dir();
    let path = run_dir
        .join("reports")
        .join(format!("compare-{}-vs-{}.json", stem(&args.a), stem(&args.b)));
    write_json(&path, &json!({"a": args.a, "b": args.b, "bootstrap": result, "reports": reports}))?;
    emit(
        out,
        format!(
            "{}mean delta F1 ({:?}, A - B): {:.4}\np-value: {:.6} ({} draws, fraction {}, seed {})\nreport: {}\n",
            render_table(&reports),
            result.metric,
            result.mean_delta_f1,
            result.p_value,
            result.draws,
            result.fraction,
            result.seed,
            path.display()
        ),
    )?;
    record_artifact(&run_dir, &path, json!({"command": "compare"}))
}

fn cmd_sweep(config: &RunConfig, args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let catalog = load_configured_catalog(config)?;
    let pool = load_seed_pool(config)?;
    let rules = config.rule_book()?;
    let gateway = config.gateway()?;
    let spec = SweepSpec {
        t_values: args.t_values.clone(),
        m_values: args.m_values.clone(),
        default_m: args.default_m,
        rng_seed: config.cascade.seed,
        generator_model: config.cascade.model_id.clone(),
        classifier_model: config.classify.model_id.clone(),
        task: config.classify.task,
    };
    let sweeper = Sweeper {
        catalog: &catalog,
        seed_pool: &pool,
        gateway: &gateway,
        rules: &rules,
    };
    let result = sweeper.run(&spec);
    let run_dir = config.run_dir();
    append_ledger(&run_dir, &gateway)?;
    let report = result?;
    let path = run_dir.join("reports").join("sweep.json");
    write_json(&path, &report)?;
    emit(
        out,
        format!(
            "{}chosen: T={} M={} ({})\nnetwork calls: {}\nreport: {}\n",
            report.to_table(),
            report.chosen_t,
            report.chosen_m,
            report.selection_rule,
            gateway.upstream_calls(),
            path.display()
        ),
    )?;
    record_artifact(
        &run_dir,
        &path,
        json!({"command": "sweep", "chosen_t": report.chosen_t, "chosen_m": report.chosen_m}),
    )
}

fn cmd_cost(config: &RunConfig, args: &CostArgs, out: &mut dyn Write) -> Result<()> {
    let prices = config
        .price_table()?
        .ok_or_else(|| Error::Config("cost needs a price table (--prices)".into()))?;
    let path = args.ledger.clone().unwrap_or_else(|| config.run_dir().join("ledger.jsonl"));
    if !path.exists() {
        return Err(Error::Config(format!("ledger {} does not exist", path.display())));
    }
    let mut ledger = read_ledger(&path)?;
    if let Some(purpose) = &args.purpose {
        let purpose: Purpose = serde_json::from_value(Value::String(purpose.clone()))
            .map_err(|_| Error::Argument(format!("unknown purpose `{purpose}`")))?;
        ledger.retain(|e| e.purpose == purpose);
    }
    let report = estimate_cost(&ledger, &prices)?;
    let mut text = format!(
        "calls: {}\ninput tokens: {}\noutput tokens: {}\nestimated usage: {} call(s)\ntotal: {:.6}\nper call: {:.6}\n",
        report.calls,
        report.input_tokens,
        report.output_tokens,
        report.estimated_calls,
        report.total,
        report.per_call
    );
    if report.zero_calls {
        text.push_str("note: ledger has no calls\n");
    }
    if let Some(pairs) = args.pairs.filter(|p| *p > 0) {
        text.push_str(&format!("per pair: {:.6} over {pairs} pair(s)\n", report.total / pairs as f64));
    }
    emit(out, text)
}
