use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::{Map, Value};

use tive::harness::{
    compare_selectors, resolve_budget, run_lambda_ablation, run_redundancy_sweeps, run_tive_pipeline, train_reference,
    warmup_sample, PipelineConfig, PoolSource, DEFAULT_KEEP_FRACTIONS,
};
use tive::selection::{
    augment_for_plan, baseline_select, build_plan, sampling_scores, select_subset, BaselineMethod, JitterAugmenter,
    SelectedSubset, SubsetManifest, SurplusPolicy,
};
use tive::valuation::{estimate_values_streaming, estimate_values_with, export_values, read_values, ValueReport};
use tive::{generate_synthetic_pool, load_pool, save_pool, DataPool, ReferenceModel, SyntheticPoolSpec};

#[derive(Parser, Debug)]
#[command(name = "tive", version, about = "Gradient-based valuation and selection of multi-task instruction pools")]
struct Cli {
    /// JSON config with flat dotted keys, merged onto the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Selection seed (`seeds.selection`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-instance work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra config override, `key=value` with a JSON value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic pool to `<out>/pool.jsonl`.
    Generate {
        /// Synthetic pool spec (JSON); defaults to the configured pool.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Value every instance and write `<out>/values.csv`.
    Value {
        #[command(flatten)]
        input: Input,
        /// Stream the pool file instead of loading it.
        #[arg(long)]
        streaming: bool,
    },
    /// Select a subset; writes `<out>/subset.json` and `<out>/subset.jsonl`.
    Select {
        #[command(flatten)]
        input: Input,
        /// Values CSV from `value`; computed on the fly when omitted.
        #[arg(long)]
        values: Option<PathBuf>,
        /// Total number of instances to keep (default: `budget_fraction` of the pool)
        #[arg(long)]
        budget: Option<usize>,
        /// Score temperature (default 0.1)
        #[arg(long)]
        lambda: Option<f64>,
        /// `tive` or one of the baselines.
        #[arg(long, default_value = "tive")]
        method: String,
    },
    /// One full pipeline run with baselines.
    Experiment,
    /// Per-task pruning sweep, or a λ ablation with `--lambdas`.
    Sweep {
        /// Tasks to prune (default: all).
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<String>,
        /// Keep fractions, comma separated (default: 1,0.5,0.25,0.125)
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        /// Run the λ ablation at these values instead of the pruning sweep
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// TIVE against every baseline over the configured replicates.
    Compare,
}

#[derive(Args, Debug)]
struct Input {
    /// Pool file; defaults to the configured pool source.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Reference checkpoint; trained on the warm-up sample when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

type CliResult<T> = std::result::Result<T, Failure>;

fn data(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 3,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = std::panic::catch_unwind(|| run(&cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(internal)?;
    }
    let config = effective_config(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| internal(format!("{}: {e}", cli.out.display())))?;
    match &cli.command {
        Command::Generate { spec } => cmd_generate(cli, &config, spec.as_deref()),
        Command::Value { input, streaming } => cmd_value(cli, config, input, *streaming),
        Command::Select {
            input,
            values,
            budget,
            lambda,
            method,
        } => cmd_select(cli, config, input, values.as_deref(), *budget, *lambda, method),
        Command::Experiment => cmd_experiment(cli, &config),
        Command::Sweep {
            tasks,
            fractions,
            lambdas,
        } => cmd_sweep(cli, &config, tasks, fractions, lambdas),
        Command::Compare => cmd_compare(cli, &config),
    }
}

/// Defaults, then the config file, then `--set` pairs, then `--seed`.
fn effective_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut root = serde_json::to_value(PipelineConfig::default()).map_err(internal)?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let file: Map<String, Value> =
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
        for (k, v) in file {
            set_dotted(&mut root, &k, v)?;
        }
    }
    for pair in &cli.overrides {
        let (k, raw) = pair
            .split_once('=')
            .ok_or_else(|| Failure {
                code: 1,
                message: format!("--set expects KEY=VALUE, got `{pair}`"),
            })?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_dotted(&mut root, k, v)?;
    }
    if let Some(seed) = cli.seed {
        set_dotted(&mut root, "seeds.selection", Value::from(seed))?;
    }
    let config: PipelineConfig = serde_json::from_value(root).map_err(|e| data(format!("config: {e}")))?;
    config.validate().map_err(data)?;
    Ok(config)
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(data(format!("config key `{key}` is malformed")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        // The pool source is a one-key enum; switching variant drops the old one.
        if i == 1 && parts[0] == "pool" {
            if let Some(obj) = node.as_object_mut() {
                if !obj.contains_key(*part) {
                    obj.clear();
                }
            }
        }
        let obj = match node {
            Value::Object(m) => m,
            other => {
                *other = Value::Object(Map::new());
                other.as_object_mut().expect("just set")
            }
        };
        if i + 1 == parts.len() {
            let slot = obj.entry(part.to_string()).or_insert(Value::Null);
            if key == "pool" {
                *slot = value;
            } else {
                merge(slot, value);
            }
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn merge(slot: &mut Value, value: Value) {
    match (slot, value) {
        (Value::Object(dst), Value::Object(src)) => {
            for (k, v) in src {
                merge(dst.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, value) => *slot = value,
    }
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(internal)?;
    bytes.push(b'\n');
    write(path, &bytes)
}

fn load_input_pool(config: &PipelineConfig, input: &Input) -> CliResult<DataPool> {
    match &input.pool {
        Some(path) => load_pool(path).map_err(data),
        None => config.pool.load().map_err(data),
    }
}

/// The given checkpoint, or a reference model warmed up on `pool` (saved
/// to `<out>/reference.json`).
fn reference_model(cli: &Cli, config: &PipelineConfig, input: &Input, pool: &DataPool) -> CliResult<ReferenceModel> {
    if let Some(path) = &input.checkpoint {
        return ReferenceModel::load(path).map_err(data);
    }
    let warmup = warmup_sample(config, pool).map_err(data)?;
    let model = train_reference(config, &warmup).map_err(data)?;
    write(&cli.out.join("reference.json"), &model.to_checkpoint_json())?;
    Ok(model)
}

#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    config: &'a PipelineConfig,
    #[serde(flatten)]
    body: T,
}

fn cmd_generate(cli: &Cli, config: &PipelineConfig, spec_path: Option<&Path>) -> CliResult<()> {
    let spec: SyntheticPoolSpec = match spec_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?
        }
        None => match &config.pool {
            PoolSource::Synthetic(spec) => spec.clone(),
            PoolSource::Path(p) => {
                return Err(data(format!("configured pool is a file ({}), not a synthetic spec", p.display())))
            }
        },
    };
    let pool = generate_synthetic_pool(&spec).map_err(data)?;
    let out = cli.out.join("pool.jsonl");
    save_pool(&pool, &out).map_err(internal)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        spec: &'a SyntheticPoolSpec,
        pool_id: String,
        instances: usize,
    }
    write_json(
        &cli.out.join("pool.manifest.json"),
        &Provenance {
            config,
            body: Meta {
                spec: &spec,
                pool_id: pool.pool_id(),
                instances: pool.len(),
            },
        },
    )
}

fn cmd_value(cli: &Cli, config: PipelineConfig, input: &Input, streaming: bool) -> CliResult<()> {
    let report = if streaming {
        let path = input
            .pool
            .as_ref()
            .ok_or_else(|| data("--streaming needs --pool"))?;
        let model = match &input.checkpoint {
            Some(p) => ReferenceModel::load(p).map_err(data)?,
            None => return Err(data("--streaming needs --checkpoint")),
        };
        estimate_values_streaming(&model, path, &config.valuation).map_err(data)?
    } else {
        let pool = load_input_pool(&config, input)?;
        let model = reference_model(cli, &config, input, &pool)?;
        estimate_values_with(&model, &pool, &config.valuation).map_err(data)?
    };
    let scores: HashMap<String, f64> = sampling_scores(&report, config.lambda, config.rescale_task_values)
        .into_iter()
        .map(|s| (s.instance_id, s.score))
        .collect();
    export_values(&report, Some(&scores), cli.out.join("values.csv")).map_err(internal)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        provenance: &'a tive::valuation::Provenance,
        tasks: &'a [tive::valuation::TaskValue],
        instances: usize,
    }
    write_json(
        &cli.out.join("values.manifest.json"),
        &Provenance {
            config: &config,
            body: Meta {
                provenance: &report.provenance,
                tasks: &report.tasks,
                instances: report.instances.len(),
            },
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_select(
    cli: &Cli,
    mut config: PipelineConfig,
    input: &Input,
    values: Option<&Path>,
    budget: Option<usize>,
    lambda: Option<f64>,
    method: &str,
) -> CliResult<()> {
    if let Some(l) = lambda {
        config.lambda = l;
        config.validate().map_err(data)?;
    }
    let pool = load_input_pool(&config, input)?;
    let budget = budget.unwrap_or_else(|| resolve_budget(&config, pool.len()));
    let seed = config.seeds.selection;
    let (subset, source): (SelectedSubset, DataPool) = if method == "tive" {
        let report = match values {
            Some(path) => ValueReport::from_rows(&read_values(path).map_err(data)?).map_err(data)?,
            None => {
                let model = reference_model(cli, &config, input, &pool)?;
                estimate_values_with(&model, &pool, &config.valuation).map_err(data)?
            }
        };
        let plan = build_plan(
            &pool,
            &report,
            budget,
            config.lambda,
            seed,
            config.policy,
            config.rescale_task_values,
        )
        .map_err(data)?;
        let (source, scored) = match config.policy {
            SurplusPolicy::Augment { jitter_std } => {
                augment_for_plan(&pool, &report, &plan, &JitterAugmenter { jitter_std }, seed).map_err(data)?
            }
            SurplusPolicy::Redistribute => (pool.clone(), report),
        };
        (select_subset(&source, &scored, &plan).map_err(data)?, source)
    } else {
        let m: BaselineMethod = method.parse().map_err(|e| Failure {
            code: 1,
            message: format!("{e}"),
        })?;
        let model = if m.needs_model() {
            Some(reference_model(cli, &config, input, &pool)?)
        } else {
            None
        };
        (baseline_select(&pool, m, budget, seed, model.as_ref()).map_err(data)?, pool)
    };
    let chosen = subset.materialize(&source).map_err(data)?;
    save_pool(&chosen, cli.out.join("subset.jsonl")).map_err(internal)?;
    write_json(
        &cli.out.join("subset.json"),
        &Provenance::<&SubsetManifest> {
            config: &config,
            body: &subset.manifest,
        },
    )
}

fn cmd_experiment(cli: &Cli, config: &PipelineConfig) -> CliResult<()> {
    let report = run_tive_pipeline(config).map_err(data)?;
    write(&cli.out.join("experiment.json"), &report.to_json())?;
    write(&cli.out.join("experiment.csv"), report.to_csv().as_bytes())?;
    write_json(
        &cli.out.join("subset.json"),
        &Provenance::<&SubsetManifest> {
            config,
            body: &report.manifest,
        },
    )?;
    write_json(&cli.out.join("timings.json"), &report.timings)
}

fn cmd_sweep(cli: &Cli, config: &PipelineConfig, tasks: &[String], fractions: &[f64], lambdas: &[f64]) -> CliResult<()> {
    if !lambdas.is_empty() {
        let report = run_lambda_ablation(config, lambdas).map_err(data)?;
        write(&cli.out.join("lambda.json"), &report.to_json())?;
        return write(&cli.out.join("lambda.csv"), report.to_csv().as_bytes());
    }
    let task_ids: Vec<String> = if tasks.is_empty() {
        config
            .pool
            .load()
            .map_err(data)?
            .tasks()
            .iter()
            .map(|t| t.task_id().to_string())
            .collect()
    } else {
        tasks.to_vec()
    };
    let refs: Vec<&str> = task_ids.iter().map(String::as_str).collect();
    let fractions = if fractions.is_empty() {
        DEFAULT_KEEP_FRACTIONS.to_vec()
    } else {
        fractions.to_vec()
    };
    let report = run_redundancy_sweeps(config, &refs, &fractions).map_err(data)?;
    write(&cli.out.join("sweep.json"), &report.to_json())?;
    write(&cli.out.join("sweep.csv"), report.to_csv().as_bytes())
}

fn cmd_compare(cli: &Cli, config: &PipelineConfig) -> CliResult<()> {
    let report = compare_selectors(config).map_err(data)?;
    write(&cli.out.join("compare.json"), &report.to_json())?;
    write(&cli.out.join("compare.csv"), report.to_csv().as_bytes())
}
