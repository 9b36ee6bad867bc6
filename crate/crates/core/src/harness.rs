//! End-to-end experiments on a pool: warm-up, valuation, selection,
//! retraining and held-out evaluation, plus the per-task pruning sweep, the
//! selector comparison and the λ ablation.
//!
//! Every run is a pure function of its [`PipelineConfig`]; timings are kept
//! out of the serialized reports so repeated runs are byte-identical.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EvalReport, Optimizer, ReferenceModel, TrainConfig};
use crate::pool::{ceil_count, generate_synthetic_pool, load_pool, prune_task, DataPool, Instance, SyntheticPoolSpec};
use crate::rng::{stream_rng, streams};
use crate::selection::{
    augment_for_plan, baseline_select, build_plan, largest_remainder, sampling_scores, score_spread,
    select_subset, BaselineMethod, JitterAugmenter, SelectedSubset, SelectionPlan, SubsetManifest, SurplusPolicy,
    DEFAULT_LAMBDA,
};
use crate::valuation::{estimate_values_with, format_real, TaskValue, ValuationOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Synthetic(SyntheticPoolSpec),
    Path(PathBuf),
}

impl PoolSource {
    pub fn load(&self) -> Result<DataPool> {
        match self {
            PoolSource::Synthetic(spec) => generate_synthetic_pool(spec),
            PoolSource::Path(path) => load_pool(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub split: u64,
    pub warmup_sample: u64,
    pub model_init: u64,
    pub selection: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 1,
            warmup_sample: 2,
            model_init: 3,
            selection: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pool: PoolSource,
    pub hidden_dim: usize,
    /// Held-out share of every task.
    pub eval_fraction: f64,
    /// Warm-up share of every task; takes precedence over `warmup_count`.
    pub warmup_fraction: Option<f64>,
    /// Absolute warm-up size, apportioned over tasks by size.
    pub warmup_count: Option<usize>,
    pub warmup_epochs: usize,
    /// Training of the final models (and, with `warmup_epochs`, of the
    /// reference model). Its seed drives the batch shuffles.
    pub train: TrainConfig,
    /// Budget as a share of the training split; takes precedence over
    /// `total_budget`.
    pub budget_fraction: Option<f64>,
    pub total_budget: Option<usize>,
    pub lambda: f64,
    pub rescale_task_values: bool,
    pub valuation: ValuationOptions,
    pub policy: SurplusPolicy,
    pub seeds: Seeds,
    /// Independent seed replicates for comparisons and sweeps.
    pub replicates: usize,
    /// Also train and evaluate the baseline selectors in a single run.
    pub run_baselines: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pool: PoolSource::Synthetic(SyntheticPoolSpec::desk_default()),
            hidden_dim: 32,
            eval_fraction: 0.2,
            warmup_fraction: Some(0.02),
            warmup_count: None,
            warmup_epochs: 1,
            train: TrainConfig {
                seed: 5,
                learning_rate: 0.05,
                optimizer: Optimizer::Adam,
                ..TrainConfig::default()
            },
            budget_fraction: Some(0.1),
            total_budget: None,
            lambda: DEFAULT_LAMBDA,
            rescale_task_values: false,
            valuation: ValuationOptions::default(),
            policy: SurplusPolicy::Redistribute,
            seeds: Seeds::default(),
            replicates: 5,
            run_baselines: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!("eval_fraction must be in (0, 1), got {}", self.eval_fraction)));
        }
        if let Some(f) = self.warmup_fraction {
            in_unit("warmup_fraction", f)?;
        } else if self.warmup_count.is_none() {
            return Err(Error::Config("one of warmup_fraction or warmup_count is required".into()));
        }
        if let Some(f) = self.budget_fraction {
            in_unit("budget_fraction", f)?;
        } else if self.total_budget.is_none_or(|b| b == 0) {
            return Err(Error::Config("one of budget_fraction or a positive total_budget is required".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.train.validate()
    }

    /// The same experiment under the `r`-th seed replicate. Replicate 0 is
    /// the configuration itself; the pool is never reseeded.
    pub fn replicate(&self, r: usize) -> PipelineConfig {
        let off = r as u64 * 1_000;
        let mut c = self.clone();
        c.seeds.split += off;
        c.seeds.warmup_sample += off;
        c.seeds.model_init += off;
        c.seeds.selection += off;
        c.train.seed += off;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task: String,
    pub token_accuracy: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub selected: usize,
    /// Share of the selected instances per task, in pool task order.
    pub task_proportions: Vec<(String, f64)>,
    pub eval: EvalReport,
    pub per_task: Vec<TaskEval>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn record(&mut self, stage: &str, since: Instant) {
        self.stages.push((stage.to_string(), since.elapsed().as_secs_f64()));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: PipelineConfig,
    pub pool_id: String,
    pub train_size: usize,
    pub eval_size: usize,
    pub warmup_size: usize,
    pub reference_checkpoint_id: String,
    pub task_values: Vec<TaskValue>,
    pub plan: SelectionPlan,
    pub manifest: SubsetManifest,
    pub tive: MethodResult,
    pub full: MethodResult,
    pub baselines: Vec<MethodResult>,
    /// Wall-clock seconds per stage; not serialized.
    #[serde(skip)]
    pub timings: Timings,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Vec<u8> {
        to_pretty_json(self)
    }

    /// `method,selected,token_accuracy,mean_loss` per trained model.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,selected,token_accuracy,mean_loss\n");
        for m in std::iter::once(&self.tive).chain(&self.baselines).chain(std::iter::once(&self.full)) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.method,
                m.selected,
                format_real(m.eval.token_accuracy),
                format_real(m.eval.mean_loss)
            ));
        }
        out
    }
}

pub(crate) fn to_pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// Held-out and training splits of a pool.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: DataPool,
    pub eval: DataPool,
}

/// Per task, `ceil(eval_fraction·n)` instances (leaving at least one for
/// training) go to the held-out split.
pub fn split_pool(pool: &DataPool, eval_fraction: f64, seed: u64) -> Result<Splits> {
    let mut eval_ids: Vec<&str> = Vec::new();
    let mut train_ids: Vec<&str> = Vec::new();
    for (k, task) in pool.tasks().iter().enumerate() {
        let n = task.len();
        let n_eval = ceil_count(eval_fraction, n).min(n.saturating_sub(1));
        let mut rng = stream_rng(seed, streams::SPLIT + ((k as u64) << 8));
        let chosen: HashSet<usize> = rand::seq::index::sample(&mut rng, n, n_eval).into_iter().collect();
        for (i, inst) in task.instances().iter().enumerate() {
            if chosen.contains(&i) {
                eval_ids.push(&inst.instance_id);
            } else {
                train_ids.push(&inst.instance_id);
            }
        }
    }
    Ok(Splits {
        train: pool.retain_ids(train_ids)?,
        eval: pool.retain_ids(eval_ids)?,
    })
}

/// Stratified warm-up sample of the training split.
pub fn warmup_sample(config: &PipelineConfig, train: &DataPool) -> Result<DataPool> {
    let sizes: Vec<usize> = train.tasks().iter().map(|t| t.len()).collect();
    let counts: Vec<usize> = match (config.warmup_fraction, config.warmup_count) {
        (Some(f), _) => sizes.iter().map(|&n| ceil_count(f, n)).collect(),
        (None, Some(c)) => {
            let total: usize = sizes.iter().sum();
            if c > total {
                return Err(Error::Config(format!("warmup_count {c} exceeds training split of {total}")));
            }
            let weights: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
            largest_remainder(&weights, c)?
        }
        (None, None) => return Err(Error::Config("no warm-up size configured".into())),
    };
    let mut ids: Vec<&str> = Vec::new();
    for (k, (task, &count)) in train.tasks().iter().zip(&counts).enumerate() {
        let mut rng = stream_rng(config.seeds.warmup_sample, streams::WARMUP + ((k as u64) << 8));
        for i in rand::seq::index::sample(&mut rng, task.len(), count.min(task.len())) {
            ids.push(&task.instances()[i].instance_id);
        }
    }
    train.retain_ids(ids)
}

fn assert_disjoint(eval: &DataPool, others: &[&DataPool]) -> Result<()> {
    let held: HashSet<&str> = eval.instances().map(|i| i.instance_id.as_str()).collect();
    for pool in others {
        if let Some(leak) = pool.instances().find(|i| held.contains(i.instance_id.as_str())) {
            return Err(Error::Config(format!("held-out instance `{}` leaked into training", leak.instance_id)));
        }
    }
    Ok(())
}

pub fn evaluate_per_task(model: &ReferenceModel, eval: &DataPool) -> Result<(EvalReport, Vec<TaskEval>)> {
    let overall = model.evaluate(&eval.instance_refs())?;
    let per_task = eval
        .tasks()
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let refs: Vec<&Instance> = t.instances().iter().collect();
            let r = model.evaluate(&refs)?;
            Ok(TaskEval {
                task: t.task_id().to_string(),
                token_accuracy: r.token_accuracy,
                mean_loss: r.mean_loss,
            })
        })
        .collect::<Result<_>>()?;
    Ok((overall, per_task))
}

fn fresh_model(config: &PipelineConfig, pool: &DataPool) -> Result<ReferenceModel> {
    ReferenceModel::init(pool.d_v(), config.hidden_dim, pool.vocab_size(), config.seeds.model_init)
}

/// Trains a fresh model (shared init seed) on `train` and evaluates it.
fn train_and_evaluate(
    config: &PipelineConfig,
    method: &str,
    train: &DataPool,
    eval: &DataPool,
) -> Result<MethodResult> {
    assert_disjoint(eval, &[train])?;
    let model = fresh_model(config, train)?.train(&train.instance_refs(), &config.train)?;
    let (overall, per_task) = evaluate_per_task(&model, eval)?;
    let total = train.len();
    Ok(MethodResult {
        method: method.to_string(),
        selected: total,
        task_proportions: train
            .tasks()
            .iter()
            .map(|t| (t.task_id().to_string(), t.len() as f64 / total as f64))
            .collect(),
        eval: overall,
        per_task,
    })
}

pub fn resolve_budget(config: &PipelineConfig, train_size: usize) -> usize {
    match (config.budget_fraction, config.total_budget) {
        (Some(f), _) => ceil_count(f, train_size).max(1),
        (None, Some(b)) => b,
        (None, None) => 0,
    }
}

/// Reference model: the shared initialisation trained on the warm-up
/// sample for `warmup_epochs`.
pub fn train_reference(config: &PipelineConfig, warmup: &DataPool) -> Result<ReferenceModel> {
    let warm_cfg = TrainConfig {
        epochs: config.warmup_epochs,
        ..config.train.clone()
    };
    fresh_model(config, warmup)?.train(&warmup.instance_refs(), &warm_cfg)
}

/// Output of valuation and selection, before any retraining.
#[derive(Clone, Debug)]
pub struct SelectionOutcome {
    pub reference: ReferenceModel,
    pub warmup_size: usize,
    pub task_values: Vec<TaskValue>,
    pub plan: SelectionPlan,
    pub subset: SelectedSubset,
    /// Training pool the subset was drawn from (augmented when the policy
    /// asks for it).
    pub source: DataPool,
    pub report: crate::valuation::ValueReport,
}

/// Warm-up, valuation and selection on a training split.
pub fn select_with_tive(config: &PipelineConfig, train: &DataPool, eval: &DataPool) -> Result<SelectionOutcome> {
    let warmup = warmup_sample(config, train)?;
    assert_disjoint(eval, &[&warmup])?;
    let reference = train_reference(config, &warmup)?;
    let report = estimate_values_with(&reference, train, &config.valuation)?;
    let budget = resolve_budget(config, train.len());
    let plan = build_plan(
        train,
        &report,
        budget,
        config.lambda,
        config.seeds.selection,
        config.policy,
        config.rescale_task_values,
    )?;
    let (source, scored) = match config.policy {
        SurplusPolicy::Augment { jitter_std } => augment_for_plan(
            train,
            &report,
            &plan,
            &JitterAugmenter { jitter_std },
            config.seeds.selection,
        )?,
        SurplusPolicy::Redistribute => (train.clone(), report.clone()),
    };
    let subset = select_subset(&source, &scored, &plan)?;
    Ok(SelectionOutcome {
        reference,
        warmup_size: warmup.len(),
        task_values: report.tasks.clone(),
        plan,
        subset,
        source,
        report: scored,
    })
}

fn subset_result(config: &PipelineConfig, name: &str, subset: &SelectedSubset, source: &DataPool, eval: &DataPool) -> Result<MethodResult> {
    let pool = subset.materialize(source)?;
    let mut r = train_and_evaluate(config, name, &pool, eval)?;
    r.task_proportions = subset
        .manifest
        .per_task
        .iter()
        .map(|t| (t.task.clone(), t.budget as f64 / subset.len().max(1) as f64))
        .collect();
    Ok(r)
}

/// Split, warm up, value, select, retrain a fresh model on the subset and
/// evaluate it next to the full-split model (and the baselines when
/// `run_baselines` is set).
pub fn run_tive_pipeline(config: &PipelineConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut timings = Timings::default();
    let t = Instant::now();
    let pool = config.pool.load()?;
    let splits = split_pool(&pool, config.eval_fraction, config.seeds.split)?;
    timings.record("load_and_split", t);

    let t = Instant::now();
    let outcome = select_with_tive(config, &splits.train, &splits.eval)?;
    timings.record("warmup_valuation_selection", t);

    let t = Instant::now();
    let tive = subset_result(config, "tive", &outcome.subset, &outcome.source, &splits.eval)?;
    timings.record("train_tive", t);

    let t = Instant::now();
    let full = train_and_evaluate(config, "full", &splits.train, &splits.eval)?;
    timings.record("train_full", t);

    let mut baselines = Vec::new();
    if config.run_baselines {
        let t = Instant::now();
        let budget = outcome.plan.total_budget;
        for method in BaselineMethod::ALL {
            let subset = baseline_select(
                &splits.train,
                method,
                budget,
                config.seeds.selection,
                Some(&outcome.reference),
            )?;
            baselines.push(subset_result(config, method.name(), &subset, &splits.train, &splits.eval)?);
        }
        timings.record("baselines", t);
    }

    Ok(ExperimentReport {
        config: config.clone(),
        pool_id: pool.pool_id(),
        train_size: splits.train.len(),
        eval_size: splits.eval.len(),
        warmup_size: outcome.warmup_size,
        reference_checkpoint_id: outcome.reference.checkpoint_id(),
        task_values: outcome.task_values,
        plan: outcome.plan,
        manifest: outcome.subset.manifest,
        tive,
        full,
        baselines,
        timings,
    })
}

pub const DEFAULT_KEEP_FRACTIONS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub keep_fraction: f64,
    pub replicate: usize,
    pub task_size: usize,
    pub train_size: usize,
    pub overall: EvalReport,
    pub per_task: Vec<TaskEval>,
}

impl SweepPoint {
    pub fn task_accuracy(&self, task: &str) -> Option<f64> {
        self.per_task.iter().find(|t| t.task == task).map(|t| t.token_accuracy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub task: String,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// Mean over replicates of the pruned task's held-out accuracy at one
    /// keep fraction.
    pub fn mean_task_accuracy(&self, keep_fraction: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.keep_fraction == keep_fraction)
            .filter_map(|p| p.task_accuracy(&self.task))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_overall_accuracy(&self, keep_fraction: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.keep_fraction == keep_fraction)
            .map(|p| p.overall.token_accuracy)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: PipelineConfig,
    pub pool_id: String,
    pub keep_fractions: Vec<f64>,
    pub curves: Vec<SweepCurve>,
}

impl SweepReport {
    pub fn to_json(&self) -> Vec<u8> {
        to_pretty_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,keep_fraction,replicate,task_size,task_accuracy,overall_accuracy,overall_loss\n");
        for c in &self.curves {
            for p in &c.points {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    c.task,
                    format_real(p.keep_fraction),
                    p.replicate,
                    p.task_size,
                    p.task_accuracy(&c.task).map(format_real).unwrap_or_default(),
                    format_real(p.overall.token_accuracy),
                    format_real(p.overall.mean_loss)
                ));
            }
        }
        out
    }
}

/// Prunes one task of the training split to each keep fraction, retrains
/// from the shared initialisation and evaluates on the held-out split, for
/// every seed replicate.
pub fn run_redundancy_sweep(config: &PipelineConfig, task_id: &str, keep_fractions: &[f64]) -> Result<SweepReport> {
    run_redundancy_sweeps(config, &[task_id], keep_fractions)
}

pub fn run_redundancy_sweeps(config: &PipelineConfig, task_ids: &[&str], keep_fractions: &[f64]) -> Result<SweepReport> {
    config.validate()?;
    let pool = config.pool.load()?;
    for id in task_ids {
        if pool.task(id).is_none() {
            return Err(Error::UnknownTask(id.to_string()));
        }
    }
    let mut curves: Vec<SweepCurve> = task_ids
        .iter()
        .map(|id| SweepCurve {
            task: id.to_string(),
            points: Vec::new(),
        })
        .collect();
    for r in 0..config.replicates {
        let cfg = config.replicate(r);
        let splits = split_pool(&pool, cfg.eval_fraction, cfg.seeds.split)?;
        for curve in &mut curves {
            for &f in keep_fractions {
                let pruned = prune_task(&splits.train, &curve.task, f, cfg.seeds.selection)?;
                let res = train_and_evaluate(&cfg, "sweep", &pruned, &splits.eval)?;
                curve.points.push(SweepPoint {
                    keep_fraction: f,
                    replicate: r,
                    task_size: pruned.task(&curve.task).map_or(0, |t| t.len()),
                    train_size: pruned.len(),
                    overall: res.eval,
                    per_task: res.per_task,
                });
            }
        }
    }
    Ok(SweepReport {
        config: config.clone(),
        pool_id: pool.pool_id(),
        keep_fractions: keep_fractions.to_vec(),
        curves,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub mean_loss: f64,
    pub per_seed_accuracy: Vec<f64>,
    /// Mean over replicates of the selected share per task.
    pub task_proportions: Vec<(String, f64)>,
}

impl ComparisonRow {
    fn from_results(results: &[&MethodResult]) -> Self {
        let n = results.len() as f64;
        let acc: Vec<f64> = results.iter().map(|r| r.eval.token_accuracy).collect();
        let mut props: Vec<(String, f64)> = results[0].task_proportions.iter().map(|(t, _)| (t.clone(), 0.0)).collect();
        for r in results {
            for (slot, (_, p)) in props.iter_mut().zip(&r.task_proportions) {
                slot.1 += p / n;
            }
        }
        Self {
            method: results[0].method.clone(),
            mean_accuracy: acc.iter().sum::<f64>() / n,
            min_accuracy: acc.iter().copied().fold(f64::INFINITY, f64::min),
            max_accuracy: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_loss: results.iter().map(|r| r.eval.mean_loss).sum::<f64>() / n,
            per_seed_accuracy: acc,
            task_proportions: props,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: PipelineConfig,
    pub pool_id: String,
    pub budget: usize,
    /// TIVE first, then the five baselines.
    pub rows: Vec<ComparisonRow>,
    /// Model trained on the whole training split, for reference.
    pub full: ComparisonRow,
    pub runs: Vec<ExperimentReport>,
}

impl ComparisonReport {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_pretty_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_accuracy,min_accuracy,max_accuracy,mean_loss\n");
        for r in self.rows.iter().chain(std::iter::once(&self.full)) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                format_real(r.mean_accuracy),
                format_real(r.min_accuracy),
                format_real(r.max_accuracy),
                format_real(r.mean_loss)
            ));
        }
        out
    }
}

/// TIVE and the five baselines at the same budget, over `replicates` seed
/// replicates.
pub fn compare_selectors(config: &PipelineConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let mut cfg = config.clone();
    cfg.run_baselines = true;
    let runs: Vec<ExperimentReport> = (0..config.replicates)
        .map(|r| run_tive_pipeline(&cfg.replicate(r)))
        .collect::<Result<_>>()?;
    let mut rows = vec![ComparisonRow::from_results(&runs.iter().map(|r| &r.tive).collect::<Vec<_>>())];
    for (b, method) in BaselineMethod::ALL.iter().enumerate() {
        let results: Vec<&MethodResult> = runs.iter().map(|r| &r.baselines[b]).collect();
        debug_assert_eq!(results[0].method, method.name());
        rows.push(ComparisonRow::from_results(&results));
    }
    let full = ComparisonRow::from_results(&runs.iter().map(|r| &r.full).collect::<Vec<_>>());
    Ok(ComparisonReport {
        config: config.clone(),
        pool_id: runs[0].pool_id.clone(),
        budget: runs[0].plan.total_budget,
        rows,
        full,
        runs,
    })
}

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub min_score: f64,
    pub max_score: f64,
    pub score_spread: f64,
    pub result: MethodResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaAblationReport {
    pub config: PipelineConfig,
    pub pool_id: String,
    pub points: Vec<LambdaPoint>,
}

impl LambdaAblationReport {
    pub fn to_json(&self) -> Vec<u8> {
        to_pretty_json(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,min_score,max_score,score_spread,token_accuracy,mean_loss\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_real(p.lambda),
                format_real(p.min_score),
                format_real(p.max_score),
                format_real(p.score_spread),
                format_real(p.result.eval.token_accuracy),
                format_real(p.result.eval.mean_loss)
            ));
        }
        out
    }
}

/// Re-runs scoring, selection and retraining for each λ on a single
/// valuation (values do not depend on λ).
pub fn run_lambda_ablation(config: &PipelineConfig, lambdas: &[f64]) -> Result<LambdaAblationReport> {
    config.validate()?;
    let pool = config.pool.load()?;
    let splits = split_pool(&pool, config.eval_fraction, config.seeds.split)?;
    let base = select_with_tive(config, &splits.train, &splits.eval)?;
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        let scores = sampling_scores(&base.report, lambda, config.rescale_task_values);
        let plan = SelectionPlan {
            lambda,
            ..base.plan.clone()
        };
        let subset = select_subset(&base.source, &base.report, &plan)?;
        let result = subset_result(config, "tive", &subset, &base.source, &splits.eval)?;
        points.push(LambdaPoint {
            lambda,
            min_score: scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min),
            max_score: scores.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max),
            score_spread: score_spread(&scores),
            result,
        });
    }
    Ok(LambdaAblationReport {
        config: config.clone(),
        pool_id: pool.pool_id(),
        points,
    })
}
