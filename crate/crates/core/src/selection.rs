//! Subset selection: task proportions from task values, integer budgets,
//! sigmoid sampling scores, weighted sampling without replacement, and the
//! baseline selectors.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReferenceModel;
use crate::numeric::{exact_sum, l2_norm, sigmoid};
use crate::pool::{DataPool, Instance, TaskDataset};
use crate::rng::{stream_rng, streams};
use crate::valuation::{gradient_norm, InstanceValue, ValueReport};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Normalizes nonnegative task values into proportions summing to one.
///
/// The denominator is the correctly rounded sum, so each proportion is the
/// correctly rounded quotient of its value and the exact total: rescaling
/// that is exact in floating point (powers of two, integer multiples of
/// integer values) leaves every bit unchanged.
pub fn task_proportions(values: &[(String, f64)]) -> Result<Vec<(String, f64)>> {
    if values.is_empty() {
        return Err(Error::Empty("no task values".into()));
    }
    if let Some((id, v)) = values.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config(format!("task `{id}` has invalid value {v}")));
    }
    let total = exact_sum(values.iter().map(|(_, v)| *v));
    if total <= 0.0 {
        return Err(Error::Degenerate("all task values are zero".into()));
    }
    Ok(values.iter().map(|(id, v)| (id.clone(), v / total)).collect())
}

/// Largest-remainder apportionment of `total` units over `weights`.
/// Ties between equal remainders go to the earlier entry.
pub fn largest_remainder(weights: &[f64], total: usize) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::Empty("no weights to apportion".into()));
    }
    let mass = exact_sum(weights.iter().copied());
    if mass.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Degenerate("weights must be nonnegative with positive mass".into()));
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / mass * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    // Float noise can push a floor sum past the total by a unit.
    if assigned > total {
        return Err(Error::Degenerate("apportionment overshoot".into()));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let remainder = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// What to do when a task's budget exceeds its available instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SurplusPolicy {
    /// Cap the task and re-apportion the surplus over the uncapped tasks.
    #[default]
    Redistribute,
    /// Keep the budget; the shortfall is filled by an [`Augmenter`].
    Augment { jitter_std: f64 },
}

impl SurplusPolicy {
    pub fn tag(&self) -> &'static str {
        match self {
            SurplusPolicy::Redistribute => "redistribute",
            SurplusPolicy::Augment { .. } => "augment",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBudget {
    pub task: String,
    pub proportion: f64,
    pub budget: usize,
    /// Instances in the task before augmentation.
    pub available: usize,
    /// Instances to synthesize so the budget can be met.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub augmented: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// Integer per-task budgets summing to `total_budget`. `proportions` must
/// follow pool task order.
pub fn allocate_budgets(
    proportions: &[(String, f64)],
    total_budget: usize,
    pool: &DataPool,
    policy: SurplusPolicy,
) -> Result<Vec<TaskBudget>> {
    if total_budget == 0 {
        return Err(Error::Config("total budget must be at least 1".into()));
    }
    let available: Vec<usize> = proportions
        .iter()
        .map(|(id, _)| {
            pool.task(id)
                .map(TaskDataset::len)
                .ok_or_else(|| Error::UnknownTask(id.clone()))
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = proportions.iter().map(|(_, p)| *p).collect();

    let budgets = match policy {
        SurplusPolicy::Augment { .. } => largest_remainder(&weights, total_budget)?,
        SurplusPolicy::Redistribute => {
            let capacity: usize = available.iter().sum();
            if total_budget > capacity {
                return Err(Error::InfeasibleBudget(format!(
                    "budget {total_budget} exceeds the {capacity} available instances"
                )));
            }
            redistribute(&weights, &available, total_budget)?
        }
    };

    Ok(proportions
        .iter()
        .zip(budgets)
        .zip(&available)
        .map(|(((task, proportion), budget), &available)| TaskBudget {
            task: task.clone(),
            proportion: *proportion,
            budget,
            available,
            augmented: budget.saturating_sub(available),
        })
        .collect())
}

fn redistribute(weights: &[f64], available: &[usize], total: usize) -> Result<Vec<usize>> {
    let n = weights.len();
    let mut capped = vec![false; n];
    loop {
        let fixed: usize = (0..n).filter(|&i| capped[i]).map(|i| available[i]).sum();
        let open: Vec<usize> = (0..n).filter(|&i| !capped[i]).collect();
        let remaining = total - fixed;
        let mut budgets: Vec<usize> = (0..n).map(|i| if capped[i] { available[i] } else { 0 }).collect();
        if remaining > 0 {
            let mut open_weights: Vec<f64> = open.iter().map(|&i| weights[i]).collect();
            if exact_sum(open_weights.iter().copied()) <= 0.0 {
                // Only zero-value tasks are left: spread by capacity instead.
                open_weights = open.iter().map(|&i| available[i] as f64).collect();
            }
            let share = largest_remainder(&open_weights, remaining)?;
            for (&i, s) in open.iter().zip(share) {
                budgets[i] = s;
            }
        }
        let overflow: Vec<usize> = open.iter().copied().filter(|&i| budgets[i] > available[i]).collect();
        if overflow.is_empty() {
            return Ok(budgets);
        }
        for i in overflow {
            capped[i] = true;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub total_budget: usize,
    pub lambda: f64,
    pub seed: u64,
    pub policy: SurplusPolicy,
    /// Task values were rescaled to mean one before scoring.
    pub rescale_task_values: bool,
    pub tasks: Vec<TaskBudget>,
}

impl SelectionPlan {
    pub fn budget_for(&self, task: &str) -> Option<usize> {
        self.tasks.iter().find(|t| t.task == task).map(|t| t.budget)
    }
}

pub fn build_plan(
    pool: &DataPool,
    report: &ValueReport,
    total_budget: usize,
    lambda: f64,
    seed: u64,
    policy: SurplusPolicy,
    rescale_task_values: bool,
) -> Result<SelectionPlan> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let values: Vec<(String, f64)> = pool
        .tasks()
        .iter()
        .map(|t| {
            let v = report.task_value(t.task_id()).unwrap_or(0.0);
            (t.task_id().to_string(), v)
        })
        .collect();
    let proportions = task_proportions(&values)?;
    let tasks = allocate_budgets(&proportions, total_budget, pool, policy)?;
    Ok(SelectionPlan {
        total_budget,
        lambda,
        seed,
        policy,
        rescale_task_values,
        tasks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    pub task_id: String,
    pub score: f64,
}

/// `1 / (1 + exp(−λ · task_value · instance_value))` for every instance,
/// using the instance's own task value. With `rescale_task_values` the task
/// values are first divided by their mean.
pub fn sampling_scores(report: &ValueReport, lambda: f64, rescale_task_values: bool) -> Vec<InstanceScore> {
    let mut task_values: HashMap<&str, f64> = report.task_values_map();
    if rescale_task_values && !report.tasks.is_empty() {
        let mean = exact_sum(report.tasks.iter().map(|t| t.value)) / report.tasks.len() as f64;
        if mean > 0.0 {
            task_values.values_mut().for_each(|v| *v /= mean);
        }
    }
    report
        .instances
        .iter()
        .map(|inst| {
            let tv = task_values.get(inst.task_id.as_str()).copied().unwrap_or(0.0);
            InstanceScore {
                instance_id: inst.instance_id.clone(),
                task_id: inst.task_id.clone(),
                score: sigmoid(lambda * tv * inst.value),
            }
        })
        .collect()
}

pub fn score_spread(scores: &[InstanceScore]) -> f64 {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.score), hi.max(s.score)));
    if scores.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Weighted sampling of `k` distinct indices with exponential race keys:
/// each item draws `−ln(u)/w` with `u ~ U(0, 1]` and the `k` smallest keys
/// win. The first winner is item `i` with probability `w_i / Σw`.
/// Winners are returned in ascending index order.
pub fn weighted_sample_without_replacement(weights: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(Error::InfeasibleBudget(format!("cannot draw {k} of {} items", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Config(format!("invalid sampling weight {w}")));
    }
    let keys: Vec<f64> = weights
        .iter()
        .map(|&w| {
            let u: f64 = 1.0 - rng.random::<f64>();
            if w > 0.0 {
                -u.ln() / w
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedInstance {
    pub id: String,
    pub task: String,
    /// Sampling score (TIVE) or ranking score (baselines); absent for random.
    pub score: Option<f64>,
}

/// Reproducibility record of one selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub method: String,
    pub pool_id: String,
    pub checkpoint_id: Option<String>,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub total_budget: usize,
    pub policy: Option<String>,
    pub per_task: Vec<TaskBudget>,
    pub instances: Vec<SelectedInstance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedSubset {
    pub manifest: SubsetManifest,
}

impl SelectedSubset {
    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.manifest.instances.iter().map(|i| i.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.manifest.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.instances.is_empty()
    }

    pub fn count_for(&self, task: &str) -> usize {
        self.manifest.instances.iter().filter(|i| i.task == task).count()
    }

    /// The selected instances as a pool, in pool order.
    pub fn materialize(&self, pool: &DataPool) -> Result<DataPool> {
        pool.retain_ids(self.ids())
    }

    pub fn manifest_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.manifest_json()).map_err(|e| Error::io(path, e))
    }
}

/// Draws each task's budget by score-weighted sampling without replacement.
pub fn select_subset(pool: &DataPool, report: &ValueReport, plan: &SelectionPlan) -> Result<SelectedSubset> {
    let scores: HashMap<String, f64> = sampling_scores(report, plan.lambda, plan.rescale_task_values)
        .into_iter()
        .map(|s| (s.instance_id, s.score))
        .collect();
    let mut instances = Vec::with_capacity(plan.total_budget);
    for (k, task) in pool.tasks().iter().enumerate() {
        let budget = plan.budget_for(task.task_id()).unwrap_or(0);
        if budget > task.len() {
            return Err(Error::InfeasibleBudget(format!(
                "task `{}` has {} instances but a budget of {budget}",
                task.task_id(),
                task.len()
            )));
        }
        let weights: Vec<f64> = task
            .instances()
            .iter()
            .map(|i| {
                scores
                    .get(&i.instance_id)
                    .copied()
                    .ok_or_else(|| Error::UnknownInstance(i.instance_id.clone()))
            })
            .collect::<Result<_>>()?;
        let mut rng = stream_rng(plan.seed, streams::TASK_BASE + k as u64);
        for i in weighted_sample_without_replacement(&weights, budget, &mut rng)? {
            let inst = &task.instances()[i];
            instances.push(SelectedInstance {
                id: inst.instance_id.clone(),
                task: inst.task_id.clone(),
                score: Some(weights[i]),
            });
        }
    }
    Ok(SelectedSubset {
        manifest: SubsetManifest {
            method: "tive".into(),
            pool_id: pool.pool_id(),
            checkpoint_id: report.provenance.checkpoint_id.clone(),
            lambda: Some(plan.lambda),
            seed: plan.seed,
            total_budget: plan.total_budget,
            policy: Some(plan.policy.tag().into()),
            per_task: plan.tasks.clone(),
            instances,
        },
    })
}

/// Source of extra instances for tasks whose budget exceeds their size.
pub trait Augmenter {
    fn name(&self) -> &str;

    /// `needed` new instances derived from `task`; ids must be fresh.
    fn augment(&self, task: &TaskDataset, needed: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Instance, String)>>;
}

/// Feature-jittered copies of existing instances (tokens copied verbatim).
#[derive(Clone, Copy, Debug)]
pub struct JitterAugmenter {
    pub jitter_std: f64,
}

impl Augmenter for JitterAugmenter {
    fn name(&self) -> &str {
        "jitter"
    }

    fn augment(&self, task: &TaskDataset, needed: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Instance, String)>> {
        if task.is_empty() {
            return Err(Error::Empty(format!("cannot augment empty task `{}`", task.task_id())));
        }
        let noise = Normal::new(0.0, self.jitter_std).map_err(|e| Error::Config(e.to_string()))?;
        Ok((0..needed)
            .map(|j| {
                let src = &task.instances()[j % task.len()];
                let mut inst = src.clone();
                inst.instance_id = format!("{}#aug{j}", src.instance_id);
                inst.features.iter_mut().for_each(|x| *x += noise.sample(rng));
                (inst, src.instance_id.clone())
            })
            .collect())
    }
}

/// Extends the pool (and the value report) with augmented instances for
/// every task whose plan budget exceeds its size. Augmented instances
/// inherit the values of their source instance.
pub fn augment_for_plan(
    pool: &DataPool,
    report: &ValueReport,
    plan: &SelectionPlan,
    augmenter: &dyn Augmenter,
    seed: u64,
) -> Result<(DataPool, ValueReport)> {
    let mut pool = pool.clone();
    let mut report = report.clone();
    let by_id: HashMap<String, InstanceValue> = report
        .instances
        .iter()
        .map(|v| (v.instance_id.clone(), v.clone()))
        .collect();
    for tb in plan.tasks.iter().filter(|t| t.augmented > 0) {
        let k = pool.task_index(&tb.task).ok_or_else(|| Error::UnknownTask(tb.task.clone()))?;
        let task = &pool.tasks()[k];
        let mut rng = stream_rng(seed, streams::AUGMENT + ((k as u64) << 8));
        let extra = augmenter.augment(task, tb.augmented, &mut rng)?;
        let mut members = task.instances().to_vec();
        let mut values: Vec<InstanceValue> = Vec::with_capacity(extra.len());
        for (inst, src) in extra {
            let mut v = by_id
                .get(&src)
                .cloned()
                .ok_or_else(|| Error::UnknownInstance(src.clone()))?;
            v.instance_id = inst.instance_id.clone();
            values.push(v);
            members.push(inst);
        }
        pool = pool.with_task_instances(&tb.task, members)?;
        // Keep the report grouped by task.
        let insert_at = report
            .instances
            .iter()
            .rposition(|v| v.task_id == tb.task)
            .map_or(report.instances.len(), |p| p + 1);
        report.instances.splice(insert_at..insert_at, values);
    }
    Ok((pool, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Random,
    Length,
    Perplexity,
    Grand,
    El2n,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] = [
        BaselineMethod::Random,
        BaselineMethod::Length,
        BaselineMethod::Perplexity,
        BaselineMethod::Grand,
        BaselineMethod::El2n,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Random => "random",
            BaselineMethod::Length => "length",
            BaselineMethod::Perplexity => "perplexity",
            BaselineMethod::Grand => "grand",
            BaselineMethod::El2n => "el2n",
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, BaselineMethod::Perplexity | BaselineMethod::Grand | BaselineMethod::El2n)
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

/// Ranking score of one instance under a model-based or length baseline.
pub fn baseline_score(method: BaselineMethod, inst: &Instance, model: Option<&ReferenceModel>) -> Result<f64> {
    let need = || model.ok_or_else(|| Error::Config(format!("baseline `{}` needs a model", method.name())));
    match method {
        BaselineMethod::Random => Ok(0.0),
        BaselineMethod::Length => Ok(inst.instruction_tokens.len() as f64),
        BaselineMethod::Perplexity => need()?.perplexity(inst),
        BaselineMethod::Grand => gradient_norm(&need()?.per_sample_gradient(inst)?),
        BaselineMethod::El2n => Ok(need()?.forward_loss(inst)?.mean_error_norm()),
    }
}

/// Pool-wide top-`budget` selection by the method's score (or a uniform
/// draw for `random`), with no task stratification. Ties break by id.
pub fn baseline_select(
    pool: &DataPool,
    method: BaselineMethod,
    budget: usize,
    seed: u64,
    model: Option<&ReferenceModel>,
) -> Result<SelectedSubset> {
    if budget > pool.len() {
        return Err(Error::InfeasibleBudget(format!(
            "budget {budget} exceeds pool size {}",
            pool.len()
        )));
    }
    if method.needs_model() && model.is_none() {
        return Err(Error::Config(format!("baseline `{}` needs a model", method.name())));
    }
    let all = pool.instance_refs();
    let (mut picked, scores): (Vec<usize>, Option<Vec<f64>>) = match method {
        BaselineMethod::Random => {
            let mut rng = stream_rng(seed, streams::RANDOM_BASELINE);
            (index::sample(&mut rng, all.len(), budget).into_vec(), None)
        }
        _ => {
            let scores: Vec<f64> = all
                .par_iter()
                .map(|inst| baseline_score(method, inst, model))
                .collect::<Result<_>>()?;
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then_with(|| all[a].instance_id.cmp(&all[b].instance_id))
            });
            order.truncate(budget);
            (order, Some(scores))
        }
    };
    picked.sort_unstable();

    let instances: Vec<SelectedInstance> = picked
        .iter()
        .map(|&i| SelectedInstance {
            id: all[i].instance_id.clone(),
            task: all[i].task_id.clone(),
            score: scores.as_ref().map(|s| s[i]),
        })
        .collect();
    let per_task = pool
        .tasks()
        .iter()
        .map(|t| {
            let count = instances.iter().filter(|i| i.task == t.task_id()).count();
            TaskBudget {
                task: t.task_id().to_string(),
                proportion: if budget == 0 { 0.0 } else { count as f64 / budget as f64 },
                budget: count,
                available: t.len(),
                augmented: 0,
            }
        })
        .collect();
    Ok(SelectedSubset {
        manifest: SubsetManifest {
            method: method.name().into(),
            pool_id: pool.pool_id(),
            checkpoint_id: model.filter(|_| method.needs_model()).map(ReferenceModel::checkpoint_id),
            lambda: None,
            seed,
            total_budget: budget,
            policy: None,
            per_task,
            instances,
        },
    })
}

/// EL2N score straight from error vectors, for callers holding a breakdown.
pub fn el2n_from_errors(errors: &[Vec<f64>]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().map(|e| l2_norm(e)).sum::<f64>() / errors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(values: &[f64]) -> Vec<(String, f64)> {
        values.iter().enumerate().map(|(i, &v)| (format!("t{i}"), v)).collect()
    }

    #[test]
    fn equal_and_simple_proportions() {
        let p = task_proportions(&named(&[3.0; 4])).unwrap();
        assert!(p.iter().all(|(_, x)| *x == 0.25));
        let p = task_proportions(&named(&[2.0, 1.0, 1.0])).unwrap();
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0.5, 0.25, 0.25]);
        assert!(matches!(task_proportions(&named(&[0.0, 0.0])), Err(Error::Degenerate(_))));
        assert!(task_proportions(&named(&[-1.0, 2.0])).is_err());
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 10).unwrap(), vec![5, 3, 2]);
        assert_eq!(largest_remainder(&[0.579, 0.258, 0.079, 0.084], 50).unwrap(), vec![29, 13, 4, 4]);
        // Equal remainders: earlier task wins.
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 2).unwrap(), vec![1, 1, 0]);
    }

    #[test]
    fn sigmoid_scores_sign() {
        let report = ValueReport {
            tasks: vec![crate::valuation::TaskValue {
                task_id: "t".into(),
                value: 1.0,
                instance_count: 2,
            }],
            task_mean_gradients: vec![],
            instances: vec![
                InstanceValue {
                    instance_id: "a".into(),
                    task_id: "t".into(),
                    grad_norm: 1.0,
                    value: -1.0,
                    degenerate: false,
                },
                InstanceValue {
                    instance_id: "b".into(),
                    task_id: "t".into(),
                    grad_norm: 1.0,
                    value: 0.0,
                    degenerate: false,
                },
            ],
            provenance: Default::default(),
        };
        let s = sampling_scores(&report, 0.1, false);
        assert!((s[0].score - 1.0 / (1.0 + 0.1f64.exp())).abs() < 1e-15);
        assert!((s[0].score - 0.47502).abs() < 1e-5);
        assert_eq!(s[1].score, 0.5);
    }

    #[test]
    fn weighted_sampler_edge_cases() {
        let mut rng = stream_rng(0, 0);
        assert_eq!(weighted_sample_without_replacement(&[0.2, 0.9, 0.4], 3, &mut rng).unwrap(), vec![0, 1, 2]);
        assert!(weighted_sample_without_replacement(&[0.2, 0.9, 0.4], 0, &mut rng).unwrap().is_empty());
        assert!(weighted_sample_without_replacement(&[0.2], 2, &mut rng).is_err());
        assert_eq!(weighted_sample_without_replacement(&[0.0, 1.0, 0.0], 1, &mut rng).unwrap(), vec![1]);
    }

    #[test]
    fn baseline_method_names_round_trip() {
        for m in BaselineMethod::ALL {
            assert_eq!(m.name().parse::<BaselineMethod>().unwrap(), m);
        }
        assert!("tive".parse::<BaselineMethod>().is_err());
    }
}
