//! Task-level and instance-level data values from per-sample gradients.
//!
//! * gradient norm of an instance: `‖g(s)‖₂` over the concatenated `P`/`O`
//!   gradients,
//! * task value: mean gradient norm over the task's instances,
//! * instance value: cosine between `g(s)` and the task's mean gradient.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradientRecord, ReferenceModel};
use crate::numeric::{l2_norm, CompensatedSum};
use crate::pool::{DataPool, PoolReader};
use crate::rng::{stream_rng, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskValue {
    pub task_id: String,
    pub value: f64,
    pub instance_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceValue {
    pub instance_id: String,
    pub task_id: String,
    pub grad_norm: f64,
    /// Cosine to the task mean gradient; 0 when undefined.
    pub value: f64,
    /// Set when the cosine was undefined (zero gradient on either side).
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_id: Option<String>,
    pub pool_id: Option<String>,
    /// Seconds since the Unix epoch. Left unset by the library so reports
    /// stay reproducible; front ends may stamp it.
    pub created_unix: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueReport {
    /// In pool task order.
    pub tasks: Vec<TaskValue>,
    /// Mean gradient per task, aligned with `tasks`. Empty when the report
    /// was read back from a values file.
    pub task_mean_gradients: Vec<Vec<f64>>,
    /// Grouped by task in pool order.
    pub instances: Vec<InstanceValue>,
    pub provenance: Provenance,
}

impl ValueReport {
    pub fn task_value(&self, task_id: &str) -> Option<f64> {
        self.tasks.iter().find(|t| t.task_id == task_id).map(|t| t.value)
    }

    pub fn instance(&self, instance_id: &str) -> Option<&InstanceValue> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }

    pub fn task_values_map(&self) -> HashMap<&str, f64> {
        self.tasks.iter().map(|t| (t.task_id.as_str(), t.value)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Knobs for the alternatives left open by the value definitions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValuationOptions {
    /// Compare each instance against the mean of the *other* instances.
    pub exclude_self: bool,
    /// Estimate each task mean from at most this many instances.
    pub mean_subsample: Option<usize>,
    pub subsample_seed: u64,
}

pub fn gradient_norm(record: &GradientRecord) -> Result<f64> {
    if record.g().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of `{}`", record.instance_id)));
    }
    Ok(l2_norm(record.g()))
}

fn mean_of<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let mut acc: Vec<CompensatedSum> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if n == 0 {
            acc = vec![CompensatedSum::new(); v.len()];
        } else if v.len() != acc.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} among gradients of length {}",
                v.len(),
                acc.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            a.add(*x);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("task has no gradient records".into()));
    }
    Ok(acc.iter().map(|a| a.value() / n as f64).collect())
}

/// Componentwise mean of `g` over a task's records.
pub fn task_mean_gradient(records: &[GradientRecord]) -> Result<Vec<f64>> {
    mean_of(records.iter().map(GradientRecord::g))
}

pub fn task_value(records: &[GradientRecord]) -> Result<TaskValue> {
    let first = records
        .first()
        .ok_or_else(|| Error::Empty("task has no gradient records".into()))?;
    let mut sum = CompensatedSum::new();
    for r in records {
        sum.add(gradient_norm(r)?);
    }
    Ok(TaskValue {
        task_id: first.task_id.clone(),
        value: sum.value() / records.len() as f64,
        instance_count: records.len(),
    })
}

/// Cosine similarity of two gradient vectors, clamped to `[-1, 1]`.
/// Fails with [`Error::Degenerate`] when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    let mut dot = CompensatedSum::new();
    for (x, y) in a.iter().zip(b) {
        dot.add(x * y);
    }
    Ok((dot.value() / (na * nb)).clamp(-1.0, 1.0))
}

pub fn instance_value(record: &GradientRecord, task_mean: &[f64]) -> Result<f64> {
    cosine(record.g(), task_mean)
}

/// One gradient record per instance, in pool order.
pub fn gradient_records(model: &ReferenceModel, pool: &DataPool) -> Result<Vec<GradientRecord>> {
    check_dims(model, pool.d_v(), pool.vocab_size())?;
    pool.instance_refs()
        .par_iter()
        .map(|inst| model.per_sample_gradient(inst))
        .collect()
}

fn check_dims(model: &ReferenceModel, d_v: usize, vocab: usize) -> Result<()> {
    if model.d_v() != d_v || model.vocab() != vocab {
        return Err(Error::Dimension(format!(
            "model (d_v={}, V={}) does not match pool (d_v={d_v}, V={vocab})",
            model.d_v(),
            model.vocab()
        )));
    }
    Ok(())
}

fn subsample_indices(n: usize, options: &ValuationOptions, task_index: usize) -> Option<Vec<usize>> {
    let cap = options.mean_subsample?;
    if cap >= n {
        return None;
    }
    let mut rng = stream_rng(options.subsample_seed, streams::MEAN_SUBSAMPLE + ((task_index as u64) << 8));
    let mut idx = index::sample(&mut rng, n, cap.max(1)).into_vec();
    idx.sort_unstable();
    Some(idx)
}

fn value_against_mean(
    record: &GradientRecord,
    mean: &[f64],
    n_in_mean: usize,
    exclude_self: bool,
) -> Result<Option<f64>> {
    let result = if exclude_self {
        if n_in_mean < 2 {
            return Ok(None);
        }
        let n = n_in_mean as f64;
        let others: Vec<f64> = mean
            .iter()
            .zip(record.g())
            .map(|(m, g)| (n * m - g) / (n - 1.0))
            .collect();
        instance_value(record, &others)
    } else {
        instance_value(record, mean)
    };
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => {
            log::warn!(
                "instance `{}` has an undefined cosine value (zero gradient); using 0",
                record.instance_id
            );
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn value_task(
    records: &[GradientRecord],
    task_index: usize,
    options: &ValuationOptions,
) -> Result<(TaskValue, Vec<f64>, Vec<InstanceValue>)> {
    let tv = task_value(records)?;
    let subset = subsample_indices(records.len(), options, task_index);
    let (mean, n_in_mean) = match &subset {
        Some(idx) => (mean_of(idx.iter().map(|&i| records[i].g()))?, idx.len()),
        None => (task_mean_gradient(records)?, records.len()),
    };
    let values = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            // A left-out instance is not part of the subsampled mean.
            let in_mean = subset.as_ref().is_none_or(|idx| idx.binary_search(&i).is_ok());
            let exclude = options.exclude_self && in_mean;
            let v = value_against_mean(r, &mean, n_in_mean, exclude)?;
            Ok(InstanceValue {
                instance_id: r.instance_id.clone(),
                task_id: r.task_id.clone(),
                grad_norm: gradient_norm(r)?,
                value: v.unwrap_or(0.0),
                degenerate: v.is_none(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tv, mean, values))
}

pub fn estimate_values(model: &ReferenceModel, pool: &DataPool) -> Result<ValueReport> {
    estimate_values_with(model, pool, &ValuationOptions::default())
}

/// Gradients at the given (fixed) parameters for every instance, then task
/// values, task mean gradients and instance values for every task.
pub fn estimate_values_with(
    model: &ReferenceModel,
    pool: &DataPool,
    options: &ValuationOptions,
) -> Result<ValueReport> {
    check_dims(model, pool.d_v(), pool.vocab_size())?;
    let mut report = ValueReport {
        tasks: Vec::with_capacity(pool.num_tasks()),
        task_mean_gradients: Vec::with_capacity(pool.num_tasks()),
        instances: Vec::with_capacity(pool.len()),
        provenance: Provenance {
            checkpoint_id: Some(model.checkpoint_id()),
            pool_id: Some(pool.pool_id()),
            created_unix: None,
        },
    };
    for (k, task) in pool.tasks().iter().enumerate() {
        if task.is_empty() {
            continue;
        }
        let records: Vec<GradientRecord> = task
            .instances()
            .par_iter()
            .map(|inst| model.per_sample_gradient(inst))
            .collect::<Result<_>>()?;
        let (tv, mean, values) = value_task(&records, k, options)?;
        report.tasks.push(tv);
        report.task_mean_gradients.push(mean);
        report.instances.extend(values);
    }
    Ok(report)
}

/// Two-pass valuation straight from a pool file: the first pass accumulates
/// per-task norm sums and gradient sums, the second computes cosines. Only
/// one instance is held at a time. Matches [`estimate_values_with`] on the
/// loaded pool (mean subsampling is not supported here).
pub fn estimate_values_streaming(
    model: &ReferenceModel,
    path: impl AsRef<Path>,
    options: &ValuationOptions,
) -> Result<ValueReport> {
    if options.mean_subsample.is_some() {
        return Err(Error::Config("mean_subsample is not supported for streamed pools".into()));
    }
    let path = path.as_ref();

    struct Acc {
        task_id: String,
        count: usize,
        norm_sum: CompensatedSum,
        grad_sum: Vec<CompensatedSum>,
    }
    let mut accs: Vec<Acc> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();

    let reader = PoolReader::open(path)?;
    check_dims(model, reader.d_v(), reader.vocab_size())?;
    let mut hasher = crate::pool::PoolHasher::new(reader.d_v(), reader.vocab_size());
    for inst in reader {
        let inst = inst?;
        let record = model.per_sample_gradient(&inst)?;
        let k = *index_of.entry(inst.task_id.clone()).or_insert_with(|| {
            accs.push(Acc {
                task_id: inst.task_id.clone(),
                count: 0,
                norm_sum: CompensatedSum::new(),
                grad_sum: vec![CompensatedSum::new(); model.num_trainable()],
            });
            accs.len() - 1
        });
        hasher.push(&inst);
        let acc = &mut accs[k];
        acc.count += 1;
        acc.norm_sum.add(gradient_norm(&record)?);
        for (a, x) in acc.grad_sum.iter_mut().zip(record.g()) {
            a.add(*x);
        }
    }

    let means: Vec<Vec<f64>> = accs
        .iter()
        .map(|a| a.grad_sum.iter().map(|s| s.value() / a.count as f64).collect())
        .collect();
    let mut per_task: Vec<Vec<InstanceValue>> = vec![Vec::new(); accs.len()];
    for inst in PoolReader::open(path)? {
        let inst = inst?;
        let record = model.per_sample_gradient(&inst)?;
        let k = index_of[&inst.task_id];
        let v = value_against_mean(&record, &means[k], accs[k].count, options.exclude_self)?;
        per_task[k].push(InstanceValue {
            instance_id: record.instance_id.clone(),
            task_id: record.task_id.clone(),
            grad_norm: gradient_norm(&record)?,
            value: v.unwrap_or(0.0),
            degenerate: v.is_none(),
        });
    }

    Ok(ValueReport {
        tasks: accs
            .iter()
            .map(|a| TaskValue {
                task_id: a.task_id.clone(),
                value: a.norm_sum.value() / a.count as f64,
                instance_count: a.count,
            })
            .collect(),
        task_mean_gradients: means,
        instances: per_task.into_iter().flatten().collect(),
        provenance: Provenance {
            checkpoint_id: Some(model.checkpoint_id()),
            pool_id: Some(hasher.finish()),
            created_unix: None,
        },
    })
}

pub const VALUES_HEADER: [&str; 6] = [
    "instance_id",
    "task_id",
    "grad_norm",
    "instance_value",
    "task_value",
    "sampling_score",
];

/// One row of a values file.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueRow {
    pub instance_id: String,
    pub task_id: String,
    pub grad_norm: f64,
    pub instance_value: f64,
    pub task_value: f64,
    pub sampling_score: Option<f64>,
}

/// 17 significant digits: enough to round-trip any f64.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the values CSV. `scores` fills the `sampling_score` column when
/// given; otherwise it is left empty.
pub fn export_values(report: &ValueReport, scores: Option<&HashMap<String, f64>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(VALUES_HEADER)?;
    let task_values = report.task_values_map();
    for inst in &report.instances {
        let tv = task_values.get(inst.task_id.as_str()).copied().ok_or_else(|| {
            Error::UnknownTask(inst.task_id.clone())
        })?;
        let score = scores
            .and_then(|s| s.get(&inst.instance_id))
            .map(|&s| format_real(s))
            .unwrap_or_default();
        w.write_record([
            inst.instance_id.as_str(),
            inst.task_id.as_str(),
            &format_real(inst.grad_norm),
            &format_real(inst.value),
            &format_real(tv),
            &score,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_values(path: impl AsRef<Path>) -> Result<Vec<ValueRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != VALUES_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {}", VALUES_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |col: usize| -> Result<f64> {
            rec[col].trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column {}: {e}", VALUES_HEADER[col]),
            })
        };
        let score = if rec[5].trim().is_empty() { None } else { Some(num(5)?) };
        rows.push(ValueRow {
            instance_id: rec[0].to_string(),
            task_id: rec[1].to_string(),
            grad_norm: num(2)?,
            instance_value: num(3)?,
            task_value: num(4)?,
            sampling_score: score,
        });
    }
    Ok(rows)
}

impl ValueReport {
    /// Rebuilds a report (without mean gradients) from values-file rows.
    pub fn from_rows(rows: &[ValueRow]) -> Result<Self> {
        let mut tasks: Vec<TaskValue> = Vec::new();
        let mut index_of: HashMap<&str, usize> = HashMap::new();
        for row in rows {
            match index_of.get(row.task_id.as_str()) {
                Some(&k) => {
                    if tasks[k].value.to_bits() != row.task_value.to_bits() {
                        return Err(Error::Config(format!(
                            "task `{}` has inconsistent task values",
                            row.task_id
                        )));
                    }
                    tasks[k].instance_count += 1;
                }
                None => {
                    index_of.insert(&row.task_id, tasks.len());
                    tasks.push(TaskValue {
                        task_id: row.task_id.clone(),
                        value: row.task_value,
                        instance_count: 1,
                    });
                }
            }
        }
        let mut grouped: Vec<Vec<InstanceValue>> = vec![Vec::new(); tasks.len()];
        for row in rows {
            grouped[index_of[row.task_id.as_str()]].push(InstanceValue {
                instance_id: row.instance_id.clone(),
                task_id: row.task_id.clone(),
                grad_norm: row.grad_norm,
                value: row.instance_value,
                degenerate: false,
            });
        }
        Ok(Self {
            tasks,
            task_mean_gradients: Vec::new(),
            instances: grouped.into_iter().flatten().collect(),
            provenance: Provenance::default(),
        })
    }
}

#[derive(Serialize)]
struct GradientLine<'a> {
    id: &'a str,
    task: &'a str,
    g: &'a [f64],
}

/// Raw gradient vectors as JSON lines (`{"id", "task", "g"}`), for external
/// projection and plotting.
pub fn export_gradients(records: &[GradientRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(
            &mut out,
            &GradientLine {
                id: &r.instance_id,
                task: &r.task_id,
                g: r.g(),
            },
        )?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
