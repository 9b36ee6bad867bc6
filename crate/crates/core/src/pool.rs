//! Multi-task instance pools: the data model, the JSON-lines pool format,
//! synthetic pool generation and per-task pruning.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// One labeled training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "id")]
    pub instance_id: String,
    #[serde(rename = "task")]
    pub task_id: String,
    /// Stand-in for the visual input, length `d_v`.
    pub features: Vec<f64>,
    pub instruction_tokens: Vec<u32>,
    pub target_tokens: Vec<u32>,
}

impl Instance {
    fn validate(&self, d_v: usize, vocab: usize) -> Result<()> {
        if self.features.len() != d_v {
            return Err(Error::Dimension(format!(
                "instance `{}` has {} features, pool expects {}",
                self.instance_id,
                self.features.len(),
                d_v
            )));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "features of instance `{}`",
                self.instance_id
            )));
        }
        if self.target_tokens.is_empty() {
            return Err(Error::Empty(format!(
                "target tokens of instance `{}`",
                self.instance_id
            )));
        }
        if let Some(&token) = self
            .instruction_tokens
            .iter()
            .chain(&self.target_tokens)
            .find(|&&t| t as usize >= vocab)
        {
            return Err(Error::TokenOutOfRange { token, vocab });
        }
        Ok(())
    }
}

/// The instances belonging to one task, in pool order.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    task_id: String,
    instances: Vec<Instance>,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>, instances: Vec<Instance>) -> Result<Self> {
        let task_id = task_id.into();
        let mut seen = HashSet::new();
        for inst in &instances {
            if inst.task_id != task_id {
                return Err(Error::Config(format!(
                    "instance `{}` carries task `{}` but belongs to `{}`",
                    inst.instance_id, inst.task_id, task_id
                )));
            }
            if !seen.insert(inst.instance_id.as_str()) {
                return Err(Error::DuplicateInstance(inst.instance_id.clone()));
            }
        }
        Ok(Self { task_id, instances })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// The full multi-task pool.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPool {
    tasks: Vec<TaskDataset>,
    d_v: usize,
    vocab_size: usize,
}

impl DataPool {
    pub fn new(d_v: usize, vocab_size: usize, tasks: Vec<TaskDataset>) -> Result<Self> {
        if d_v == 0 || vocab_size == 0 {
            return Err(Error::Config("d_v and vocab must be positive".into()));
        }
        let mut task_ids = HashSet::new();
        let mut ids = HashSet::new();
        for task in &tasks {
            if !task_ids.insert(task.task_id.as_str()) {
                return Err(Error::DuplicateTask(task.task_id.clone()));
            }
            for inst in &task.instances {
                inst.validate(d_v, vocab_size)?;
                if !ids.insert(inst.instance_id.as_str()) {
                    return Err(Error::DuplicateInstance(inst.instance_id.clone()));
                }
            }
        }
        Ok(Self {
            tasks,
            d_v,
            vocab_size,
        })
    }

    /// Groups instances by task in order of first appearance.
    pub fn from_instances(
        d_v: usize,
        vocab_size: usize,
        instances: impl IntoIterator<Item = Instance>,
    ) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<Instance>> = HashMap::new();
        for inst in instances {
            if !groups.contains_key(&inst.task_id) {
                order.push(inst.task_id.clone());
            }
            groups.entry(inst.task_id.clone()).or_default().push(inst);
        }
        let tasks = order
            .into_iter()
            .map(|id| {
                let members = groups.remove(&id).unwrap_or_default();
                TaskDataset { task_id: id, instances: members }
            })
            .collect();
        Self::new(d_v, vocab_size, tasks)
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn tasks(&self) -> &[TaskDataset] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskDataset> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn task_index(&self, task_id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.task_id == task_id)
    }

    /// Total number of instances.
    pub fn len(&self) -> usize {
        self.tasks.iter().map(TaskDataset::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All instances, task by task.
    pub fn instances(&self) -> impl Iterator<Item = &Instance> + '_ {
        self.tasks.iter().flat_map(|t| t.instances.iter())
    }

    pub fn instance_refs(&self) -> Vec<&Instance> {
        self.instances().collect()
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.instances().any(|i| i.instance_id == instance_id)
    }

    /// Keeps only the listed ids. Pool order (task order, then in-task order)
    /// is preserved regardless of the order of `ids`. Tasks left empty stay in
    /// the pool so task indices remain stable.
    pub fn retain_ids<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<DataPool> {
        let wanted: HashSet<&str> = ids.into_iter().collect();
        let tasks: Vec<TaskDataset> = self
            .tasks
            .iter()
            .map(|t| TaskDataset {
                task_id: t.task_id.clone(),
                instances: t
                    .instances
                    .iter()
                    .filter(|i| wanted.contains(i.instance_id.as_str()))
                    .cloned()
                    .collect(),
            })
            .collect();
        let kept: usize = tasks.iter().map(TaskDataset::len).sum();
        if kept != wanted.len() {
            let present: HashSet<&str> = self.instances().map(|i| i.instance_id.as_str()).collect();
            let missing = wanted
                .iter()
                .find(|id| !present.contains(**id))
                .map(|s| s.to_string())
                .unwrap_or_default();
            return Err(Error::UnknownInstance(missing));
        }
        Ok(DataPool {
            tasks,
            d_v: self.d_v,
            vocab_size: self.vocab_size,
        })
    }

    /// Same pool with one task's instances replaced.
    pub fn with_task_instances(&self, task_id: &str, instances: Vec<Instance>) -> Result<DataPool> {
        let idx = self
            .task_index(task_id)
            .ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
        let mut tasks = self.tasks.clone();
        tasks[idx] = TaskDataset::new(task_id, instances)?;
        DataPool::new(self.d_v, self.vocab_size, tasks)
    }

    /// Serializes the pool in the JSON-lines pool format.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = PoolHeader {
            meta: PoolMeta {
                d_v: self.d_v,
                vocab: self.vocab_size,
            },
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for inst in self.instances() {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Content hash of the pool, used to tie manifests to data.
    pub fn pool_id(&self) -> String {
        let mut hasher = PoolHasher::new(self.d_v, self.vocab_size);
        for inst in self.instances() {
            hasher.push(inst);
        }
        hasher.finish()
    }
}

/// Incremental pool hash: per-task digests of the serialized instance lines,
/// combined in task order. Depends only on task order and in-task order, so
/// a streamed file and its loaded pool hash identically.
pub struct PoolHasher {
    header: Vec<u8>,
    order: Vec<String>,
    tasks: HashMap<String, Sha256>,
}

impl PoolHasher {
    pub fn new(d_v: usize, vocab: usize) -> Self {
        let header = serde_json::to_vec(&PoolHeader {
            meta: PoolMeta { d_v, vocab },
        })
        .expect("header serializes");
        Self {
            header,
            order: Vec::new(),
            tasks: HashMap::new(),
        }
    }

    pub fn push(&mut self, inst: &Instance) {
        let h = self.tasks.entry(inst.task_id.clone()).or_insert_with(|| {
            self.order.push(inst.task_id.clone());
            Sha256::new()
        });
        h.update(serde_json::to_vec(inst).expect("instance serializes"));
        h.update(b"\n");
    }

    pub fn finish(mut self) -> String {
        let mut outer = Sha256::new();
        outer.update(&self.header);
        for id in &self.order {
            let h = self.tasks.remove(id).expect("task digest present");
            outer.update(h.finalize());
        }
        hex::encode(&outer.finalize()[..8])
    }
}

/// Short hex digest identifying a byte payload.
pub fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolHeader {
    meta: PoolMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolMeta {
    d_v: usize,
    vocab: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    task: String,
    id: String,
    features: Vec<f64>,
    instruction_tokens: Vec<u32>,
    target_tokens: Vec<u32>,
}

/// Streaming reader over a pool file. Validates each instance against the
/// header and rejects duplicate ids as it goes, so a pool never has to be
/// held in memory in full.
pub struct PoolReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    d_v: usize,
    vocab_size: usize,
    seen: HashSet<String>,
}

impl PoolReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut line_no = 0;
        let header = loop {
            line_no += 1;
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        path,
                        line: line_no,
                        message: "missing meta header".into(),
                    })
                }
                Some(Err(e)) => return Err(Error::io(&path, e)),
                Some(Ok(l)) if l.trim().is_empty() => continue,
                Some(Ok(l)) => break l,
            }
        };
        let header: PoolHeader = serde_json::from_str(&header).map_err(|e| Error::Parse {
            path: path.clone(),
            line: line_no,
            message: format!("expected {{\"meta\": {{\"d_v\", \"vocab\"}}}} header: {e}"),
        })?;
        if header.meta.d_v == 0 || header.meta.vocab == 0 {
            return Err(Error::Parse {
                path,
                line: line_no,
                message: "d_v and vocab must be positive".into(),
            });
        }
        Ok(Self {
            path,
            lines,
            line_no,
            d_v: header.meta.d_v,
            vocab_size: header.meta.vocab,
            seen: HashSet::new(),
        })
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn parse_error(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line_no,
            message,
        }
    }
}

impl Iterator for PoolReader {
    type Item = Result<Instance>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: InstanceLine = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(e) => return Some(Err(self.parse_error(format!("malformed instance: {e}")))),
            };
            let inst = Instance {
                instance_id: parsed.id,
                task_id: parsed.task,
                features: parsed.features,
                instruction_tokens: parsed.instruction_tokens,
                target_tokens: parsed.target_tokens,
            };
            if let Err(e) = inst.validate(self.d_v, self.vocab_size) {
                return Some(Err(self.parse_error(e.to_string())));
            }
            if !self.seen.insert(inst.instance_id.clone()) {
                return Some(Err(Error::DuplicateInstance(inst.instance_id)));
            }
            return Some(Ok(inst));
        }
    }
}

/// Loads a JSON-lines pool file, preserving instance order within each task.
pub fn load_pool(path: impl AsRef<Path>) -> Result<DataPool> {
    let reader = PoolReader::open(path)?;
    let (d_v, vocab) = (reader.d_v(), reader.vocab_size());
    let instances = reader.collect::<Result<Vec<_>>>()?;
    DataPool::from_instances(d_v, vocab, instances)
}

pub fn save_pool(pool: &DataPool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    pool.write_jsonl(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Per-task knobs of a synthetic pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub task_id: String,
    pub count: usize,
    /// Fraction of instances that are jittered copies of task prototypes.
    #[serde(default)]
    pub redundancy_fraction: f64,
    /// Fraction of the independent (non-redundant) instances whose targets
    /// are replaced by uniformly random tokens.
    #[serde(default)]
    pub noise_fraction: f64,
    /// Within-task feature spread for this task (overrides the pool-wide value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_std: Option<f64>,
}

fn default_target_length() -> usize {
    4
}
fn default_instruction_length() -> usize {
    6
}
fn default_prototypes() -> usize {
    8
}
fn default_feature_std() -> f64 {
    0.4
}
fn default_task_spread() -> f64 {
    1.5
}
fn default_positional_std() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPoolSpec {
    pub tasks: Vec<SyntheticTaskSpec>,
    pub jitter_std: f64,
    pub d_v: usize,
    pub vocab_size: usize,
    #[serde(default = "default_target_length")]
    pub target_length: usize,
    #[serde(default = "default_instruction_length")]
    pub instruction_length: usize,
    /// Number of cluster prototypes redundant instances are copied from.
    #[serde(default = "default_prototypes")]
    pub prototypes_per_task: usize,
    /// Standard deviation of features around the task centre.
    #[serde(default = "default_feature_std")]
    pub feature_std: f64,
    /// Standard deviation of task centres around the origin.
    #[serde(default = "default_task_spread")]
    pub task_spread: f64,
    /// Scale of the teacher's per-position logit offsets.
    #[serde(default = "default_positional_std")]
    pub positional_std: f64,
    pub teacher_seed: u64,
    pub sample_seed: u64,
}

impl SyntheticPoolSpec {
    /// Four tasks of 500 instances, the first one 80% redundant.
    pub fn desk_default() -> Self {
        let redundancy = [0.8, 0.0, 0.0, 0.0];
        Self {
            tasks: redundancy
                .iter()
                .enumerate()
                .map(|(k, &r)| SyntheticTaskSpec {
                    task_id: format!("task{k}"),
                    count: 500,
                    redundancy_fraction: r,
                    noise_fraction: 0.0,
                    feature_std: None,
                })
                .collect(),
            jitter_std: 0.01,
            d_v: 16,
            vocab_size: 32,
            target_length: default_target_length(),
            instruction_length: default_instruction_length(),
            prototypes_per_task: default_prototypes(),
            feature_std: default_feature_std(),
            task_spread: default_task_spread(),
            positional_std: default_positional_std(),
            teacher_seed: 7,
            sample_seed: 11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.tasks.is_empty() {
            return bad("synthetic pool needs at least one task");
        }
        if self.d_v == 0 || self.vocab_size == 0 || self.target_length == 0 {
            return bad("d_v, vocab_size and target_length must be positive");
        }
        if self.prototypes_per_task == 0 {
            return bad("prototypes_per_task must be positive");
        }
        for v in [self.jitter_std, self.feature_std, self.task_spread, self.positional_std] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("standard deviations must be finite and nonnegative");
            }
        }
        let mut ids = HashSet::new();
        for t in &self.tasks {
            if t.count == 0 {
                return Err(Error::Config(format!("task `{}` has zero instances", t.task_id)));
            }
            if !(0.0..=1.0).contains(&t.redundancy_fraction) {
                return Err(Error::Config(format!(
                    "task `{}` redundancy_fraction {} not in [0, 1]",
                    t.task_id, t.redundancy_fraction
                )));
            }
            if !(0.0..=1.0).contains(&t.noise_fraction) {
                return Err(Error::Config(format!(
                    "task `{}` noise_fraction {} not in [0, 1]",
                    t.task_id, t.noise_fraction
                )));
            }
            if t.feature_std.is_some_and(|s| !(s.is_finite() && s >= 0.0)) {
                return bad("feature_std must be finite and nonnegative");
            }
            if !ids.insert(&t.task_id) {
                return Err(Error::DuplicateTask(t.task_id.clone()));
            }
        }
        Ok(())
    }
}

/// Hidden linear labeller: token at position t is the argmax over the
/// vocabulary of `weights · x + offsets[t]`.
#[derive(Clone, Debug)]
pub struct Teacher {
    d_v: usize,
    weights: Vec<f64>,
    offsets: Vec<Vec<f64>>,
}

impl Teacher {
    pub fn new(d_v: usize, vocab: usize, target_length: usize, positional_std: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, streams::TEACHER);
        let scale = 1.0 / (d_v as f64).sqrt();
        let weights = (0..vocab * d_v)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let offsets = (0..target_length)
            .map(|_| {
                (0..vocab)
                    .map(|_| positional_std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self {
            d_v,
            weights,
            offsets,
        }
    }

    pub fn label(&self, features: &[f64]) -> Vec<u32> {
        self.offsets
            .iter()
            .map(|offset| {
                let mut best = (0u32, f64::NEG_INFINITY);
                for (v, (row, b)) in self.weights.chunks_exact(self.d_v).zip(offset).enumerate() {
                    let logit: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + b;
                    if logit > best.1 {
                        best = (v as u32, logit);
                    }
                }
                best.0
            })
            .collect()
    }
}

/// Where each synthetic instance came from.
#[derive(Clone, Debug, Default)]
pub struct SyntheticTrace {
    /// Prototype features per task, in task order.
    pub prototypes: Vec<Vec<Vec<f64>>>,
    /// Prototype index for redundant instances; absent for independent ones.
    pub prototype_of: HashMap<String, usize>,
}

pub fn generate_synthetic_pool(spec: &SyntheticPoolSpec) -> Result<DataPool> {
    generate_synthetic_pool_traced(spec).map(|(pool, _)| pool)
}

pub fn generate_synthetic_pool_traced(spec: &SyntheticPoolSpec) -> Result<(DataPool, SyntheticTrace)> {
    spec.validate()?;
    let teacher = Teacher::new(
        spec.d_v,
        spec.vocab_size,
        spec.target_length,
        spec.positional_std,
        spec.teacher_seed,
    );
    let n_tasks = spec.tasks.len();
    // Each task draws its instructions from its own window of the vocabulary.
    let window = (spec.vocab_size / n_tasks).max(1);
    let mut trace = SyntheticTrace::default();
    let mut tasks = Vec::with_capacity(n_tasks);

    for (k, task) in spec.tasks.iter().enumerate() {
        let mut rng = stream_rng(spec.sample_seed, streams::TASK_BASE + k as u64);
        let centre: Vec<f64> = (0..spec.d_v)
            .map(|_| spec.task_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let spread = Normal::new(0.0, task.feature_std.unwrap_or(spec.feature_std))
            .map_err(|e| Error::Config(e.to_string()))?;
        let jitter = Normal::new(0.0, spec.jitter_std).map_err(|e| Error::Config(e.to_string()))?;
        let token_lo = (k * window) % spec.vocab_size;

        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let features: Vec<f64> = centre.iter().map(|c| c + spread.sample(rng)).collect();
            // Lengths vary in [L/2, 3L/2] so length-based ranking has signal.
            let len = if spec.instruction_length == 0 {
                0
            } else {
                let lo = (spec.instruction_length / 2).max(1);
                rng.random_range(lo..=spec.instruction_length + spec.instruction_length / 2)
            };
            let instruction: Vec<u32> = (0..len)
                .map(|_| ((token_lo + rng.random_range(0..window)) % spec.vocab_size) as u32)
                .collect();
            (features, instruction)
        };

        let prototypes: Vec<(Vec<f64>, Vec<u32>)> =
            (0..spec.prototypes_per_task).map(|_| draw(&mut rng)).collect();
        let prototype_targets: Vec<Vec<u32>> =
            prototypes.iter().map(|(f, _)| teacher.label(f)).collect();

        let n_redundant = (task.redundancy_fraction * task.count as f64).round() as usize;
        let mut redundant = vec![false; task.count];
        redundant[..n_redundant].iter_mut().for_each(|r| *r = true);
        redundant.shuffle(&mut rng);

        let n_noisy = (task.noise_fraction * (task.count - n_redundant) as f64).round() as usize;
        let mut noisy = vec![false; task.count - n_redundant];
        noisy[..n_noisy].iter_mut().for_each(|r| *r = true);
        noisy.shuffle(&mut rng);
        let mut noisy = noisy.into_iter();

        let mut instances = Vec::with_capacity(task.count);
        let mut next_proto = 0usize;
        for (j, &is_copy) in redundant.iter().enumerate() {
            let instance_id = format!("{}-{j:05}", task.task_id);
            let inst = if is_copy {
                let p = next_proto % spec.prototypes_per_task;
                next_proto += 1;
                trace.prototype_of.insert(instance_id.clone(), p);
                let (base, instruction) = &prototypes[p];
                Instance {
                    instance_id,
                    task_id: task.task_id.clone(),
                    features: base.iter().map(|x| x + jitter.sample(&mut rng)).collect(),
                    instruction_tokens: instruction.clone(),
                    target_tokens: prototype_targets[p].clone(),
                }
            } else {
                let (features, instruction_tokens) = draw(&mut rng);
                let target_tokens = if noisy.next().unwrap_or(false) {
                    (0..spec.target_length)
                        .map(|_| rng.random_range(0..spec.vocab_size) as u32)
                        .collect()
                } else {
                    teacher.label(&features)
                };
                Instance {
                    instance_id,
                    task_id: task.task_id.clone(),
                    features,
                    instruction_tokens,
                    target_tokens,
                }
            };
            instances.push(inst);
        }
        trace
            .prototypes
            .push(prototypes.into_iter().map(|(f, _)| f).collect());
        tasks.push(TaskDataset {
            task_id: task.task_id.clone(),
            instances,
        });
    }
    let pool = DataPool::new(spec.d_v, spec.vocab_size, tasks)?;
    Ok((pool, trace))
}

/// `ceil(fraction * n)`, tolerant of representation error in `fraction`.
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    ((x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize).min(n)
}

/// Keeps `ceil(keep_fraction * |task|)` uniformly sampled instances of one
/// task, in their original order. Other tasks are untouched.
pub fn prune_task(pool: &DataPool, task_id: &str, keep_fraction: f64, seed: u64) -> Result<DataPool> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::Config(format!("keep_fraction {keep_fraction} not in [0, 1]")));
    }
    let task = pool
        .task(task_id)
        .ok_or_else(|| Error::UnknownTask(task_id.to_string()))?;
    let n = task.len();
    let keep = ceil_count(keep_fraction, n);
    let mut rng = stream_rng(seed, streams::PRUNE);
    let mut picked = index::sample(&mut rng, n, keep).into_vec();
    picked.sort_unstable();
    let kept = picked.into_iter().map(|i| task.instances[i].clone()).collect();
    pool.with_task_instances(task_id, kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticPoolSpec {
        let mut spec = SyntheticPoolSpec::desk_default();
        for t in &mut spec.tasks {
            t.count = 40;
        }
        spec
    }

    fn inst(task: &str, id: &str) -> Instance {
        Instance {
            instance_id: id.into(),
            task_id: task.into(),
            features: vec![0.0, 1.0],
            instruction_tokens: vec![1],
            target_tokens: vec![2],
        }
    }

    #[test]
    fn pool_rejects_duplicates_and_bad_tokens() {
        let err = DataPool::from_instances(2, 3, vec![inst("a", "x"), inst("b", "x")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateInstance(ref id) if id == "x"));

        let mut bad = inst("a", "y");
        bad.target_tokens = vec![3];
        assert!(matches!(
            DataPool::from_instances(2, 3, vec![bad]),
            Err(Error::TokenOutOfRange { token: 3, vocab: 3 })
        ));

        let mut empty = inst("a", "z");
        empty.target_tokens.clear();
        assert!(matches!(DataPool::from_instances(2, 3, vec![empty]), Err(Error::Empty(_))));

        let mut nan = inst("a", "w");
        nan.features[0] = f64::NAN;
        assert!(matches!(DataPool::from_instances(2, 3, vec![nan]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn teacher_scores_perfectly_on_its_own_labels() {
        let spec = small_spec();
        let teacher = Teacher::new(spec.d_v, spec.vocab_size, spec.target_length, spec.positional_std, spec.teacher_seed);
        let pool = generate_synthetic_pool(&spec).unwrap();
        for task in pool.tasks() {
            for i in task.instances() {
                if task.task_id() != "task0" {
                    assert_eq!(teacher.label(&i.features), i.target_tokens);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let spec = small_spec();
        let a = generate_synthetic_pool(&spec).unwrap();
        let b = generate_synthetic_pool(&spec).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let mut other = spec.clone();
        other.sample_seed += 1;
        assert_ne!(a.to_jsonl(), generate_synthetic_pool(&other).unwrap().to_jsonl());
    }

    #[test]
    fn zero_redundancy_shares_no_prototype() {
        let mut spec = small_spec();
        for t in &mut spec.tasks {
            t.redundancy_fraction = 0.0;
        }
        let (pool, trace) = generate_synthetic_pool_traced(&spec).unwrap();
        assert!(trace.prototype_of.is_empty());
        let all: Vec<&Instance> = pool.instances().collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(a.features, b.features);
            }
        }
    }

    #[test]
    fn redundant_instances_sit_near_prototypes() {
        let mut spec = small_spec();
        spec.tasks[0].count = 200;
        spec.tasks[0].redundancy_fraction = 0.8;
        spec.jitter_std = 0.01;
        let (pool, trace) = generate_synthetic_pool_traced(&spec).unwrap();
        let task = pool.task("task0").unwrap();
        let radius = 0.1 * (spec.d_v as f64).sqrt();
        let near = task
            .instances()
            .iter()
            .filter(|inst| {
                trace.prototypes[0].iter().any(|p| {
                    let d2: f64 = p.iter().zip(&inst.features).map(|(a, b)| (a - b).powi(2)).sum();
                    d2.sqrt() <= radius
                })
            })
            .count();
        assert!(near as f64 >= 0.8 * task.len() as f64, "{near} of {}", task.len());
    }

    #[test]
    fn prune_counts_and_isolation() {
        let mut spec = small_spec();
        spec.tasks[1].count = 80;
        let pool = generate_synthetic_pool(&spec).unwrap();
        let half = prune_task(&pool, "task1", 0.5, 3).unwrap();
        assert_eq!(half.task("task1").unwrap().len(), 40);
        for id in ["task0", "task2", "task3"] {
            assert_eq!(half.task(id), pool.task(id));
        }
        assert_eq!(prune_task(&pool, "task1", 1.0, 3).unwrap(), pool);
        assert_eq!(prune_task(&pool, "task1", 0.5, 3).unwrap(), half);
        assert!(matches!(prune_task(&pool, "nope", 0.5, 3), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn ceil_count_ignores_representation_noise() {
        assert_eq!(ceil_count(0.1, 30), 3);
        assert_eq!(ceil_count(0.02, 400), 8);
        assert_eq!(ceil_count(0.02, 401), 9);
        assert_eq!(ceil_count(0.0, 10), 0);
        assert_eq!(ceil_count(1.0, 10), 10);
    }
}
