//! Gradient-based data valuation and subset selection for multi-task
//! instruction pools.
//!
//! A lightly trained reference model supplies per-sample gradients of its
//! projection and output layers. Each task is valued by its mean gradient
//! norm and each instance by the cosine between its gradient and the task's
//! mean gradient. Task values set the per-task budgets of the selected
//! subset; instance values, passed through a sigmoid, weight the sampling
//! within each task.
//!
//! Module map:
//!
//! * [`pool`]: instances, tasks, pools, the JSON-lines format and synthetic pools
//! * [`model`]: the analytic reference model with closed-form gradients
//! * [`valuation`]: task and instance values
//! * [`selection`]: proportions, budgets, sampling and the baselines
//! * [`harness`]: end-to-end experiments

pub mod error;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod pool;
pub mod rng;
pub mod selection;
pub mod valuation;

pub use error::{Error, Result};
pub use model::{EvalReport, GradientRecord, LossBreakdown, Matrix, Optimizer, ReferenceModel, TrainConfig};
pub use pool::{
    generate_synthetic_pool, load_pool, prune_task, save_pool, DataPool, Instance, SyntheticPoolSpec,
    SyntheticTaskSpec, TaskDataset,
};
pub use selection::{
    allocate_budgets, baseline_select, sampling_scores, select_subset, task_proportions, BaselineMethod,
    SelectedSubset, SelectionPlan, SurplusPolicy,
};
pub use valuation::{estimate_values, export_values, ValueReport};
