//! Sequential multi-task training with a quadratic consolidation penalty.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::importance::{compute_importance, loss_gradient_importance, task_loss, ImportanceConfig};
use crate::model::TaskModel;
use crate::params::{ImportanceMap, ParamGroup, ParamStore, THETA_PREFIX};
use crate::targets::Sample;
use crate::task::TaskId;

/// Update rule applied to the penalized gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with the usual moment decays 0.9 / 0.999.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" | "gd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Active tasks; always trained in ordinal order.
    pub tasks: Vec<TaskId>,
    /// Importance from contrastive MI gradients; loss gradients otherwise.
    pub use_mi: bool,
    /// Penalty weight over feature-extractor parameters.
    pub lambda_theta: f64,
    /// Penalty weight over head parameters.
    pub lambda_head: f64,
    /// Gradient steps per task per batch.
    pub inner_steps: usize,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a better validation PF loss.
    pub patience: Option<usize>,
    pub importance: ImportanceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            lr_decay: 0.7,
            decay_every: 5,
            batch_size: 32,
            seed: 0,
            tasks: TaskId::ALL.to_vec(),
            use_mi: true,
            lambda_theta: 1e-5,
            lambda_head: 1e-5,
            inner_steps: 1,
            optimizer: Optimizer::Sgd,
            patience: None,
            importance: ImportanceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !self.tasks.contains(&TaskId::Pf) {
            return bad("the task list must contain pf");
        }
        if self.batch_size == 0 || self.inner_steps == 0 || self.decay_every == 0 {
            return bad("batch_size, inner_steps and decay_every must be positive");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return bad("lr and lr_decay must be positive");
        }
        if !(self.lambda_theta >= 0.0) || !(self.lambda_head >= 0.0) {
            return bad("penalty weights must be nonnegative");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    fn sorted_tasks(&self) -> Vec<TaskId> {
        let mut t = self.tasks.clone();
        t.sort();
        t.dedup();
        t
    }
}

/// Stored optimum and importance of one completed task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub optimum: ParamStore,
    pub importance: ImportanceMap,
}

/// Per-task records plus the two penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidationState {
    pub records: BTreeMap<TaskId, TaskRecord>,
    pub lambda_theta: f64,
    pub lambda_head: f64,
}

impl ConsolidationState {
    pub fn new(lambda_theta: f64, lambda_head: f64) -> Self {
        Self {
            records: BTreeMap::new(),
            lambda_theta,
            lambda_head,
        }
    }

    /// `sum_n lambda * Omega_n * (p - p*_n)^2` over the records of `tasks`,
    /// with its gradient. Feature-extractor entries use `lambda_theta`, head
    /// entries `lambda_head`.
    pub fn penalty(&self, params: &ParamStore, tasks: &[TaskId]) -> Result<(f64, ParamStore)> {
        let mut grad = params.zeros_like();
        let mut value = 0.0;
        for task in tasks {
            let Some(rec) = self.records.get(task) else { continue };
            params.check_aligned(&rec.optimum)?;
            params.check_aligned(&rec.importance.omega)?;
            for ((name, p), g) in params.iter().zip(grad.iter_mut().map(|(_, g)| g)) {
                let lambda = match ParamGroup::of(name) {
                    Some(ParamGroup::Theta) => self.lambda_theta,
                    _ => self.lambda_head,
                };
                if lambda == 0.0 {
                    continue;
                }
                let star = rec.optimum.get(name)?.data();
                let omega = rec.importance.omega.get(name)?.data();
                for (k, gk) in g.data_mut().iter_mut().enumerate() {
                    let d = p.data()[k] - star[k];
                    value += lambda * omega[k] * d * d;
                    *gk += 2.0 * lambda * omega[k] * d;
                }
            }
        }
        Ok((value, grad))
    }

    /// Per-entry stiffness `sum_n lambda * Omega_n` and anchor
    /// `sum_n lambda * Omega_n * p*_n` over the records of `tasks`; the
    /// penalty gradient is `2 (stiffness * p - anchor)`.
    fn quadratic(&self, params: &ParamStore, tasks: &[TaskId]) -> Result<(ParamStore, ParamStore)> {
        let mut stiff = params.zeros_like();
        let mut anchor = params.zeros_like();
        for task in tasks {
            let Some(rec) = self.records.get(task) else { continue };
            params.check_aligned(&rec.optimum)?;
            params.check_aligned(&rec.importance.omega)?;
            for ((name, w), (_, a)) in stiff.iter_mut().zip(anchor.iter_mut()) {
                let lambda = match ParamGroup::of(name) {
                    Some(ParamGroup::Theta) => self.lambda_theta,
                    _ => self.lambda_head,
                };
                let star = rec.optimum.get(name)?.data();
                let omega = rec.importance.omega.get(name)?.data();
                for (k, (w, a)) in w.data_mut().iter_mut().zip(a.data_mut()).enumerate() {
                    *w += lambda * omega[k];
                    *a += lambda * omega[k] * star[k];
                }
            }
        }
        Ok((stiff, anchor))
    }
}

/// Penalty value over every stored record.
pub fn consolidation_penalty(params: &ParamStore, state: &ConsolidationState) -> Result<f64> {
    let tasks: Vec<TaskId> = state.records.keys().copied().collect();
    Ok(state.penalty(params, &tasks)?.0)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub task: TaskId,
    /// Mean single-task loss over the epoch's batches, before updates.
    pub train_loss: f64,
    /// Single-task loss on the validation samples; NaN when there are none.
    pub val_metric: f64,
}

/// Writes `epoch,task,train_loss,val_metric`.
pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "epoch,task,train_loss,val_metric").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.epoch, r.task, r.train_loss, r.val_metric).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub state: ConsolidationState,
    pub epochs_run: usize,
}

struct AdamState {
    m: ParamStore,
    v: ParamStore,
    step: i32,
}

/// Applies updates. Plain descent takes the penalty as an exact proximal
/// step, `p <- (p - lr g + 2 lr anchor) / (1 + 2 lr stiffness)`, which
/// matches an explicit step to first order in `lr` and stays stable for any
/// penalty weight. Adam folds the penalty gradient into its moments.
struct Stepper {
    kind: Optimizer,
    adam: BTreeMap<TaskId, AdamState>,
}

impl Stepper {
    fn new(kind: Optimizer) -> Self {
        Self {
            kind,
            adam: BTreeMap::new(),
        }
    }

    fn apply(
        &mut self,
        task: TaskId,
        params: &mut ParamStore,
        grad: &ParamStore,
        (stiff, anchor): &(ParamStore, ParamStore),
        lr: f64,
        active: &dyn Fn(&str) -> bool,
    ) {
        let terms = grad.iter().zip(stiff.iter()).zip(anchor.iter());
        match self.kind {
            Optimizer::Sgd => {
                for ((name, p), (((_, g), (_, w)), (_, a))) in params.iter_mut().zip(terms) {
                    if !active(name) {
                        continue;
                    }
                    for (k, p) in p.data_mut().iter_mut().enumerate() {
                        let two_lr = 2.0 * lr;
                        *p = (*p - lr * g.data()[k] + two_lr * a.data()[k]) / (1.0 + two_lr * w.data()[k]);
                    }
                }
            }
            Optimizer::Adam => {
                let st = self.adam.entry(task).or_insert_with(|| AdamState {
                    m: params.zeros_like(),
                    v: params.zeros_like(),
                    step: 0,
                });
                st.step += 1;
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let c1 = 1.0 - b1.powi(st.step);
                let c2 = 1.0 - b2.powi(st.step);
                let moments = st.m.iter_mut().zip(st.v.iter_mut());
                for (((name, p), (((_, g), (_, w)), (_, a))), ((_, m), (_, v))) in
                    params.iter_mut().zip(terms).zip(moments)
                {
                    if !active(name) {
                        continue;
                    }
                    let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for k in 0..p.len() {
                        let gk = g.data()[k] + 2.0 * (w.data()[k] * p[k] - a.data()[k]);
                        m[k] = b1 * m[k] + (1.0 - b1) * gk;
                        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                        p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn trainable(task: TaskId) -> impl Fn(&str) -> bool {
    move |name: &str| name.starts_with(THETA_PREFIX) || ParamGroup::of(name) == Some(ParamGroup::Head(task))
}

/// Mean single-task loss with every parameter held constant.
pub fn evaluate_loss<M: TaskModel + ?Sized>(model: &M, task: TaskId, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let tape = Tape::new();
    let p = model.params().bind(&tape, |_| false);
    Ok(task_loss(model, &p, task, samples)?.value().item())
}

/// Position of a step within a run, for diagnostics.
#[derive(Debug, Clone, Copy)]
struct StepAt {
    epoch: usize,
    batch: usize,
    lr: f64,
}

/// One gradient step of `task` on `batch`, penalized against the records of
/// `penalized`. Only the shared parameters and the task's own head move.
/// Returns the single-task loss before the step.
#[allow(clippy::too_many_arguments)]
fn step<M: TaskModel + ?Sized>(
    model: &mut M,
    task: TaskId,
    batch: &[Sample],
    state: &ConsolidationState,
    penalized: &[TaskId],
    stepper: &mut Stepper,
    at: StepAt,
) -> Result<f64> {
    let active = trainable(task);
    let tape = Tape::new();
    let p = model.params().bind(&tape, &active);
    let loss = task_loss(&*model, &p, task, batch)?;
    let value = loss.value().item();
    let grad = model.params().aligned_gradients(&tape.backward(loss)?);
    let pen = if penalized.is_empty() {
        0.0
    } else {
        state.penalty(model.params(), penalized)?.0
    };
    let diverged = || Error::Diverged {
        task: task.to_string(),
        loss: value + pen,
        lr: at.lr,
        batch: at.batch,
        epoch: at.epoch,
    };
    if !(value + pen).is_finite() || !grad.is_finite() {
        return Err(diverged());
    }
    let quad = state.quadratic(model.params(), penalized)?;
    stepper.apply(task, model.params_mut(), &grad, &quad, at.lr, &active);
    if !model.params().is_finite() {
        return Err(diverged());
    }
    Ok(value)
}

/// Stores the current parameters as the optimum of `task`. Importance is
/// recomputed on `batch` when `refresh` is set or none exists yet.
fn store_record<M: TaskModel + ?Sized>(
    model: &M,
    task: TaskId,
    batch: &[Sample],
    cfg: &TrainConfig,
    state: &mut ConsolidationState,
    refresh: bool,
) -> Result<()> {
    let importance = match state.records.get(&task) {
        Some(rec) if !refresh => rec.importance.clone(),
        _ if cfg.use_mi => compute_importance(model, task, batch, &cfg.importance)?,
        _ => loss_gradient_importance(model, task, batch)?,
    };
    state.records.insert(
        task,
        TaskRecord {
            optimum: model.params().clone(),
            importance,
        },
    );
    Ok(())
}

fn shuffled_batches(train: &[Sample], batch_size: usize, order: &mut [usize], rng: &mut ChaCha8Rng) -> Vec<Vec<Sample>> {
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| train[i].clone()).collect())
        .collect()
}

/// Trains one task alone for `cfg.epochs`, penalized against every record
/// already in `state` for other tasks, then stores its own record with
/// importance from the last batch. Returns the mean loss per epoch.
pub fn train_task<M: TaskModel + ?Sized>(
    model: &mut M,
    task: TaskId,
    train: &[Sample],
    state: &mut ConsolidationState,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let penalized: Vec<TaskId> = state.records.keys().copied().filter(|&t| t != task).collect();
    let mut stepper = Stepper::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut last = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut batches = shuffled_batches(train, cfg.batch_size, &mut order, &mut rng);
        let mut sum = 0.0;
        for (batch, b) in batches.iter().enumerate() {
            for _ in 0..cfg.inner_steps {
                let at = StepAt { epoch, batch, lr };
                let l = step(model, task, b, state, &penalized, &mut stepper, at)?;
                sum += l / cfg.inner_steps as f64;
            }
        }
        losses.push(sum / batches.len() as f64);
        last = batches.pop().unwrap_or_default();
    }
    if last.is_empty() {
        last = train.to_vec();
    }
    store_record(&*model, task, &last, cfg, state, true)?;
    Ok(losses)
}

/// Runs `cfg.epochs` passes over `train`. Within every batch the active
/// tasks take their steps in ordinal order, each penalized against the tasks
/// already visited in that batch and against records in `state` for tasks
/// outside the active set. Deterministic given `cfg.seed`.
pub fn train_from<M: TaskModel + ?Sized>(
    model: &mut M,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut state: ConsolidationState,
) -> Result<TrainReport> {
    cfg.validate()?;
    let tasks = cfg.sorted_tasks();
    let prior: Vec<TaskId> = state.records.keys().copied().filter(|t| !tasks.contains(t)).collect();
    let mut stepper = Stepper::new(cfg.optimizer);
    let mut log = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut best, mut stale) = (f64::INFINITY, 0);
    let mut epochs_run = 0;
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = shuffled_batches(train, cfg.batch_size, &mut order, &mut rng);
        let mut sums = vec![0.0; tasks.len()];
        for (bi, batch) in batches.iter().enumerate() {
            let refresh = bi + 1 == batches.len();
            for (k, &task) in tasks.iter().enumerate() {
                let mut penalized = prior.clone();
                penalized.extend(&tasks[..k]);
                for s in 0..cfg.inner_steps {
                    let at = StepAt { epoch, batch: bi, lr };
                    let l = step(model, task, batch, &state, &penalized, &mut stepper, at)?;
                    if s == 0 {
                        sums[k] += l;
                    }
                }
                store_record(&*model, task, batch, cfg, &mut state, refresh)?;
            }
        }
        epochs_run += 1;
        let mut val_pf = f64::NAN;
        for (k, &task) in tasks.iter().enumerate() {
            let train_loss = sums[k] / batches.len() as f64;
            let val_metric = evaluate_loss(&*model, task, val)?;
            if task == TaskId::Pf {
                val_pf = val_metric;
            }
            debug!("epoch {epoch} {task}: train {train_loss:.6} val {val_metric:.6}");
            log.push(LogRow {
                epoch,
                task,
                train_loss,
                val_metric,
            });
        }
        info!("epoch {epoch} done, lr {lr:.3e}, val pf {val_pf:.6}");
        if let Some(patience) = cfg.patience {
            if val_pf < best {
                best = val_pf;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    info!("stopping early after epoch {epoch}");
                    break;
                }
            }
        }
    }
    Ok(TrainReport { log, state, epochs_run })
}

/// [`train_from`] with an empty consolidation state.
pub fn train<M: TaskModel + ?Sized>(
    model: &mut M,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let state = ConsolidationState::new(cfg.lambda_theta, cfg.lambda_head);
    train_from(model, train, val, cfg, state)
}
