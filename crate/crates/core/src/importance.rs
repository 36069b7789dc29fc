//! Contrastive mutual-information proxies and the per-parameter importance
//! strengths derived from their gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::TaskModel;
use crate::params::ImportanceMap;
use crate::targets::{Sample, Target};
use crate::task::TaskId;

/// Second-view transform: one multiplicative scale per sample drawn from
/// `[1 - scale_range, 1 + scale_range]`, plus Gaussian jitter per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub scale_range: f64,
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            scale_range: 0.05,
            jitter_std: 0.05,
            seed: 0,
        }
    }
}

/// Seed-deterministic second view of every input.
pub fn make_view(batch: &[Tensor], cfg: &ViewConfig) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.jitter_std.max(0.0)).expect("finite std");
    batch
        .iter()
        .map(|x| {
            let scale = if cfg.scale_range > 0.0 {
                rng.random_range(1.0 - cfg.scale_range..=1.0 + cfg.scale_range)
            } else {
                1.0
            };
            let data = x
                .data()
                .iter()
                .map(|v| {
                    let noise = if cfg.jitter_std > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
                    scale * v + noise
                })
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })
        .collect()
}

/// Weights and temperature of the contrastive objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoNceConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

fn similarity<'t>(a: &Var<'t>, b: &Var<'t>, temperature: f64) -> Result<Var<'t>> {
    let s = a.matmul(&b.transpose()?)?.scale(1.0 / temperature);
    if !s.value().is_finite() {
        return Err(Error::NonFinite("contrastive similarity".into()));
    }
    Ok(s)
}

fn check_pair(op: &'static str, f: &Var<'_>, f_view: &Var<'_>, temperature: f64) -> Result<usize> {
    let s = f.shape();
    if s.len() != 2 || s[0] == 0 || f_view.shape() != s {
        return Err(Error::shape(op, format!("{s:?} vs {:?}", f_view.shape())));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    Ok(s[0])
}

/// Batch mean of `log s(i, i') - log sum_j s(i, j')` with
/// `s(u, v) = exp(u.v / r)`. Rows of `f` and `f_view` are paired items.
pub fn infonce<'t>(f: &Var<'t>, f_view: &Var<'t>, temperature: f64) -> Result<Var<'t>> {
    let b = check_pair("infonce", f, f_view, temperature)?;
    let s = similarity(f, f_view, temperature)?;
    let eye = f.tape().constant(Tensor::identity(b));
    let diag = s.mul(&eye)?.sum_rows();
    Ok(diag.sub(&s.logsumexp_rows())?.mean())
}

/// Label-aware variant for classification outputs:
/// `alpha * infonce + beta * sum_i sum_{p in P_i} log(s(i,p) s(i,p') s(i',p) / D_i^3) / (3 B |P_i|)`
/// where `D_i = sum_j s(i,j) + s(i,j') + s(i',j)` and `P_i` holds every item
/// sharing the label of `i`, including `i` itself.
pub fn supervised_infonce<'t>(
    f: &Var<'t>,
    f_view: &Var<'t>,
    labels: &[usize],
    cfg: &InfoNceConfig,
) -> Result<Var<'t>> {
    let b = check_pair("supervised infonce", f, f_view, cfg.temperature)?;
    if labels.len() != b {
        return Err(Error::shape("supervised infonce", format!("{} labels for {b} items", labels.len())));
    }
    if cfg.alpha < 0.0 || cfg.beta < 0.0 || cfg.alpha + cfg.beta <= 0.0 {
        return Err(Error::Config("need alpha, beta >= 0 with alpha + beta > 0".into()));
    }
    let unsup = infonce(f, f_view, cfg.temperature)?.scale(cfg.alpha);
    if cfg.beta == 0.0 {
        return Ok(unsup);
    }
    let tape = f.tape();
    let anchor = similarity(f, f, cfg.temperature)?;
    let cross = similarity(f, f_view, cfg.temperature)?;
    let cross_t = cross.transpose()?;
    let positives: Vec<usize> = labels
        .iter()
        .map(|&y| labels.iter().filter(|&&q| q == y).count())
        .collect();
    let mut mask = Vec::with_capacity(b * b);
    for (i, &yi) in labels.iter().enumerate() {
        let w = 1.0 / (3.0 * b as f64 * positives[i] as f64);
        mask.extend(labels.iter().map(|&yp| if yp == yi { w } else { 0.0 }));
    }
    let mask = tape.constant(Tensor::matrix(b, b, mask)?);
    let numer = anchor.add(&cross)?.add(&cross_t)?.mul(&mask)?.sum();
    let lse = Var::concat(&[anchor, cross, cross_t], 1)?.logsumexp_rows().sum().scale(1.0 / b as f64);
    let sup = numer.sub(&lse)?.scale(cfg.beta);
    unsup.add(&sup)
}

/// Settings for importance estimation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub view: ViewConfig,
    pub infonce: InfoNceConfig,
}

fn as_rows<'t>(v: Var<'t>) -> Result<Var<'t>> {
    match v.shape().len() {
        2 => Ok(v),
        1 => {
            let n = v.shape()[0];
            v.reshape(vec![1, n])
        }
        _ => {
            let s = v.shape();
            let last = *s.last().expect("nonempty shape");
            v.reshape(vec![s.iter().product::<usize>() / last.max(1), last])
        }
    }
}

/// Per-row class labels of a classification target.
fn class_rows(samples: &[Sample], task: TaskId) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for s in samples {
        match s.target(task)? {
            Target::Classes(c) => out.extend(c),
            Target::Values(_) => {
                return Err(Error::Config(format!("{task} target is not a class list")));
            }
        }
    }
    Ok(out)
}

/// `|d(MI(X; Z) + MI(g(Z); X)) / d param|` at the current parameters.
/// Items are the rows of the feature map and head output of every sample
/// (one row per node). The head term is label-aware for classification
/// tasks. Parameters off both paths get exactly zero.
pub fn compute_importance<M: TaskModel + ?Sized>(
    model: &M,
    task: TaskId,
    samples: &[Sample],
    cfg: &ImportanceConfig,
) -> Result<ImportanceMap> {
    if samples.is_empty() {
        return Err(Error::Config("importance needs at least one sample".into()));
    }
    let inputs: Vec<Tensor> = samples.iter().map(|s| s.input.clone()).collect();
    let views = make_view(&inputs, &cfg.view);
    let tape = Tape::new();
    let p = model.params().bind(&tape, |_| true);
    let (mut z, mut z_view, mut h, mut h_view) = (vec![], vec![], vec![], vec![]);
    for (x, xv) in inputs.iter().zip(&views) {
        let zx = model.features(&p, x)?;
        let zv = model.features(&p, xv)?;
        h.push(as_rows(model.head(&p, task, zx, x)?)?);
        h_view.push(as_rows(model.head(&p, task, zv, xv)?)?);
        z.push(as_rows(zx)?);
        z_view.push(as_rows(zv)?);
    }
    let (z, z_view) = (Var::concat(&z, 0)?, Var::concat(&z_view, 0)?);
    let (h, h_view) = (Var::concat(&h, 0)?, Var::concat(&h_view, 0)?);
    let r = cfg.infonce.temperature;
    let mi_features = infonce(&z, &z_view, r)?;
    let mi_head = if task.is_classification() {
        let labels = class_rows(samples, task)?;
        supervised_infonce(&h, &h_view, &labels, &cfg.infonce)?
    } else {
        infonce(&h, &h_view, r)?
    };
    let grads = tape.backward(mi_features.add(&mi_head)?)?;
    Ok(ImportanceMap::from_gradients(task, model.params(), &grads))
}

/// Mean single-task loss over `samples`: cross-entropy for classification,
/// mean squared error otherwise.
pub fn task_loss<'t, M: TaskModel + ?Sized>(
    model: &M,
    p: &crate::params::Bound<'t>,
    task: TaskId,
    samples: &[Sample],
) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for s in samples {
        let z = model.features(p, &s.input)?;
        let out = model.head(p, task, z, &s.input)?;
        let l = match s.target(task)? {
            Target::Classes(c) => out.cross_entropy(c)?,
            Target::Values(v) => out.mse(&out.tape().constant(v.clone()))?,
        };
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("loss needs at least one sample".into()))?;
    Ok(total.scale(1.0 / samples.len() as f64))
}

/// `|d loss / d param|` of the single-task loss on `samples`.
pub fn loss_gradient_importance<M: TaskModel + ?Sized>(
    model: &M,
    task: TaskId,
    samples: &[Sample],
) -> Result<ImportanceMap> {
    let tape = Tape::new();
    let p = model.params().bind(&tape, |_| true);
    let loss = task_loss(model, &p, task, samples)?;
    let grads = tape.backward(loss)?;
    Ok(ImportanceMap::from_gradients(task, model.params(), &grads))
}
