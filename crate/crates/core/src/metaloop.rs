//! Bilevel training: differentiable inner steps under the learned loss, the
//! meta-gradient through the unrolled steps, offline initialization of the
//! loss network and online lockstep adaptation.
//!
//! The recorded (differentiated) inner step is always plain SGD,
//! `theta - alpha * grad M`. When the realized base optimizer uses momentum or
//! weight decay, the applied update differs from the recorded one; with the
//! defaults (no momentum, no decay) they coincide bit for bit.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Batch, BatchStream, Dataset, Splits};
use crate::error::{Error, Result};
use crate::gradcheck::{cosine_similarity, finite_diff_grad, flatten, max_abs_error, max_relative_error, unflatten};
use crate::harness::records::{ClockMode, MetricsRecord, RunClock, SnapshotRow, Split};
use crate::lossnet::{LearnedLoss, LossNetMode, LossNetwork};
use crate::models::{error_rate, Arch, BaseModel, TaskLoss};
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState, SgdConfig, SgdState};
use crate::tensor::Tensor;

/// Where meta batches are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaBatchSource {
    TrainSplit,
    #[default]
    ValidSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Outer iterations of the offline initialization.
    pub s_init: usize,
    /// Inner steps per offline outer iteration.
    pub s_inner: usize,
    /// Base training steps.
    pub s_train: usize,
    pub eta_offline: f64,
    pub eta_online: f64,
    /// Base optimizer. Only `alpha` enters the differentiated step.
    pub inner: SgdConfig,
    /// Adam moments and epsilon for the meta optimizer; `eta` is taken from
    /// `eta_offline` / `eta_online`.
    pub adam: AdamConfig,
    pub meta_source: MetaBatchSource,
    pub task: TaskLoss,
    /// Task losses above this count as divergence.
    pub divergence_threshold: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            s_init: 2500,
            s_inner: 1,
            s_train: 5000,
            eta_offline: 1e-3,
            eta_online: 1e-5,
            inner: SgdConfig::default(),
            adam: AdamConfig::default(),
            meta_source: MetaBatchSource::ValidSplit,
            task: TaskLoss::CrossEntropy,
            divergence_threshold: 1e6,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_inner == 0 {
            return Err(Error::Config("s_inner must be at least 1".into()));
        }
        if [self.eta_offline, self.eta_online]
            .iter()
            .any(|e| e.is_nan() || *e < 0.0)
        {
            return Err(Error::Config("meta learning rates must be >= 0".into()));
        }
        self.inner.validate()?;
        self.adam.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Handcrafted task loss only.
    BaselineCe,
    /// Offline-initialized loss network, frozen during training.
    OfflineFixed,
    /// Offline-initialized loss network, updated after every base step.
    OnlineAdalfl,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::BaselineCe, TrainMode::OfflineFixed, TrainMode::OnlineAdalfl];

    pub fn label(self) -> &'static str {
        match self {
            TrainMode::BaselineCe => "baseline_ce",
            TrainMode::OfflineFixed => "offline_fixed",
            TrainMode::OnlineAdalfl => "online_adalfl",
        }
    }

    pub fn uses_loss_net(self) -> bool {
        self != TrainMode::BaselineCe
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Parse(format!("unknown mode {s:?}")))
    }
}

/// splitmix64 finalizer; derives independent stream seeds from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TRAIN: u64 = 1;
const STREAM_META: u64 = 2;
const STREAM_OFFLINE_TRAIN: u64 = 3;
const STREAM_OFFLINE_META: u64 = 4;
const STREAM_OFFLINE_RESET: u64 = 5;

/// Result of one recorded inner step.
pub struct InnerStep {
    pub theta_next: Vec<crate::autodiff::Var>,
    pub grads: Vec<crate::autodiff::Var>,
    pub base_loss: crate::autodiff::Var,
}

/// `theta - alpha * grad_theta M_phi(y, f_theta(x))`, recorded so that the
/// result stays differentiable with respect to `phi`.
#[allow(clippy::too_many_arguments)]
pub fn inner_step<L: LearnedLoss + ?Sized>(
    tape: &mut Tape,
    model: &BaseModel,
    theta: &[crate::autodiff::Var],
    loss: &L,
    phi: &[crate::autodiff::Var],
    batch: &Batch,
    alpha: f64,
    task: TaskLoss,
) -> Result<InnerStep> {
    let x = tape.leaf(batch.x.clone());
    let y = tape.leaf(batch.y.clone());
    let out = model.forward(tape, theta, x)?;
    let pred = task.prediction_channels(tape, out)?;
    let base_loss = loss.forward(tape, phi, y, pred)?;
    let grads = tape.backward(base_loss, theta, true)?;
    let mut theta_next = Vec::with_capacity(theta.len());
    for (&t, &g) in theta.iter().zip(&grads) {
        let step = tape.scale(g, alpha)?;
        theta_next.push(tape.sub(t, step)?);
    }
    Ok(InnerStep {
        theta_next,
        grads,
        base_loss,
    })
}

#[derive(Clone, Debug)]
pub struct MetaGradient {
    /// Gradient of the task loss after the unroll with respect to `phi`.
    pub phi_grads: Vec<Tensor>,
    /// `grad_theta M` at the starting parameters.
    pub theta_grads: Vec<Tensor>,
    /// Parameters after the recorded plain-SGD inner steps.
    pub theta_next: Vec<Tensor>,
    pub base_loss: f64,
    pub task_loss: f64,
}

/// Meta-gradient through `s_inner` recorded inner steps starting from `theta`.
///
/// Inner step `j` uses `train_batches[j % len]`. Nothing passed in is modified.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient<L: LearnedLoss + ?Sized>(
    loss: &L,
    model: &BaseModel,
    theta: &[Tensor],
    train_batches: &[Batch],
    meta_batch: &Batch,
    alpha: f64,
    s_inner: usize,
    task: TaskLoss,
) -> Result<MetaGradient> {
    if s_inner == 0 || train_batches.is_empty() {
        return Err(Error::Config(
            "meta_gradient needs s_inner >= 1 and at least one batch".into(),
        ));
    }
    let mut tape = Tape::new();
    let phi = tape.leaves(loss.params());
    let mut cur = tape.leaves(theta);
    let mut first: Option<(Vec<Tensor>, f64)> = None;
    for j in 0..s_inner {
        let batch = &train_batches[j % train_batches.len()];
        let step = inner_step(&mut tape, model, &cur, loss, &phi, batch, alpha, task)?;
        if first.is_none() {
            first = Some((tape.values(&step.grads), tape.value(step.base_loss).item()));
        }
        cur = step.theta_next;
    }
    let x = tape.leaf(meta_batch.x.clone());
    let y = tape.leaf(meta_batch.y.clone());
    let out = model.forward(&mut tape, &cur, x)?;
    let task_loss = task.forward(&mut tape, y, out)?;
    let phi_grads = tape.grad(task_loss, &phi)?;
    let (theta_grads, base_loss) = first.expect("at least one inner step");
    Ok(MetaGradient {
        phi_grads,
        theta_grads,
        theta_next: tape.values(&cur),
        base_loss,
        task_loss: tape.value(task_loss).item(),
    })
}

/// Task loss after `s_inner` plain-SGD steps under the learned loss with
/// parameters `phi`, using only first-order gradients.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_task_loss<L: LearnedLoss + ?Sized>(
    loss: &L,
    phi: &[Tensor],
    model: &BaseModel,
    theta: &[Tensor],
    train_batches: &[Batch],
    meta_batch: &Batch,
    alpha: f64,
    s_inner: usize,
    task: TaskLoss,
) -> Result<f64> {
    let mut cur = theta.to_vec();
    for j in 0..s_inner {
        let batch = &train_batches[j % train_batches.len()];
        let mut tape = Tape::new();
        let phi_v = tape.leaves(phi);
        let th = tape.leaves(&cur);
        let x = tape.leaf(batch.x.clone());
        let y = tape.leaf(batch.y.clone());
        let out = model.forward(&mut tape, &th, x)?;
        let pred = task.prediction_channels(&mut tape, out)?;
        let m = loss.forward(&mut tape, &phi_v, y, pred)?;
        let grads = tape.grad(m, &th)?;
        cur = cur
            .iter()
            .zip(&grads)
            .map(|(t, g)| t.zip_map(g, "unrolled_task_loss", |t, g| t - alpha * g))
            .collect::<Result<_>>()?;
    }
    task.value(&meta_batch.y, &model.predict_with(&cur, &meta_batch.x)?)
}

/// Central-difference meta-gradient over every loss-network parameter.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient_fd<L: LearnedLoss + ?Sized>(
    loss: &L,
    model: &BaseModel,
    theta: &[Tensor],
    train_batches: &[Batch],
    meta_batch: &Batch,
    alpha: f64,
    s_inner: usize,
    task: TaskLoss,
    h: f64,
) -> Result<Vec<Tensor>> {
    let like = loss.params().to_vec();
    let flat = finite_diff_grad(
        |p| {
            let phi = unflatten(p, &like)?;
            unrolled_task_loss(
                loss,
                &phi,
                model,
                theta,
                train_batches,
                meta_batch,
                alpha,
                s_inner,
                task,
            )
        },
        &flatten(&like),
        h,
    )?;
    unflatten(&flat, &like)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradCheck {
    pub seed: u64,
    pub s_inner: usize,
    pub n_phi: usize,
    pub n_theta: usize,
    pub cosine: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

pub const TINY_WIDTH: usize = 8;
pub const TINY_ALPHA: f64 = 0.5;
pub const TINY_FD_STEP: f64 = 1e-4;

/// Compares the double-backprop meta-gradient against finite differences on a
/// tiny seeded instance: logistic regression on 2 features / 2 classes and a
/// width-8 loss network.
pub fn tiny_meta_gradient_check(seed: u64, s_inner: usize) -> Result<MetaGradCheck> {
    let ds = crate::data::synth_classification(64, 2, 2, 2.0, seed)?;
    let model = BaseModel::init(
        Arch::Logistic {
            in_dim: 2,
            n_classes: 2,
        },
        derive_seed(seed, 11),
    )?;
    let net = LossNetwork::init(derive_seed(seed, 12), TINY_WIDTH, LossNetMode::Adalfl)?;
    let mut stream = BatchStream::new(ds.len(), 8, derive_seed(seed, 13))?;
    let train: Vec<Batch> = (0..s_inner).map(|_| stream.next_batch(&ds)).collect();
    let meta = stream.next_batch(&ds);
    let task = TaskLoss::CrossEntropy;
    let analytic = meta_gradient(&net, &model, &model.params, &train, &meta, TINY_ALPHA, s_inner, task)?;
    let oracle = meta_gradient_fd(
        &net,
        &model,
        &model.params,
        &train,
        &meta,
        TINY_ALPHA,
        s_inner,
        task,
        TINY_FD_STEP,
    )?;
    let a = flatten(&analytic.phi_grads);
    let b = flatten(&oracle);
    Ok(MetaGradCheck {
        seed,
        s_inner,
        n_phi: net.param_count(),
        n_theta: model.param_count(),
        cosine: cosine_similarity(a.data(), b.data()),
        max_rel_err: max_relative_error(a.data(), b.data()),
        max_abs_err: max_abs_error(a.data(), b.data()),
    })
}

fn diverged(phase: &'static str, step: usize, err: Error) -> Error {
    match err {
        e @ Error::Divergence { .. } => e,
        other => Error::Divergence {
            phase,
            step,
            detail: other.to_string(),
        },
    }
}

fn check_loss(phase: &'static str, step: usize, value: f64, threshold: f64) -> Result<()> {
    if !value.is_finite() || value > threshold {
        return Err(Error::Divergence {
            phase,
            step,
            detail: format!("loss {value} exceeds threshold {threshold}"),
        });
    }
    Ok(())
}

fn meta_source(splits: &Splits, source: MetaBatchSource) -> Result<&Dataset> {
    let ds = match source {
        MetaBatchSource::TrainSplit => &splits.train,
        MetaBatchSource::ValidSplit => &splits.valid,
    };
    if ds.is_empty() {
        return Err(Error::Config(format!("meta batch source {source:?} is empty")));
    }
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct OfflineOutcome {
    pub net: LossNetwork,
    /// Task loss observed at each outer iteration.
    pub task_losses: Vec<f64>,
}

/// Offline initialization of the loss network.
///
/// Every outer iteration draws fresh base parameters for the template's
/// architecture, takes `s_inner` recorded steps on training batches, and
/// applies one Adam step (rate `eta_offline`) along the meta-gradient of the
/// task loss on a meta batch.
pub fn offline_init(
    net: &LossNetwork,
    model_template: &BaseModel,
    splits: &Splits,
    cfg: &MetaConfig,
    batch_size: usize,
    seed: u64,
) -> Result<OfflineOutcome> {
    cfg.validate()?;
    let mut net = net.clone();
    let mut task_losses = Vec::with_capacity(cfg.s_init);
    if cfg.s_init == 0 {
        return Ok(OfflineOutcome { net, task_losses });
    }
    let meta_ds = meta_source(splits, cfg.meta_source)?;
    let mut train_stream = BatchStream::new(splits.train.len(), batch_size, derive_seed(seed, STREAM_OFFLINE_TRAIN))?;
    let mut meta_stream = BatchStream::new(meta_ds.len(), batch_size, derive_seed(seed, STREAM_OFFLINE_META))?;
    let mut reset_rng =
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(seed, STREAM_OFFLINE_RESET));
    let adam_cfg = AdamConfig {
        eta: cfg.eta_offline,
        ..cfg.adam
    };
    let mut adam = AdamState::default();
    for i in 0..cfg.s_init {
        let theta0 = model_template.reinit(&mut reset_rng)?;
        let batches: Vec<Batch> = (0..cfg.s_inner)
            .map(|_| train_stream.next_batch(&splits.train))
            .collect();
        let meta = meta_stream.next_batch(meta_ds);
        let mg = meta_gradient(
            &net,
            model_template,
            &theta0,
            &batches,
            &meta,
            cfg.inner.alpha,
            cfg.s_inner,
            cfg.task,
        )
        .map_err(|e| diverged("offline", i, e))?;
        check_loss("offline", i, mg.task_loss, cfg.divergence_threshold)?;
        let mut phi = net.params().to_vec();
        adam_step(&mut phi, &mg.phi_grads, &adam_cfg, &mut adam).map_err(|e| diverged("offline", i, e))?;
        net.set_params(phi).map_err(|e| diverged("offline", i, e))?;
        task_losses.push(mg.task_loss);
    }
    Ok(OfflineOutcome { net, task_losses })
}

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub run_id: String,
    pub seed: u64,
    pub batch_size: usize,
    pub log_interval: usize,
    pub snapshot_interval: usize,
    /// Cap on rows used when evaluating the training split.
    pub train_eval_limit: Option<usize>,
    /// Keep a copy of the base parameters at every logged step.
    pub record_theta: bool,
    pub clock: ClockMode,
}

impl RunSettings {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        RunSettings {
            run_id: run_id.into(),
            seed,
            batch_size: 128,
            log_interval: 500,
            snapshot_interval: 500,
            train_eval_limit: None,
            record_theta: false,
            clock: ClockMode::Wall,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BaseModel,
    pub net: Option<LossNetwork>,
    pub metrics: Vec<MetricsRecord>,
    pub snapshots: Vec<SnapshotRow>,
    pub theta_log: Vec<(usize, Vec<Tensor>)>,
    pub theta_updates: usize,
    pub phi_updates: usize,
}

/// Fixed target values at which loss-surface slices are exported.
pub const SURFACE_Y_FIXED: [f64; 2] = [0.0, 1.0];
pub const SURFACE_POINTS: usize = 101;

/// 101 evenly spaced prediction values covering `[0, 1]`.
pub fn surface_grid() -> Vec<f64> {
    (0..SURFACE_POINTS)
        .map(|i| i as f64 / (SURFACE_POINTS - 1) as f64)
        .collect()
}

pub fn surface_rows(net: &LossNetwork, run_id: &str, seed: u64, step: usize) -> Result<Vec<SnapshotRow>> {
    let grid = surface_grid();
    let mut rows = Vec::with_capacity(grid.len() * SURFACE_Y_FIXED.len());
    for y in SURFACE_Y_FIXED {
        for (f, loss) in net.export_loss_surface(y, &grid)? {
            rows.push(SnapshotRow {
                run_id: run_id.to_string(),
                seed,
                step,
                y_fixed: y,
                f,
                loss,
            });
        }
    }
    Ok(rows)
}

/// Task loss and error rate of `model` on `ds`.
pub fn evaluate(model: &BaseModel, ds: &Dataset, task: TaskLoss) -> Result<(f64, f64)> {
    let out = model.predict(&ds.x)?;
    Ok((task.value(&ds.y, &out)?, error_rate(&ds.y, &out)?))
}

/// Trains `model` for `cfg.s_train` steps in the given mode.
///
/// `net` must be the offline-initialized loss network for the loss-network
/// modes; it is ignored for the baseline.
pub fn online_train(
    mode: TrainMode,
    net: Option<&LossNetwork>,
    model: &BaseModel,
    splits: &Splits,
    cfg: &MetaConfig,
    settings: &RunSettings,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if settings.log_interval == 0 || settings.snapshot_interval == 0 {
        return Err(Error::Config("log and snapshot intervals must be at least 1".into()));
    }
    let mut net = match (mode.uses_loss_net(), net) {
        (true, Some(n)) => Some(n.clone()),
        (true, None) => return Err(Error::Config(format!("mode {} needs a loss network", mode.label()))),
        (false, _) => None,
    };
    let mut model = model.clone();
    let seed = settings.seed;
    let mut train_stream = BatchStream::new(splits.train.len(), settings.batch_size, derive_seed(seed, STREAM_TRAIN))?;
    let meta_ds = if mode == TrainMode::OnlineAdalfl {
        Some(meta_source(splits, cfg.meta_source)?)
    } else {
        None
    };
    let mut meta_stream = match meta_ds {
        Some(ds) => Some(BatchStream::new(
            ds.len(),
            settings.batch_size,
            derive_seed(seed, STREAM_META),
        )?),
        None => None,
    };
    let train_eval = match settings.train_eval_limit {
        Some(n) => splits.train.head(n),
        None => splits.train.clone(),
    };
    let mut eval_sets: Vec<(Split, &Dataset)> = vec![(Split::Train, &train_eval)];
    if !splits.valid.is_empty() {
        eval_sets.push((Split::Valid, &splits.valid));
    }
    if let Some(test) = &splits.test {
        eval_sets.push((Split::Test, test));
    }

    let mut clock = RunClock::start(settings.clock);
    let mut sgd = SgdState::default();
    let mut adam = AdamState::default();
    let adam_cfg = AdamConfig {
        eta: cfg.eta_online,
        ..cfg.adam
    };
    let mut out = TrainOutcome {
        model: model.clone(),
        net: None,
        metrics: Vec::new(),
        snapshots: Vec::new(),
        theta_log: Vec::new(),
        theta_updates: 0,
        phi_updates: 0,
    };

    for step in 0..=cfg.s_train {
        if step % settings.snapshot_interval == 0 {
            if let Some(n) = &net {
                out.snapshots.extend(surface_rows(n, &settings.run_id, seed, step)?);
            }
        }
        if step % settings.log_interval == 0 || step == cfg.s_train {
            for &(split, ds) in &eval_sets {
                let (task_loss, err) = evaluate(&model, ds, cfg.task).map_err(|e| diverged("online", step, e))?;
                out.metrics.push(MetricsRecord {
                    run_id: settings.run_id.clone(),
                    mode: mode.label().to_string(),
                    seed,
                    step,
                    split,
                    task_loss,
                    error_rate: err,
                    wall_clock_s: clock.now(),
                });
            }
            if settings.record_theta {
                out.theta_log.push((step, model.params.clone()));
            }
        }
        if step == cfg.s_train {
            break;
        }

        let batch = train_stream.next_batch(&splits.train);
        let grads = match mode {
            TrainMode::BaselineCe => {
                let mut tape = Tape::new();
                let theta = tape.leaves(&model.params);
                let x = tape.leaf(batch.x);
                let y = tape.leaf(batch.y);
                let logits = model
                    .forward(&mut tape, &theta, x)
                    .map_err(|e| diverged("online", step, e))?;
                let l = cfg
                    .task
                    .forward(&mut tape, y, logits)
                    .map_err(|e| diverged("online", step, e))?;
                check_loss("online", step, tape.value(l).item(), cfg.divergence_threshold)?;
                tape.grad(l, &theta).map_err(|e| diverged("online", step, e))?
            }
            TrainMode::OfflineFixed => {
                let n = net.as_ref().expect("loss network present");
                let mut tape = Tape::new();
                let theta = tape.leaves(&model.params);
                let x = tape.leaf(batch.x);
                let y = tape.leaf(batch.y);
                let (m, _) = (|| {
                    let logits = model.forward(&mut tape, &theta, x)?;
                    let pred = cfg.task.prediction_channels(&mut tape, logits)?;
                    n.loss_forward(&mut tape, y, pred)
                })()
                .map_err(|e| diverged("online", step, e))?;
                check_loss("online", step, tape.value(m).item(), cfg.divergence_threshold)?;
                tape.grad(m, &theta).map_err(|e| diverged("online", step, e))?
            }
            TrainMode::OnlineAdalfl => {
                let n = net.as_mut().expect("loss network present");
                let meta = meta_stream
                    .as_mut()
                    .expect("meta stream present")
                    .next_batch(meta_ds.expect("meta split present"));
                let mg = meta_gradient(
                    &*n,
                    &model,
                    &model.params,
                    std::slice::from_ref(&batch),
                    &meta,
                    cfg.inner.alpha,
                    1,
                    cfg.task,
                )
                .map_err(|e| diverged("online", step, e))?;
                check_loss("online", step, mg.task_loss, cfg.divergence_threshold)?;
                let mut phi = n.params().to_vec();
                adam_step(&mut phi, &mg.phi_grads, &adam_cfg, &mut adam).map_err(|e| diverged("online", step, e))?;
                n.set_params(phi).map_err(|e| diverged("online", step, e))?;
                out.phi_updates += 1;
                mg.theta_grads
            }
        };
        sgd_step(&mut model.params, &grads, &cfg.inner, &mut sgd).map_err(|e| diverged("online", step, e))?;
        out.theta_updates += 1;
    }
    out.model = model;
    out.net = net;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Var;
    use crate::data::synth_classification;

    fn tiny_setup(seed: u64) -> (BaseModel, LossNetwork, Vec<Batch>, Batch) {
        let ds = synth_classification(32, 2, 2, 2.0, seed).unwrap();
        let model = BaseModel::init(
            Arch::Logistic {
                in_dim: 2,
                n_classes: 2,
            },
            seed,
        )
        .unwrap();
        let net = LossNetwork::init(seed + 1, 8, LossNetMode::Adalfl).unwrap();
        let mut s = BatchStream::new(32, 8, seed).unwrap();
        let train = vec![s.next_batch(&ds), s.next_batch(&ds)];
        let meta = s.next_batch(&ds);
        (model, net, train, meta)
    }

    fn constant_net(c: f64) -> LossNetwork {
        let mut net = LossNetwork::init(0, 4, LossNetMode::Adalfl).unwrap();
        let p = net
            .params()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == 5 {
                    Tensor::vector(vec![c])
                } else {
                    Tensor::zeros_like(t)
                }
            })
            .collect();
        net.set_params(p).unwrap();
        net
    }

    #[test]
    fn constant_loss_leaves_theta() {
        let (model, _, train, _) = tiny_setup(1);
        let net = constant_net(0.3);
        let mut tape = Tape::new();
        let theta = tape.leaves(&model.params);
        let phi = tape.leaves(net.params());
        let st = inner_step(
            &mut tape,
            &model,
            &theta,
            &net,
            &phi,
            &train[0],
            0.1,
            TaskLoss::CrossEntropy,
        )
        .unwrap();
        assert_eq!(tape.values(&st.theta_next), model.params);
    }

    #[test]
    fn zero_alpha_gives_zero_meta_gradient() {
        let (model, net, train, meta) = tiny_setup(2);
        let mg = meta_gradient(
            &net,
            &model,
            &model.params,
            &train,
            &meta,
            0.0,
            1,
            TaskLoss::CrossEntropy,
        )
        .unwrap();
        assert_eq!(mg.theta_next, model.params);
        assert!(mg.phi_grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    /// `l(y, p) = w * (p - y)^2` on a 1-channel scalar model `f = theta * x`.
    struct ScaledSquare;

    impl LearnedLoss for ScaledSquare {
        fn params(&self) -> &[Tensor] {
            unreachable!()
        }

        fn forward(&self, tape: &mut Tape, phi: &[Var], y: Var, pred: Var) -> Result<Var> {
            let d = tape.sub(pred, y)?;
            let sq = tape.mul(d, d)?;
            let w = tape.reshape(phi[0], &[1, 1])?;
            let l = tape.mul(sq, w)?;
            tape.mean(l)
        }
    }

    #[test]
    fn scalar_inner_step_by_hand() {
        // f = theta * x (single weight, zero bias), l = w (f - y)^2
        // d l / d theta = 2 w (theta x - y) x
        let model = BaseModel {
            arch: Arch::Logistic {
                in_dim: 1,
                n_classes: 1,
            },
            hidden_activation: crate::activations::ActivationConfig::relu(),
            params: vec![Tensor::matrix(1, 1, vec![0.8]).unwrap(), Tensor::vector(vec![0.0])],
        };
        let batch = Batch {
            x: Tensor::matrix(1, 1, vec![1.5]).unwrap(),
            y: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
        };
        let (w, alpha) = (0.7, 0.1);
        let mut tape = Tape::new();
        let theta = tape.leaves(&model.params);
        let phi = vec![tape.leaf(Tensor::vector(vec![w]))];
        let st = inner_step(
            &mut tape,
            &model,
            &theta,
            &ScaledSquare,
            &phi,
            &batch,
            alpha,
            TaskLoss::SquaredError,
        )
        .unwrap();
        let expected = 0.8 - alpha * 2.0 * w * (0.8 * 1.5 - 2.0) * 1.5;
        assert!((tape.value(st.theta_next[0]).item() - expected).abs() < 1e-15);
        // theta_next depends on w linearly: d theta_next / d w = -alpha * 2 (theta x - y) x
        let s = tape.sum(st.theta_next[0]).unwrap();
        let dw = tape.grad(s, &phi).unwrap();
        assert!((dw[0].item() - (-alpha * 2.0 * (0.8 * 1.5 - 2.0) * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn meta_gradient_is_pure() {
        let (model, net, train, meta) = tiny_setup(3);
        let (m0, n0) = (model.clone(), net.clone());
        let a = meta_gradient(
            &net,
            &model,
            &model.params,
            &train,
            &meta,
            0.3,
            2,
            TaskLoss::CrossEntropy,
        )
        .unwrap();
        let b = meta_gradient(
            &net,
            &model,
            &model.params,
            &train,
            &meta,
            0.3,
            2,
            TaskLoss::CrossEntropy,
        )
        .unwrap();
        assert_eq!(model, m0);
        assert_eq!(net, n0);
        assert_eq!(a.phi_grads, b.phi_grads);
    }

    #[test]
    fn meta_gradient_matches_oracle_on_one_seed() {
        let r = tiny_meta_gradient_check(0, 1).unwrap();
        assert!(r.cosine >= 0.9999, "{r:?}");
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }

    #[test]
    fn modes_parse() {
        for m in TrainMode::ALL {
            assert_eq!(m.label().parse::<TrainMode>().unwrap(), m);
        }
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
