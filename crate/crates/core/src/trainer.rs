//! Deterministic training loop for policy-evaluation experiments.

use rand::seq::SliceRandom;

use crate::envs::{Env, GridValues, LinearChainSpec, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernels::KernelSpec;
use crate::losses::{self, LossKind};
use crate::rng::{self, streams};
use crate::value_fn::{l2_norm, Activation, Architecture, ValueFunction};

/// Runs whose parameter norm exceeds this are stopped and marked diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// In-place bias-corrected Adam update of `theta`.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension {
                what: "adam state",
                expected: self.m.len(),
                got: grad.len().min(theta.len()),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::invalid(
                "gradient",
                format!("component {i} is {} at step {}", grad[i], self.step + 1),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(state: &AdamState, theta: &[f64], grad: &[f64], lr: f64) -> Result<(AdamState, Vec<f64>)> {
    let mut s = state.clone();
    let mut th = theta.to_vec();
    s.update(&mut th, grad, lr)?;
    Ok((s, th))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(Optimizer::Adam),
            "sgd" => Some(Optimizer::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gamma: f64,
    /// FVI copies the parameters into the target every this many epochs.
    pub target_sync: usize,
    pub kernel: KernelSpec,
    /// Epoch interval between metric records (the last epoch is always recorded).
    pub metric_every: usize,
    /// Epoch interval between parameter snapshots; 0 disables them.
    pub checkpoint_every: usize,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    /// Policy-evaluation defaults: 2000 epochs of Adam on batches of 150,
    /// Gaussian kernel with length scale 0.5 on normalized states.
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            loss,
            lr: 0.001,
            epochs: 2000,
            batch_size: 150,
            seed: 0,
            gamma: 0.98,
            target_sync: 1,
            kernel: KernelSpec::gaussian(0.5),
            metric_every: 1,
            checkpoint_every: 0,
            optimizer: Optimizer::Adam,
        }
    }

    pub fn validate(&self, n_data: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(
                "learning rate",
                format!("must be positive, got {}", self.lr),
            ));
        }
        if self.batch_size == 0 || self.batch_size > n_data {
            return Err(Error::invalid(
                "batch size",
                format!("must be in 1..={n_data}, got {}", self.batch_size),
            ));
        }
        if self.loss == LossKind::KlossU && self.batch_size < 2 {
            return Err(Error::invalid(
                "batch size",
                "the U-statistic needs batches of at least 2",
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(
                "discount",
                format!("must be in (0, 1], got {}", self.gamma),
            ));
        }
        if self.target_sync == 0 || self.metric_every == 0 {
            return Err(Error::invalid(
                "cadence",
                "target_sync and metric_every must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Ok => "OK",
            RunStatus::Diverged => "DIVERGED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch (full-data loss for epoch 0).
    pub loss: f64,
    /// MSE against the oracle on the evaluation set (grid cells or chain states).
    pub mse: f64,
    /// Mean squared TD error over the training transitions.
    pub bellman: f64,
    pub theta_norm: f64,
    pub status: RunStatus,
    /// MSE against the oracle at the training states, when available.
    pub mse_train: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricLog {
    pub records: Vec<MetricRecord>,
    pub status: RunStatus,
    pub final_params: Vec<f64>,
    pub checkpoints: Vec<(usize, Vec<f64>)>,
}

impl MetricLog {
    pub fn last(&self) -> &MetricRecord {
        self.records.last().expect("log has the initial record")
    }

    pub const CSV_HEADER: &'static str = "epoch,loss,mse,bellman,theta_norm,status,mse_train";

    /// CSV text with the header line; floats use Rust's shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{},{:e}\n",
                r.epoch,
                r.loss,
                r.mse,
                r.bellman,
                r.theta_norm,
                r.status.name(),
                r.mse_train
            ));
        }
        out
    }
}

/// Everything an evaluation run needs besides the config.
#[derive(Debug, Clone)]
pub struct EvaluationProblem {
    pub arch: Architecture,
    /// Starting parameters; seeded initialization when absent.
    pub init: Option<Vec<f64>>,
    pub data: Vec<Transition>,
    pub eval_states: Vec<Vec<f64>>,
    pub eval_values: Vec<f64>,
    /// Oracle values at the training states.
    pub train_values: Option<Vec<f64>>,
}

impl EvaluationProblem {
    /// Linear features of the chain; evaluation on its non-terminal states.
    pub fn for_chain(spec: &LinearChainSpec, data: &TransitionDataset) -> Result<Self> {
        let v = spec.true_values()?;
        let live: Vec<usize> = (0..spec.mdp.n_states()).filter(|&s| !spec.mdp.terminal()[s]).collect();
        let train_values = data.transitions.iter().map(|t| v[t.state[0] as usize]).collect();
        Ok(EvaluationProblem {
            arch: Architecture::linear(spec.feature_map()),
            init: None,
            data: data.transitions.clone(),
            eval_states: live.iter().map(|&s| vec![s as f64]).collect(),
            eval_values: live.iter().map(|&s| v[s]).collect(),
            train_values: Some(train_values),
        })
    }

    /// Continuous task: states normalized to `[0,1]^d`, an MLP with the given
    /// hidden widths, and the grid oracle on reachable non-terminal cells.
    pub fn for_env(env: &Env, data: &TransitionDataset, grid: &GridValues, hidden: &[usize]) -> Result<Self> {
        let (centers, values) = grid.eval_points();
        if centers.is_empty() {
            return Err(Error::invalid("grid", "no reachable non-terminal cells"));
        }
        let train_values = data.transitions.iter().map(|t| grid.lookup(&t.state)).collect();
        let normalized = data.map_states(|s| env.normalize(s));
        Ok(EvaluationProblem {
            arch: Architecture::mlp(env.state_dim(), hidden, Activation::Relu)?,
            init: None,
            data: normalized.transitions,
            eval_states: centers.iter().map(|c| env.normalize(c)).collect(),
            eval_values: values,
            train_values: Some(train_values),
        })
    }

    fn initial(&self, seed: u64) -> Result<ValueFunction> {
        match &self.init {
            Some(p) => ValueFunction::new(self.arch.clone(), p.clone()),
            None => Ok(ValueFunction::init(self.arch.clone(), seed)),
        }
    }
}

struct Evaluator<'a> {
    problem: &'a EvaluationProblem,
    train_states: Vec<Vec<f64>>,
    gamma: f64,
}

impl Evaluator<'_> {
    fn record(&self, epoch: usize, loss: f64, vf: &ValueFunction, status: RunStatus) -> Result<MetricRecord> {
        let exec = Execution::default();
        let p = self.problem;
        let finite = vf.params().iter().all(|x| x.is_finite());
        let (mse, bellman, mse_train) = if finite {
            let mse = losses::mse(vf, &p.eval_states, &p.eval_values, exec)?;
            let bellman = losses::empirical_bellman(vf, &p.data, self.gamma, exec);
            let mse_train = match &p.train_values {
                Some(v) => losses::mse(vf, &self.train_states, v, exec)?,
                None => f64::NAN,
            };
            (mse, bellman, mse_train)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        Ok(MetricRecord {
            epoch,
            loss,
            mse,
            bellman,
            theta_norm: l2_norm(vf.params()),
            status,
            mse_train,
        })
    }
}

fn diverged(params: &[f64]) -> bool {
    !params.iter().all(|x| x.is_finite()) || l2_norm(params) > DIVERGENCE_THRESHOLD
}

/// One minibatch estimate of the configured loss.
fn batch_loss(
    cfg: &TrainConfig,
    vf: &ValueFunction,
    target: &[f64],
    batch: &[Transition],
) -> Result<losses::LossEstimate> {
    match cfg.loss {
        LossKind::KlossV | LossKind::KlossU => {
            let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
            let kernel = cfg.kernel.resolve(&states, vf.arch().features())?;
            if cfg.loss == LossKind::KlossV {
                losses::kernel_loss_vstat(vf, batch, &kernel, cfg.gamma)
            } else {
                losses::kernel_loss_ustat(vf, batch, &kernel, cfg.gamma)
            }
        }
        LossKind::Rg => losses::rg_loss(vf, batch, cfg.gamma),
        LossKind::Fvi => losses::fvi_step_loss(vf, target, batch, cfg.gamma),
        LossKind::Td0 => unreachable!("td0 steps per sample"),
    }
}

/// Trains a value function on a fixed dataset and logs metrics per epoch.
///
/// Epoch 0 records the initial parameters. Each epoch draws a fresh seeded
/// permutation and takes `ceil(n / batch_size)` minibatch steps (the last
/// batch may be short); TD(0) takes one semi-gradient step per transition
/// instead. FVI copies the parameters to its target every `target_sync`
/// epochs. A run whose parameter norm passes [`DIVERGENCE_THRESHOLD`] or
/// becomes non-finite stops early with status DIVERGED.
pub fn run_evaluation_experiment(problem: &EvaluationProblem, cfg: &TrainConfig) -> Result<MetricLog> {
    cfg.validate(problem.data.len())?;
    let mut vf = problem.initial(cfg.seed)?;
    let evaluator = Evaluator {
        problem,
        train_states: problem.data.iter().map(|t| t.state.clone()).collect(),
        gamma: cfg.gamma,
    };
    let mut target = vf.params().to_vec();
    let mut adam = AdamState::new(vf.n_params());
    let mut order: Vec<usize> = (0..problem.data.len()).collect();
    let mut perm_rng = rng::stream(cfg.seed, streams::MINIBATCH);

    let initial_loss = if cfg.loss == LossKind::Td0 {
        losses::empirical_bellman(&vf, &problem.data, cfg.gamma, Execution::default())
    } else {
        let b = cfg.batch_size;
        let mut total = 0.0;
        let chunks: Vec<&[Transition]> = problem.data.chunks(b).collect();
        for c in &chunks {
            total += batch_loss(cfg, &vf, &target, c)?.loss;
        }
        total / chunks.len() as f64
    };
    let mut records = vec![evaluator.record(0, initial_loss, &vf, RunStatus::Ok)?];
    let mut checkpoints = Vec::new();
    let mut status = RunStatus::Ok;
    let mut params = vf.params().to_vec();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut perm_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Transition> = idx.iter().map(|&i| problem.data[i].clone()).collect();
            if cfg.loss == LossKind::Td0 {
                let mut sq = 0.0;
                for t in &batch {
                    let d = losses::td_errors(&vf, std::slice::from_ref(t), cfg.gamma, Execution::Sequential)[0];
                    sq += d * d;
                    params = losses::td0_update(&vf, t, cfg.gamma, cfg.lr)?;
                    if diverged(&params) {
                        status = RunStatus::Diverged;
                        break;
                    }
                    vf.set_params(&params)?;
                }
                loss_sum += sq / batch.len() as f64;
            } else {
                let est = batch_loss(cfg, &vf, &target, &batch)?;
                loss_sum += est.loss;
                if est.grad.iter().any(|g| !g.is_finite()) {
                    status = RunStatus::Diverged;
                } else {
                    match cfg.optimizer {
                        Optimizer::Adam => adam.update(&mut params, &est.grad, cfg.lr)?,
                        Optimizer::Sgd => {
                            for (p, g) in params.iter_mut().zip(&est.grad) {
                                *p -= cfg.lr * g;
                            }
                        }
                    }
                    if diverged(&params) {
                        status = RunStatus::Diverged;
                    } else {
                        vf.set_params(&params)?;
                    }
                }
            }
            n_batches += 1;
            if status == RunStatus::Diverged {
                let mut rec = evaluator.record(epoch, loss_sum / n_batches as f64, &vf, status)?;
                rec.theta_norm = l2_norm(&params);
                records.push(rec);
                break 'epochs;
            }
        }
        if cfg.loss == LossKind::Fvi && epoch % cfg.target_sync == 0 {
            target.copy_from_slice(vf.params());
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoints.push((epoch, vf.params().to_vec()));
        }
        if epoch % cfg.metric_every == 0 || epoch == cfg.epochs {
            records.push(evaluator.record(epoch, loss_sum / n_batches as f64, &vf, status)?);
        }
    }
    Ok(MetricLog {
        records,
        status,
        final_params: params,
        checkpoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMetric {
    FinalMse,
    FinalBellman,
    FinalLoss,
}

impl SelectionMetric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(SelectionMetric::FinalMse),
            "bellman" => Some(SelectionMetric::FinalBellman),
            "loss" => Some(SelectionMetric::FinalLoss),
            _ => None,
        }
    }

    /// Diverged runs score `+inf`.
    pub fn score(self, log: &MetricLog) -> f64 {
        if log.status == RunStatus::Diverged {
            return f64::INFINITY;
        }
        let r = log.last();
        let v = match self {
            SelectionMetric::FinalMse => r.mse,
            SelectionMetric::FinalBellman => r.bellman,
            SelectionMetric::FinalLoss => r.loss,
        };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: usize,
    /// Mean selection score per config.
    pub scores: Vec<f64>,
    /// `logs[c][k]` is trial `k` of config `c` (seed `config.seed + k`).
    pub logs: Vec<Vec<MetricLog>>,
}

impl GridSearchResult {
    pub fn best_log(&self) -> &MetricLog {
        &self.logs[self.best][0]
    }
}

/// Runs every config for `trials` seeds in parallel and picks the lowest mean
/// score; ties go to the lower learning rate, then to the earlier config.
pub fn grid_search(
    configs: &[TrainConfig],
    problem: &EvaluationProblem,
    trials: usize,
    metric: SelectionMetric,
) -> Result<GridSearchResult> {
    if configs.is_empty() || trials == 0 {
        return Err(Error::invalid("grid search", "needs at least one config and one trial"));
    }
    let jobs = configs.len() * trials;
    let runs = Execution::default().map(jobs, |j| {
        let mut cfg = configs[j / trials].clone();
        cfg.seed = cfg.seed.wrapping_add((j % trials) as u64);
        run_evaluation_experiment(problem, &cfg)
    });
    let mut logs: Vec<Vec<MetricLog>> = vec![Vec::with_capacity(trials); configs.len()];
    for (j, run) in runs.into_iter().enumerate() {
        logs[j / trials].push(run?);
    }
    let scores: Vec<f64> = logs
        .iter()
        .map(|ls| ls.iter().map(|l| metric.score(l)).sum::<f64>() / trials as f64)
        .collect();
    let mut best = 0;
    for c in 1..configs.len() {
        let better = scores[c] < scores[best] || (scores[c] == scores[best] && configs[c].lr < configs[best].lr);
        if better {
            best = c;
        }
    }
    Ok(GridSearchResult { best, scores, logs })
}

/// Full-batch SGD settings used for the linear chain experiments.
pub fn chain_config(loss: LossKind, n_data: usize) -> TrainConfig {
    TrainConfig {
        lr: 0.5,
        epochs: 2000,
        batch_size: n_data,
        gamma: 1.0,
        kernel: KernelSpec::linear(),
        optimizer: Optimizer::Sgd,
        ..TrainConfig::new(loss)
    }
}
