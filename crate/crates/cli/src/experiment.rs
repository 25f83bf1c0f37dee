//! Builds datasets, evaluation problems and trainer settings from a config.

use std::path::PathBuf;

use kbl_core::envs::{
    collect_dataset, discretized_true_values, grid::default_resolution, Env, EnvKind, SamplingMode, TransitionDataset,
};
use kbl_core::io;
use kbl_core::kernels::{Bandwidth, KernelKind, KernelSpec};
use kbl_core::losses::LossKind;
use kbl_core::policy_opt::{PclKernel, PolicyOptConfig, ValueLoss};
use kbl_core::trainer::{chain_config, EvaluationProblem, Optimizer, SelectionMetric, TrainConfig};

use crate::config::Config;

/// Where the transitions come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    File(PathBuf),
    Collect { n: usize, mode: SamplingMode },
}

#[derive(Debug, Clone)]
pub struct EnvSettings {
    pub env: Env,
    pub data: DataSource,
    pub seed: u64,
}

pub fn env_settings(c: &Config, seed: u64) -> Option<EnvSettings> {
    let kind = c.choice("env.id", "", &EnvKind::NAMES, EnvKind::parse);
    let noise = c.real_or("env.noise", 1.0);
    if noise < 0.0 {
        c.invalid("env.noise", "must be nonnegative");
    }
    let data = match c.opt_str("data.path") {
        Some(p) => DataSource::File(PathBuf::from(p)),
        None => {
            let n = c.usize_or("data.n", 2000);
            if n == 0 {
                c.invalid("data.n", "must be at least 1");
            }
            let mode = c
                .choice(
                    "data.mode",
                    "uniform-state",
                    &["uniform-state", "on-policy-rollout"],
                    SamplingMode::parse,
                )
                .unwrap_or(SamplingMode::UniformState);
            DataSource::Collect { n, mode }
        }
    };
    let env = Env::new(kind?).ok()?.with_noise(noise);
    Some(EnvSettings { env, data, seed })
}

impl EnvSettings {
    pub fn dataset(&self) -> kbl_core::Result<TransitionDataset> {
        match &self.data {
            DataSource::File(p) => {
                let ds = io::read_dataset(p)?;
                if ds.env != self.env.kind() {
                    return Err(kbl_core::Error::Invalid {
                        what: "dataset",
                        reason: format!(
                            "{} holds {} data, config names {}",
                            p.display(),
                            ds.env.name(),
                            self.env.kind().name()
                        ),
                    });
                }
                Ok(ds)
            }
            DataSource::Collect { n, mode } => collect_dataset(&self.env, *n, *mode, self.seed),
        }
    }
}

/// Oracle grid settings for continuous tasks.
#[derive(Debug, Clone)]
pub struct GridSettings {
    pub resolution: Vec<usize>,
    pub samples_per_cell: usize,
}

pub fn grid_settings(c: &Config, env: Option<&Env>) -> GridSettings {
    let default = env
        .filter(|e| !e.kind().is_chain())
        .map(default_resolution)
        .unwrap_or_default();
    let resolution = c.sizes_or("grid.resolution", &default);
    let samples_per_cell = c.usize_or("grid.samples_per_cell", 200);
    if samples_per_cell == 0 {
        c.invalid("grid.samples_per_cell", "must be at least 1");
    }
    GridSettings {
        resolution,
        samples_per_cell,
    }
}

/// Reads the `train.*` and `kernel.*` keys. Chains default to full-batch SGD
/// with the linear kernel and the chain's own discount.
pub fn train_config(c: &Config, env: Option<&Env>, n_data: usize, seed: u64) -> Option<TrainConfig> {
    let loss = c.choice("train.loss", "kloss-v", &LossKind::NAMES, LossKind::parse);
    let chain = env.and_then(|e| e.chain());
    let base = match (loss, chain) {
        (Some(l), Some(spec)) => TrainConfig {
            gamma: spec.mdp.discount(),
            ..chain_config(l, n_data)
        },
        (Some(l), None) => TrainConfig::new(l),
        (None, _) => TrainConfig::new(LossKind::KlossV),
    };
    let optimizer = c.choice(
        "train.optimizer",
        base.optimizer.name(),
        &["adam", "sgd"],
        Optimizer::parse,
    );
    let default_kind = base.kernel.kind.name();
    let kind = c.choice("kernel.kind", default_kind, &KernelKind::NAMES, KernelKind::parse);
    let bandwidth = match c.str_or("kernel.bandwidth", "fixed").as_str() {
        "fixed" => {
            let h = c.real_or("kernel.h", 0.5);
            if !(h > 0.0) {
                c.invalid("kernel.h", "must be positive");
            }
            Bandwidth::Fixed(h)
        }
        "median" => {
            let a = c.real_or("kernel.alpha", 1.0);
            if !(a > 0.0) {
                c.invalid("kernel.alpha", "must be positive");
            }
            Bandwidth::Median { alpha: a }
        }
        other => {
            c.invalid("kernel.bandwidth", format!("{other:?} is not one of: fixed, median"));
            Bandwidth::Fixed(0.5)
        }
    };
    let cfg = TrainConfig {
        loss: loss?,
        lr: c.real_or("train.lr", base.lr),
        epochs: c.usize_or("train.epochs", base.epochs),
        batch_size: c.usize_or("train.batch_size", base.batch_size),
        seed,
        gamma: c.real_or("train.gamma", base.gamma),
        target_sync: c.usize_or("train.target_sync", base.target_sync),
        kernel: KernelSpec { kind: kind?, bandwidth },
        metric_every: c.usize_or("train.metric_every", base.metric_every),
        checkpoint_every: c.usize_or("train.checkpoint_every", base.checkpoint_every),
        optimizer: optimizer?,
    };
    if !(cfg.lr > 0.0) {
        c.invalid("train.lr", "must be positive");
    }
    if cfg.batch_size == 0 {
        c.invalid("train.batch_size", "must be at least 1");
    }
    if cfg.metric_every == 0 {
        c.invalid("train.metric_every", "must be at least 1");
    }
    if !(cfg.gamma >= 0.0 && cfg.gamma <= 1.0) {
        c.invalid("train.gamma", "must lie in [0, 1]");
    }
    Some(cfg)
}

/// Learning-rate sweep from `search.*`; absent means a single run.
pub struct SearchSettings {
    pub lrs: Vec<f64>,
    pub trials: usize,
    pub metric: SelectionMetric,
}

pub fn search_settings(c: &Config) -> Option<SearchSettings> {
    let lrs = c.reals_or("search.lrs", &[]);
    let trials = c.usize_or("search.trials", 1);
    let metric = c.choice(
        "search.metric",
        "mse",
        &["mse", "bellman", "loss"],
        SelectionMetric::parse,
    );
    if lrs.iter().any(|x| !(*x > 0.0)) {
        c.invalid("search.lrs", "learning rates must be positive");
    }
    if trials == 0 {
        c.invalid("search.trials", "must be at least 1");
    }
    if lrs.is_empty() {
        return None;
    }
    Some(SearchSettings {
        lrs,
        trials,
        metric: metric.unwrap_or(SelectionMetric::FinalMse),
    })
}

/// Evaluation problem for the dataset: chain features and exact values for
/// chains, the grid oracle and an MLP for continuous tasks.
pub fn evaluation_problem(
    env: &Env,
    ds: &TransitionDataset,
    grid: &GridSettings,
    hidden: &[usize],
    gamma: f64,
) -> kbl_core::Result<EvaluationProblem> {
    match env.chain() {
        Some(spec) => {
            let mut p = EvaluationProblem::for_chain(spec, ds)?;
            if env.kind() == EnvKind::BairdStar {
                p.init = Some(kbl_core::envs::chain::baird_initial_weights());
            }
            Ok(p)
        }
        None => {
            let oracle = discretized_true_values(env, &grid.resolution, gamma, grid.samples_per_cell, ds.seed)?;
            EvaluationProblem::for_env(env, ds, &oracle, hidden)
        }
    }
}

/// Reads the `policy.*` keys over the defaults.
pub fn policy_config(c: &Config, seed: u64) -> Option<PolicyOptConfig> {
    let d = PolicyOptConfig::default();
    let value_loss = c.choice(
        "policy.value_loss",
        d.value_loss.name(),
        &ValueLoss::NAMES,
        ValueLoss::parse,
    );
    let kernel = match c.str_or("policy.kernel", "state-action-median").as_str() {
        "state-action-median" => {
            let default = match d.kernel {
                PclKernel::StateActionMedian { alpha } => alpha,
                PclKernel::StateOnly { .. } => 1.0,
            };
            PclKernel::StateActionMedian {
                alpha: c.real_or("policy.kernel_alpha", default),
            }
        }
        "state-only" => PclKernel::StateOnly {
            scale: c.real_or("policy.kernel_scale", 1.0),
        },
        other => {
            c.invalid(
                "policy.kernel",
                format!("{other:?} is not one of: state-action-median, state-only"),
            );
            d.kernel
        }
    };
    let mut env = d.env;
    env.episode_len = c.usize_or("policy.episode_len", env.episode_len);
    env.start_spread = c.real_or("policy.start_spread", env.start_spread);
    env.noise = c.real_or("policy.noise", env.noise);
    env.reward_scale = c.real_or("policy.reward_scale", env.reward_scale);
    env.reward_offset = c.real_or("policy.reward_offset", env.reward_offset);
    let cfg = PolicyOptConfig {
        iterations: c.usize_or("policy.iterations", d.iterations),
        steps_per_iter: c.usize_or("policy.steps_per_iter", d.steps_per_iter),
        batch_size: c.usize_or("policy.batch_size", d.batch_size),
        rollout: c.usize_or("policy.rollout", d.rollout),
        gamma: c.real_or("policy.gamma", d.gamma),
        lambda0: c.real_or("policy.lambda", d.lambda0),
        lambda_period: c.usize_or("policy.lambda_period", d.lambda_period),
        tau: c.real_or("policy.tau", d.tau),
        alpha: c.real_or("policy.alpha", d.alpha),
        target_tau: c.real_or("policy.target_tau", d.target_tau),
        value_lr: c.real_or("policy.value_lr", d.value_lr),
        policy_lr: c.real_or("policy.policy_lr", d.policy_lr),
        value_loss: value_loss?,
        kernel,
        hidden: c.sizes_or("policy.hidden", &d.hidden),
        init_log_std: c.real_or("policy.init_log_std", d.init_log_std),
        replay_capacity: c.usize_or("policy.replay_capacity", d.replay_capacity),
        eval_every: c.usize_or("policy.eval_every", d.eval_every),
        eval_episodes: c.usize_or("policy.eval_episodes", d.eval_episodes),
        env,
        seed,
    };
    if let Err(e) = cfg.validate() {
        c.invalid("policy", e);
    }
    Some(cfg)
}
