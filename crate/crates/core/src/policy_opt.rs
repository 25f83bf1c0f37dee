//! Kernel-loss path-consistency learning on a native pendulum swing-up toy.
//!
//! Each iteration collects `T` environment steps with the current stochastic
//! policy, appends them to a replay buffer, samples `B` windows of `d`
//! consecutive steps and takes one Adam step on the value network and one on
//! the policy. The window residual is
//!
//! ```text
//! R = -V(s_0) + gamma^d V(s_d)
//!     + sum_t gamma^t (r_t - (lambda + tau) log pi(a_t|s_t) + tau log pi_lag(a_t|s_t))
//! ```
//!
//! The value gradient flows through the `V` terms only and the policy
//! gradient is `-(1/B) sum_i R_i sum_t grad log pi(a_t|s_t)`; both are
//! minimized. The lagged policy follows `phi_lag <- alpha phi_lag + (1 - alpha) phi`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::envs::control::pendulum;
use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::kernels::{median_bandwidth, Kernel};
use crate::rng::{self, streams, Rng};
use crate::trainer::{AdamState, RunStatus, DIVERGENCE_THRESHOLD};
use crate::value_fn::{l2_norm, Activation, Architecture, Mlp, ValueFunction};

/// Lower bound on the per-dimension Gaussian log density.
pub const LOG_PROB_FLOOR: f64 = -20.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian policy with a tanh MLP mean and a state-independent
/// log standard deviation. Parameters are the mean network's followed by
/// one log-std per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    mean: Mlp,
    params: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, seed: u64) -> Result<Self> {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(act_dim);
        let mean = Mlp::new(widths, Activation::Tanh)?;
        let mut r = rng::stream(seed, streams::INIT + 100);
        let mut params = mean.init(&mut r);
        params.extend(std::iter::repeat_n(init_log_std, act_dim));
        Ok(GaussianPolicy { mean, params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn act_dim(&self) -> usize {
        self.mean.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("policy parameters", self.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: "policy parameters",
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn split(params: &[f64], n_mean: usize) -> (&[f64], &[f64]) {
        params.split_at(n_mean)
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.mean.n_params()..]
    }

    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        let (m, _) = Self::split(&self.params, self.mean.n_params());
        self.mean.output(m, obs)
    }

    pub fn sample(&self, obs: &[f64], rng: &mut Rng) -> Vec<f64> {
        self.mean_action(obs)
            .iter()
            .zip(self.log_std())
            .map(|(mu, ls)| mu + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `log pi(a|s)` under arbitrary parameters of the same architecture,
    /// each dimension floored at [`LOG_PROB_FLOOR`].
    pub fn log_prob_with(&self, params: &[f64], obs: &[f64], action: &[f64]) -> f64 {
        let (m, ls) = Self::split(params, self.mean.n_params());
        let mu = self.mean.output(m, obs);
        (0..mu.len())
            .map(|k| {
                let z = (action[k] - mu[k]) / ls[k].exp();
                (-0.5 * z * z - ls[k] - HALF_LOG_2PI).max(LOG_PROB_FLOOR)
            })
            .sum()
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        self.log_prob_with(&self.params, obs, action)
    }

    /// Adds `scale * grad_phi log pi(a|s)` into `out`. Floored dimensions
    /// contribute nothing.
    pub fn accumulate_log_prob_grad(&self, obs: &[f64], action: &[f64], scale: f64, out: &mut [f64]) {
        let n_mean = self.mean.n_params();
        let (m, ls) = Self::split(&self.params, n_mean);
        let trace = self.mean.forward(m, obs);
        let mu = trace.output().to_vec();
        let mut d_mu = vec![0.0; mu.len()];
        for k in 0..mu.len() {
            let sigma = ls[k].exp();
            let z = (action[k] - mu[k]) / sigma;
            if -0.5 * z * z - ls[k] - HALF_LOG_2PI < LOG_PROB_FLOOR {
                continue;
            }
            d_mu[k] = z / sigma;
            out[n_mean + k] += scale * (z * z - 1.0);
        }
        self.mean.backward_into(m, &trace, &d_mu, scale, &mut out[..n_mean]);
    }
}

/// One contiguous run of environment steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    /// `steps + 1` observations.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// A `d`-step segment `s_{0..d}`, `a_{0..d-1}`, `r_{0..d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Window {
    pub fn d(&self) -> usize {
        self.rewards.len()
    }

    /// Kernel input `[s_0, a_0]`.
    pub fn state_action(&self) -> Vec<f64> {
        let mut x = self.states[0].clone();
        x.extend_from_slice(&self.actions[0]);
        x
    }
}

/// Ring of episodes holding at most `capacity` steps; the oldest episodes
/// are evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
    steps: usize,
    inserted: u64,
    open: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            episodes: VecDeque::new(),
            steps: 0,
            inserted: 0,
            open: false,
        }
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends a step; `new_episode` starts a fresh episode at `state`.
    pub fn push(&mut self, state: &[f64], action: Vec<f64>, reward: f64, next_state: Vec<f64>, new_episode: bool) {
        if new_episode || !self.open {
            self.episodes.push_back(Episode {
                states: vec![state.to_vec()],
                ..Episode::default()
            });
            self.open = true;
        }
        let ep = self.episodes.back_mut().unwrap();
        ep.actions.push(action);
        ep.rewards.push(reward);
        ep.states.push(next_state);
        self.steps += 1;
        self.inserted += 1;
        while self.steps > self.capacity {
            let single = self.episodes.len() == 1;
            let front = self.episodes.front_mut().unwrap();
            if single || front.len() > self.steps - self.capacity {
                // Trim the oldest steps of the front episode.
                let k = self.steps - self.capacity;
                front.states.drain(..k);
                front.actions.drain(..k);
                front.rewards.drain(..k);
                self.steps -= k;
            } else {
                self.steps -= front.len();
                self.episodes.pop_front();
            }
        }
    }

    /// Marks the current episode as finished.
    pub fn end_episode(&mut self) {
        self.open = false;
    }

    pub fn n_windows(&self, d: usize) -> usize {
        self.episodes.iter().map(|e| (e.len() + 1).saturating_sub(d)).sum()
    }

    /// `count` windows drawn uniformly with replacement among all valid starts.
    pub fn sample(&self, d: usize, count: usize, rng: &mut Rng) -> Result<Vec<Window>> {
        let total = self.n_windows(d);
        if total == 0 || d == 0 {
            return Err(Error::invalid(
                "replay buffer",
                format!("no {d}-step windows available"),
            ));
        }
        Ok((0..count)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                for e in &self.episodes {
                    let n = (e.len() + 1).saturating_sub(d);
                    if k < n {
                        return Window {
                            states: e.states[k..=k + d].to_vec(),
                            actions: e.actions[k..k + d].to_vec(),
                            rewards: e.rewards[k..k + d].to_vec(),
                        };
                    }
                    k -= n;
                }
                unreachable!("window index within total")
            })
            .collect())
    }
}

/// Path residual of one window.
pub fn path_residual(
    value: &ValueFunction,
    policy: &GaussianPolicy,
    lagged: &[f64],
    window: &Window,
    gamma: f64,
    lambda: f64,
    tau: f64,
) -> f64 {
    residual_with_bootstrap(value, value.params(), policy, lagged, window, gamma, lambda, tau)
}

/// Residual whose bootstrap value `V(s_d)` uses `bootstrap_params`.
#[allow(clippy::too_many_arguments)]
fn residual_with_bootstrap(
    value: &ValueFunction,
    bootstrap_params: &[f64],
    policy: &GaussianPolicy,
    lagged: &[f64],
    window: &Window,
    gamma: f64,
    lambda: f64,
    tau: f64,
) -> f64 {
    let d = window.d();
    let mut path = 0.0;
    let mut disc = 1.0;
    for t in 0..d {
        let (s, a) = (&window.states[t], &window.actions[t]);
        let mut term = window.rewards[t];
        if lambda + tau != 0.0 {
            term -= (lambda + tau) * policy.log_prob(s, a);
        }
        if tau != 0.0 {
            term += tau * policy.log_prob_with(lagged, s, a);
        }
        path += disc * term;
        disc *= gamma;
    }
    let tail = crate::value_fn::value_at(value.arch(), bootstrap_params, &window.states[d]);
    -value.value(&window.states[0]) + disc * tail + path
}

/// Value-update rule; the policy update is shared by all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueLoss {
    /// V-statistic of the state-action kernel loss over the batch.
    Kloss,
    /// Mean squared residual, gradient through both `V` terms.
    Rg,
    /// Regression of `V(s_0)` onto targets bootstrapped from an EMA copy.
    Fvi,
    /// Regression onto targets bootstrapped from the current network.
    Td0,
}

impl ValueLoss {
    pub const NAMES: [&'static str; 4] = ["kloss", "rg", "fvi", "td0"];

    pub fn name(self) -> &'static str {
        match self {
            ValueLoss::Kloss => "kloss",
            ValueLoss::Rg => "rg",
            ValueLoss::Fvi => "fvi",
            ValueLoss::Td0 => "td0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kloss" | "kloss-v" => Some(ValueLoss::Kloss),
            "rg" => Some(ValueLoss::Rg),
            "fvi" => Some(ValueLoss::Fvi),
            "td0" => Some(ValueLoss::Td0),
            _ => None,
        }
    }
}

/// Per-batch kernel choice for the value update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PclKernel {
    /// Gaussian on `[s_0, a_0]` with median bandwidth `(alpha med)^2`.
    StateActionMedian { alpha: f64 },
    /// Gaussian on `s_0` only with a fixed squared scale.
    StateOnly { scale: f64 },
}

impl PclKernel {
    fn resolve(&self, windows: &[Window]) -> Result<(Kernel, Vec<Vec<f64>>)> {
        match *self {
            PclKernel::StateActionMedian { alpha } => {
                let pts: Vec<Vec<f64>> = windows.iter().map(Window::state_action).collect();
                Ok((Kernel::gaussian(median_bandwidth(&pts, alpha)?)?, pts))
            }
            PclKernel::StateOnly { scale } => Ok((
                Kernel::gaussian(scale)?,
                windows.iter().map(|w| w.states[0].clone()).collect(),
            )),
        }
    }
}

/// Coefficients of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PclCoefficients {
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
}

/// Everything computed during one update, for logging and checks.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    pub residuals: Vec<f64>,
    pub value_loss: f64,
    pub value_grad: Vec<f64>,
    pub policy_grad: Vec<f64>,
}

/// `-(1/B) sum_i R_i sum_t grad log pi(a_t|s_t)`; shared by every value loss.
pub fn policy_gradient(policy: &GaussianPolicy, windows: &[Window], residuals: &[f64]) -> Vec<f64> {
    let b = windows.len() as f64;
    let parts = Execution::default().map(windows.len(), |i| {
        let mut g = vec![0.0; policy.n_params()];
        for t in 0..windows[i].d() {
            policy.accumulate_log_prob_grad(&windows[i].states[t], &windows[i].actions[t], 1.0, &mut g);
        }
        g
    });
    let mut out = vec![0.0; policy.n_params()];
    for (g, r) in parts.iter().zip(residuals) {
        for (o, x) in out.iter_mut().zip(g) {
            *o -= r * x / b;
        }
    }
    out
}

/// Value gradient and loss for the chosen rule.
#[allow(clippy::too_many_arguments)]
pub fn value_gradient(
    loss: ValueLoss,
    value: &ValueFunction,
    target_params: &[f64],
    policy: &GaussianPolicy,
    lagged: &[f64],
    windows: &[Window],
    residuals: &[f64],
    kernel: &PclKernel,
    coef: PclCoefficients,
) -> Result<(f64, Vec<f64>)> {
    let b = windows.len();
    let bf = b as f64;
    let exec = Execution::default();
    let discount_d: Vec<f64> = windows.iter().map(|w| coef.gamma.powi(w.d() as i32)).collect();
    // grad R_i = -grad V(s_0) + gamma^d grad V(s_d)
    let grads_r = |with_tail: bool| -> Vec<Vec<f64>> {
        exec.map(b, |i| {
            let head = value.value_and_grad(&windows[i].states[0]).grad;
            if !with_tail {
                return head.iter().map(|x| -x).collect();
            }
            let tail = value.value_and_grad(windows[i].states.last().unwrap()).grad;
            head.iter().zip(&tail).map(|(h, t)| discount_d[i] * t - h).collect()
        })
    };
    let accumulate = |grads: &[Vec<f64>], w: &[f64], scale: f64| {
        let mut out = vec![0.0; value.n_params()];
        for (g, &wi) in grads.iter().zip(w) {
            for (o, x) in out.iter_mut().zip(g) {
                *o += wi * x;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
        out
    };
    match loss {
        ValueLoss::Kloss => {
            let (k, pts) = kernel.resolve(windows)?;
            let gram = k.gram_matrix_with(&pts, exec)?;
            let kr: Vec<f64> = exec.map(b, |i| (0..b).map(|j| gram[(i, j)] * residuals[j]).sum());
            let loss = residuals.iter().zip(&kr).map(|(r, x)| r * x).sum::<f64>() / (bf * bf);
            Ok((loss, accumulate(&grads_r(true), &kr, 2.0 / (bf * bf))))
        }
        ValueLoss::Rg => {
            let loss = residuals.iter().map(|r| r * r).sum::<f64>() / bf;
            Ok((loss, accumulate(&grads_r(true), residuals, 2.0 / bf)))
        }
        ValueLoss::Td0 => {
            let loss = residuals.iter().map(|r| r * r).sum::<f64>() / bf;
            Ok((loss, accumulate(&grads_r(false), residuals, 2.0 / bf)))
        }
        ValueLoss::Fvi => {
            let target_res: Vec<f64> = exec.map(b, |i| {
                residual_with_bootstrap(
                    value,
                    target_params,
                    policy,
                    lagged,
                    &windows[i],
                    coef.gamma,
                    coef.lambda,
                    coef.tau,
                )
            });
            let loss = target_res.iter().map(|r| r * r).sum::<f64>() / bf;
            Ok((loss, accumulate(&grads_r(false), &target_res, 2.0 / bf)))
        }
    }
}

/// Residuals, value gradient and policy gradient for one batch of windows.
#[allow(clippy::too_many_arguments)]
pub fn pcl_gradients(
    loss: ValueLoss,
    value: &ValueFunction,
    target_params: &[f64],
    policy: &GaussianPolicy,
    lagged: &[f64],
    windows: &[Window],
    kernel: &PclKernel,
    coef: PclCoefficients,
) -> Result<UpdateDiagnostics> {
    if windows.len() < 2 {
        return Err(Error::invalid("batch", "needs at least 2 windows"));
    }
    let residuals = Execution::default().map(windows.len(), |i| {
        path_residual(value, policy, lagged, &windows[i], coef.gamma, coef.lambda, coef.tau)
    });
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite {
            context: "path residuals",
        });
    }
    let (value_loss, value_grad) = value_gradient(
        loss,
        value,
        target_params,
        policy,
        lagged,
        windows,
        &residuals,
        kernel,
        coef,
    )?;
    let policy_grad = policy_gradient(policy, windows, &residuals);
    Ok(UpdateDiagnostics {
        residuals,
        value_loss,
        value_grad,
        policy_grad,
    })
}

/// Mutable learner state: networks, lagged policy, EMA value target, optimizers.
#[derive(Debug, Clone)]
pub struct PclState {
    pub value: ValueFunction,
    pub policy: GaussianPolicy,
    pub lagged: Vec<f64>,
    pub target: Vec<f64>,
    pub value_adam: AdamState,
    pub policy_adam: AdamState,
}

impl PclState {
    pub fn new(value: ValueFunction, policy: GaussianPolicy) -> Self {
        PclState {
            lagged: policy.params().to_vec(),
            target: value.params().to_vec(),
            value_adam: AdamState::new(value.n_params()),
            policy_adam: AdamState::new(policy.n_params()),
            value,
            policy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub value: f64,
    pub policy: f64,
}

/// One joint update of value and policy followed by the lagged-policy and
/// target smoothing.
#[allow(clippy::too_many_arguments)]
pub fn kloss_pcl_update(
    state: &mut PclState,
    loss: ValueLoss,
    windows: &[Window],
    kernel: &PclKernel,
    coef: PclCoefficients,
    lrs: LearningRates,
    alpha: f64,
    target_tau: f64,
) -> Result<UpdateDiagnostics> {
    let diag = pcl_gradients(
        loss,
        &state.value,
        &state.target,
        &state.policy,
        &state.lagged,
        windows,
        kernel,
        coef,
    )?;
    let mut theta = state.value.params().to_vec();
    state.value_adam.update(&mut theta, &diag.value_grad, lrs.value)?;
    let mut phi = state.policy.params().to_vec();
    state.policy_adam.update(&mut phi, &diag.policy_grad, lrs.policy)?;
    state.value.set_params(&theta)?;
    state.policy.set_params(&phi)?;
    for (l, p) in state.lagged.iter_mut().zip(&phi) {
        *l = alpha * *l + (1.0 - alpha) * p;
    }
    for (t, p) in state.target.iter_mut().zip(&theta) {
        *t = target_tau * *t + (1.0 - target_tau) * p;
    }
    Ok(diag)
}

/// Entropy coefficient decayed by a factor 0.1 every `period` iterations.
pub fn lambda_schedule(lambda0: f64, iteration: usize, period: usize) -> f64 {
    if period == 0 {
        return lambda0;
    }
    lambda0 * 0.1f64.powf(iteration as f64 / period as f64)
}

/// Pendulum swing-up seen through `(cos theta, sin theta, theta_dot / 8)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumToy {
    pub episode_len: usize,
    /// Initial angle drawn from `U(-spread, spread)` around upright.
    pub start_spread: f64,
    pub noise: f64,
    /// Multiplies the pendulum reward; the default maps it into `[-1, 0]`.
    pub reward_scale: f64,
    /// Added after scaling. Centres typical rewards near zero so a freshly
    /// initialised value net is not far below every return it sees.
    pub reward_offset: f64,
}

impl Default for PendulumToy {
    fn default() -> Self {
        PendulumToy {
            episode_len: 100,
            start_spread: PI,
            noise: 1.0,
            reward_scale: 1.0 / PendulumToy::MAX_COST,
            reward_offset: 0.3,
        }
    }
}

impl PendulumToy {
    pub const OBS_DIM: usize = 3;
    /// Largest per-step cost: angle `pi`, full speed, full torque.
    pub const MAX_COST: f64 =
        PI * PI + 0.1 * pendulum::MAX_SPEED * pendulum::MAX_SPEED + 0.001 * pendulum::MAX_TORQUE * pendulum::MAX_TORQUE;

    pub fn observe(s: &[f64]) -> Vec<f64> {
        vec![s[0].cos(), s[0].sin(), s[1] / pendulum::MAX_SPEED]
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![
            rng.random_range(-self.start_spread..=self.start_spread),
            rng.random_range(-1.0..=1.0),
        ]
    }

    /// Applies the clipped torque; returns `(next_state, reward)`.
    pub fn step(&self, s: &[f64], action: f64, rng: &mut Rng) -> (Vec<f64>, f64) {
        let out = pendulum::step(s, action, self.noise, rng);
        (out.next_state, out.reward * self.reward_scale + self.reward_offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptConfig {
    pub iterations: usize,
    /// Environment steps collected per iteration.
    pub steps_per_iter: usize,
    pub batch_size: usize,
    /// Window length `d`.
    pub rollout: usize,
    pub gamma: f64,
    pub lambda0: f64,
    /// Iterations per tenfold decay of lambda; 0 keeps it constant.
    pub lambda_period: usize,
    pub tau: f64,
    /// Lagged-policy smoothing constant.
    pub alpha: f64,
    /// EMA constant for the FVI value target.
    pub target_tau: f64,
    pub value_lr: f64,
    pub policy_lr: f64,
    pub value_loss: ValueLoss,
    pub kernel: PclKernel,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub replay_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub env: PendulumToy,
    pub seed: u64,
}

impl Default for PolicyOptConfig {
    fn default() -> Self {
        PolicyOptConfig {
            iterations: 2000,
            steps_per_iter: 10,
            batch_size: 64,
            rollout: 5,
            gamma: 0.995,
            lambda0: 0.1,
            lambda_period: 2500,
            tau: 0.0,
            alpha: 0.99,
            target_tau: 0.99,
            value_lr: 0.001,
            policy_lr: 0.001,
            value_loss: ValueLoss::Kloss,
            kernel: PclKernel::StateActionMedian {
                alpha: 1.0 / (64f64).ln().sqrt(),
            },
            hidden: vec![64, 64],
            init_log_std: 0.0,
            replay_capacity: 100_000,
            eval_every: 100,
            eval_episodes: 10,
            env: PendulumToy::default(),
            seed: 0,
        }
    }
}

impl PolicyOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size", "needs at least 2 windows"));
        }
        if self.rollout == 0 || self.steps_per_iter == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::invalid(
                "policy optimization",
                "rollout, steps, eval cadence and episodes must be positive",
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(
                "discount",
                format!("must be in (0, 1), got {}", self.gamma),
            ));
        }
        if self.value_lr < 0.0 || self.policy_lr < 0.0 {
            return Err(Error::invalid("learning rate", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRecord {
    pub iteration: usize,
    /// Value loss of the latest update (NaN before the first update).
    pub loss: f64,
    /// Mean squared path residual of the latest batch.
    pub bellman: f64,
    pub theta_norm: f64,
    pub status: RunStatus,
    pub return_mean: f64,
    pub return_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLog {
    pub records: Vec<PolicyRecord>,
    pub status: RunStatus,
    pub value_params: Vec<f64>,
    pub policy_params: Vec<f64>,
}

impl PolicyLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,mse,bellman,theta_norm,status,mse_train,return_mean,return_std";

    /// Same columns as the evaluation log plus the return statistics; the
    /// oracle MSE columns are `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:e},NaN,{:e},{:e},{},NaN,{:e},{:e}\n",
                r.iteration,
                r.loss,
                r.bellman,
                r.theta_norm,
                r.status.name(),
                r.return_mean,
                r.return_std
            ));
        }
        out
    }

    pub fn first_return(&self) -> f64 {
        self.records[0].return_mean
    }

    pub fn final_return(&self) -> f64 {
        self.records.last().unwrap().return_mean
    }
}

/// Mean and standard deviation of deterministic mean-policy returns from
/// `episodes` fixed start states. Episodes run in parallel; each owns a PRNG
/// stream for its start state and transition noise.
pub fn evaluate_policy(policy: &GaussianPolicy, env: &PendulumToy, episodes: usize, seed: u64) -> (f64, f64) {
    let returns = Execution::default().map(episodes, |e| {
        let mut r = rng::stream(seed, (streams::EVAL << 40) + e as u64);
        let mut s = env.reset(&mut r);
        let mut total = 0.0;
        for _ in 0..env.episode_len {
            let a = policy.mean_action(&PendulumToy::observe(&s))[0];
            let (next, rew) = env.step(&s, a, &mut r);
            total += rew;
            s = next;
        }
        total
    });
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Collect, store, sample, update; evaluates the mean policy at iteration 0
/// and every `eval_every` iterations.
pub fn run_policy_optimization(cfg: &PolicyOptConfig) -> Result<PolicyLog> {
    cfg.validate()?;
    let arch = Architecture::mlp(PendulumToy::OBS_DIM, &cfg.hidden, Activation::Tanh)?;
    let value = ValueFunction::init(arch, cfg.seed);
    let policy = GaussianPolicy::new(PendulumToy::OBS_DIM, 1, &cfg.hidden, cfg.init_log_std, cfg.seed)?;
    let mut state = PclState::new(value, policy);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut roll_rng = rng::stream(cfg.seed, streams::ROLLOUT);
    let mut replay_rng = rng::stream(cfg.seed, streams::REPLAY);
    let eval_seed = cfg.seed;

    let mut s = cfg.env.reset(&mut roll_rng);
    let mut t_ep = 0usize;
    let mut new_episode = true;
    let (m0, sd0) = evaluate_policy(&state.policy, &cfg.env, cfg.eval_episodes, eval_seed);
    let mut records = vec![PolicyRecord {
        iteration: 0,
        loss: f64::NAN,
        bellman: f64::NAN,
        theta_norm: l2_norm(state.value.params()),
        status: RunStatus::Ok,
        return_mean: m0,
        return_std: sd0,
    }];
    let mut last_loss = f64::NAN;
    let mut last_bellman = f64::NAN;
    let mut status = RunStatus::Ok;

    for it in 1..=cfg.iterations {
        for _ in 0..cfg.steps_per_iter {
            let obs = PendulumToy::observe(&s);
            let a = state.policy.sample(&obs, &mut roll_rng);
            let (next, r) = cfg.env.step(&s, a[0], &mut roll_rng);
            buffer.push(&obs, a, r, PendulumToy::observe(&next), new_episode);
            new_episode = false;
            s = next;
            t_ep += 1;
            if t_ep >= cfg.env.episode_len {
                buffer.end_episode();
                s = cfg.env.reset(&mut roll_rng);
                t_ep = 0;
                new_episode = true;
            }
        }
        if buffer.n_windows(cfg.rollout) >= cfg.batch_size {
            let windows = buffer.sample(cfg.rollout, cfg.batch_size, &mut replay_rng)?;
            let coef = PclCoefficients {
                gamma: cfg.gamma,
                lambda: lambda_schedule(cfg.lambda0, it, cfg.lambda_period),
                tau: cfg.tau,
            };
            let lrs = LearningRates {
                value: cfg.value_lr,
                policy: cfg.policy_lr,
            };
            let diag = kloss_pcl_update(
                &mut state,
                cfg.value_loss,
                &windows,
                &cfg.kernel,
                coef,
                lrs,
                cfg.alpha,
                cfg.target_tau,
            )?;
            last_loss = diag.value_loss;
            last_bellman = diag.residuals.iter().map(|r| r * r).sum::<f64>() / diag.residuals.len() as f64;
            if l2_norm(state.value.params()) > DIVERGENCE_THRESHOLD
                || l2_norm(state.policy.params()) > DIVERGENCE_THRESHOLD
            {
                status = RunStatus::Diverged;
            }
        }
        if it % cfg.eval_every == 0 || it == cfg.iterations || status == RunStatus::Diverged {
            let (m, sd) = evaluate_policy(&state.policy, &cfg.env, cfg.eval_episodes, eval_seed);
            records.push(PolicyRecord {
                iteration: it,
                loss: last_loss,
                bellman: last_bellman,
                theta_norm: l2_norm(state.value.params()),
                status,
                return_mean: m,
                return_std: sd,
            });
        }
        if status == RunStatus::Diverged {
            break;
        }
    }
    Ok(PolicyLog {
        records,
        status,
        value_params: state.value.params().to_vec(),
        policy_params: state.policy.params().to_vec(),
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn replay_never_exceeds_capacity(
            capacity in 1usize..40,
            steps in prop::collection::vec(prop::bool::weighted(0.15), 1..200),
        ) {
            let mut buf = ReplayBuffer::new(capacity);
            for (i, &new_episode) in steps.iter().enumerate() {
                buf.push(&[i as f64], vec![0.0], 1.0, vec![i as f64 + 1.0], new_episode);
                prop_assert!(buf.len() <= capacity);
                prop_assert_eq!(buf.len(), (i + 1).min(capacity));
                for e in &buf.episodes {
                    prop_assert_eq!(e.states.len(), e.actions.len() + 1);
                    prop_assert_eq!(e.rewards.len(), e.actions.len());
                }
            }
            prop_assert_eq!(buf.inserted(), steps.len() as u64);
        }

        #[test]
        fn replay_sampling_is_seed_deterministic(seed in any::<u64>(), d in 1usize..4) {
            let mut buf = ReplayBuffer::new(100);
            for i in 0..30 {
                buf.push(&[i as f64], vec![i as f64], -1.0, vec![i as f64 + 1.0], i % 10 == 0);
            }
            let a = buf.sample(d, 8, &mut rng::stream(seed, streams::REPLAY)).unwrap();
            let b = buf.sample(d, 8, &mut rng::stream(seed, streams::REPLAY)).unwrap();
            prop_assert_eq!(a.len(), 8);
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(&x.states, &y.states);
                prop_assert_eq!(x.d(), d);
            }
        }

        #[test]
        fn lambda_schedule_monotone(lambda0 in 0.0f64..1.0, it in 0usize..10_000, period in 1usize..5000) {
            let a = lambda_schedule(lambda0, it, period);
            let b = lambda_schedule(lambda0, it + 1, period);
            prop_assert!(b <= a && a <= lambda0 && b >= 0.0);
        }
    }
}
