//! Simulators, fixed evaluation policies and transition datasets.

pub mod chain;
pub mod control;
pub mod grid;

use rand::Rng as _;

use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::rng::{self, Rng};

pub use chain::{make_baird_star, make_tvr_chain, LinearChainSpec};
pub use grid::{discretized_true_values, GridValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    PuddleWorld,
    CartPole,
    MountainCar,
    Pendulum,
    TvrChain,
    BairdStar,
}

impl EnvKind {
    pub const NAMES: [&'static str; 6] = [
        "puddle-world",
        "cartpole",
        "mountain-car",
        "pendulum",
        "tvr-chain",
        "baird-star",
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PuddleWorld => "puddle-world",
            EnvKind::CartPole => "cartpole",
            EnvKind::MountainCar => "mountain-car",
            EnvKind::Pendulum => "pendulum",
            EnvKind::TvrChain => "tvr-chain",
            EnvKind::BairdStar => "baird-star",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::NAMES.iter().position(|n| *n == s).map(|i| {
            [
                Self::PuddleWorld,
                Self::CartPole,
                Self::MountainCar,
                Self::Pendulum,
                Self::TvrChain,
                Self::BairdStar,
            ][i]
        })
    }

    pub fn is_chain(self) -> bool {
        matches!(self, EnvKind::TvrChain | EnvKind::BairdStar)
    }
}

/// One sampled step `(s, a, r, s', terminal)`.
///
/// Discrete actions are stored as a single index-valued component; chain
/// states are stored as their integer index.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Start states drawn i.i.d. uniformly from the state box.
    UniformState,
    /// Consecutive steps of policy rollouts from the reset distribution.
    OnPolicyRollout,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::UniformState => "uniform-state",
            SamplingMode::OnPolicyRollout => "on-policy-rollout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform-state" => Some(SamplingMode::UniformState),
            "on-policy-rollout" => Some(SamplingMode::OnPolicyRollout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub env: EnvKind,
    pub policy_id: String,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl TransitionDataset {
    pub fn new(
        transitions: Vec<Transition>,
        env: EnvKind,
        policy_id: String,
        mode: SamplingMode,
        seed: u64,
    ) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::invalid("dataset", "must contain at least one transition"))?;
        let (ds, da) = (first.state.len(), first.action.len());
        for t in &transitions {
            check_len("transition state", ds, t.state.len())?;
            check_len("transition next state", ds, t.next_state.len())?;
            check_len("transition action", da, t.action.len())?;
            if !t.reward.is_finite() {
                return Err(Error::NonFinite {
                    context: "transition reward",
                });
            }
        }
        Ok(TransitionDataset {
            transitions,
            env,
            policy_id,
            mode,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.transitions[0].state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.transitions[0].action.len()
    }

    /// Copy with states and next states mapped through `f`.
    pub fn map_states(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let transitions = self
            .transitions
            .iter()
            .map(|t| Transition {
                state: f(&t.state),
                next_state: f(&t.next_state),
                ..t.clone()
            })
            .collect();
        TransitionDataset {
            transitions,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// An environment instance: task kind plus transition-noise multiplier.
#[derive(Debug, Clone)]
pub struct Env {
    kind: EnvKind,
    noise: f64,
    chain: Option<LinearChainSpec>,
}

/// Transitions produced per dataset shard; each shard owns one PRNG stream.
pub const SHARD_SIZE: usize = 256;

impl Env {
    pub fn new(kind: EnvKind) -> Result<Self> {
        let chain = match kind {
            EnvKind::TvrChain => Some(make_tvr_chain()?),
            EnvKind::BairdStar => Some(make_baird_star()?),
            _ => None,
        };
        Ok(Env {
            kind,
            noise: 1.0,
            chain,
        })
    }

    /// Scales every simulator's Gaussian transition noise (0 = deterministic).
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn chain(&self) -> Option<&LinearChainSpec> {
        self.chain.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            EnvKind::CartPole => 4,
            EnvKind::PuddleWorld | EnvKind::MountainCar | EnvKind::Pendulum => 2,
            EnvKind::TvrChain | EnvKind::BairdStar => 1,
        }
    }

    /// State box `(lo, hi)`; for chains the range of state indices.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        use control::*;
        match self.kind {
            EnvKind::PuddleWorld => (puddle::LO.to_vec(), puddle::HI.to_vec()),
            EnvKind::CartPole => (cartpole::LO.to_vec(), cartpole::HI.to_vec()),
            EnvKind::MountainCar => (mountain_car::LO.to_vec(), mountain_car::HI.to_vec()),
            EnvKind::Pendulum => (pendulum::LO.to_vec(), pendulum::HI.to_vec()),
            EnvKind::TvrChain | EnvKind::BairdStar => {
                let n = self.chain.as_ref().unwrap().mdp.n_states();
                (vec![0.0], vec![(n - 1) as f64])
            }
        }
    }

    /// Affine map of the state box onto `[0,1]^d`; chains are left as indices.
    pub fn normalize(&self, s: &[f64]) -> Vec<f64> {
        if self.kind.is_chain() {
            return s.to_vec();
        }
        let (lo, hi) = self.bounds();
        s.iter()
            .zip(lo.iter().zip(&hi))
            .map(|(x, (l, h))| (x - l) / (h - l))
            .collect()
    }

    pub fn policy_id(&self) -> &'static str {
        match self.kind {
            EnvKind::PuddleWorld => "noisy-greedy-to-goal",
            EnvKind::CartPole => "pd-controller",
            EnvKind::MountainCar => "energy-pumping",
            EnvKind::Pendulum => "energy-pumping-pd",
            EnvKind::TvrChain | EnvKind::BairdStar => "chain-target",
        }
    }

    /// Whether `s` lies in an absorbing goal/failure region.
    pub fn is_terminal_state(&self, s: &[f64]) -> bool {
        match self.kind {
            EnvKind::PuddleWorld => control::puddle::is_goal(s),
            EnvKind::CartPole => control::cartpole::is_failed(s),
            EnvKind::MountainCar => s[0] >= control::mountain_car::GOAL,
            EnvKind::Pendulum => false,
            EnvKind::TvrChain | EnvKind::BairdStar => self.chain.as_ref().unwrap().mdp.terminal()[s[0] as usize],
        }
    }

    /// Action of the fixed evaluation policy.
    pub fn policy_action(&self, s: &[f64], rng: &mut Rng) -> Vec<f64> {
        match self.kind {
            EnvKind::PuddleWorld => vec![control::puddle::policy(s, rng) as f64],
            EnvKind::CartPole => vec![control::cartpole::policy(s, rng) as f64],
            EnvKind::MountainCar => vec![control::mountain_car::policy(s, rng) as f64],
            EnvKind::Pendulum => vec![control::pendulum::policy(s, rng)],
            EnvKind::TvrChain | EnvKind::BairdStar => vec![0.0],
        }
    }

    /// One transition. Pure in `(state, action, rng state)`.
    pub fn simulate(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step> {
        check_len("state", self.state_dim(), state.len())?;
        if state.iter().chain(action).any(|x| x.is_nan()) {
            return Err(Error::NonFinite {
                context: "simulator input",
            });
        }
        let out = match self.kind {
            EnvKind::PuddleWorld => control::puddle::step(state, action[0] as usize, self.noise, rng),
            EnvKind::CartPole => control::cartpole::step(state, action[0] as usize, self.noise, rng),
            EnvKind::MountainCar => control::mountain_car::step(state, action[0] as usize, self.noise, rng),
            EnvKind::Pendulum => control::pendulum::step(state, action[0], self.noise, rng),
            EnvKind::TvrChain | EnvKind::BairdStar => {
                let spec = self.chain.as_ref().unwrap();
                let s = state[0] as usize;
                let row = spec.mdp.next_row(s, 0);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut next = row.iter().rposition(|&p| p > 0.0).unwrap();
                for (i, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = i;
                        break;
                    }
                }
                control::Outcome {
                    next_state: vec![next as f64],
                    reward: spec.mdp.r(s, 0),
                    terminal: spec.mdp.terminal()[next],
                }
            }
        };
        Ok(Step {
            next_state: out.next_state,
            reward: out.reward,
            terminal: out.terminal,
        })
    }

    /// Uniform draw from the state box; chains draw from their sampling
    /// distribution over non-terminal states.
    pub fn sample_uniform_state(&self, rng: &mut Rng) -> Vec<f64> {
        if let Some(spec) = &self.chain {
            let u: f64 = rng.random();
            let mu = spec.mu.as_slice();
            let mut acc = 0.0;
            for (s, &m) in mu.iter().enumerate() {
                acc += m;
                if u < acc {
                    return vec![s as f64];
                }
            }
            return vec![mu.iter().rposition(|&m| m > 0.0).unwrap() as f64];
        }
        let (lo, hi) = self.bounds();
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }

    /// Start state for rollouts.
    pub fn reset_state(&self, rng: &mut Rng) -> Vec<f64> {
        match self.kind {
            EnvKind::PuddleWorld => vec![0.2 * rng.random::<f64>(), 0.2 * rng.random::<f64>()],
            EnvKind::CartPole => (0..4).map(|_| rng.random_range(-0.05..0.05)).collect(),
            EnvKind::MountainCar => vec![rng.random_range(-0.6..-0.4), 0.0],
            EnvKind::Pendulum => vec![
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.random_range(-1.0..1.0),
            ],
            EnvKind::TvrChain | EnvKind::BairdStar => self.sample_uniform_state(rng),
        }
    }

    /// Rollouts are truncated after this many steps.
    pub fn horizon(&self) -> usize {
        match self.kind {
            EnvKind::PuddleWorld => 200,
            EnvKind::CartPole | EnvKind::MountainCar => 500,
            EnvKind::Pendulum => 200,
            EnvKind::TvrChain | EnvKind::BairdStar => 100,
        }
    }
}

/// Collects `n` transitions under the environment's evaluation policy.
///
/// Work is split into shards of [`SHARD_SIZE`] transitions; shard `k` draws
/// from stream `SHARD_BASE + k` of `seed`, and results are ordered by shard
/// then step. The output is therefore independent of thread count. In
/// rollout mode each shard runs its own episodes from the reset distribution.
pub fn collect_dataset(env: &Env, n: usize, mode: SamplingMode, seed: u64) -> Result<TransitionDataset> {
    collect_dataset_with(env, n, mode, seed, Execution::default())
}

pub fn collect_dataset_with(
    env: &Env,
    n: usize,
    mode: SamplingMode,
    seed: u64,
    exec: Execution,
) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size", "n must be at least 1"));
    }
    let shards = n.div_ceil(SHARD_SIZE);
    let parts: Vec<Result<Vec<Transition>>> = exec.map(shards, |k| {
        let len = SHARD_SIZE.min(n - k * SHARD_SIZE);
        let mut rng = rng::stream(seed, rng::streams::SHARD_BASE + k as u64);
        let mut out = Vec::with_capacity(len);
        let mut state = env.reset_state(&mut rng);
        let mut t = 0;
        for _ in 0..len {
            if mode == SamplingMode::UniformState {
                state = env.sample_uniform_state(&mut rng);
            }
            let action = env.policy_action(&state, &mut rng);
            let step = env.simulate(&state, &action, &mut rng)?;
            out.push(Transition {
                state: state.clone(),
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
                terminal: step.terminal,
            });
            t += 1;
            if mode == SamplingMode::OnPolicyRollout {
                if step.terminal || t >= env.horizon() {
                    state = env.reset_state(&mut rng);
                    t = 0;
                } else {
                    state = step.next_state;
                }
            }
        }
        Ok(out)
    });
    let mut transitions = Vec::with_capacity(n);
    for part in parts {
        transitions.extend(part?);
    }
    TransitionDataset::new(transitions, env.kind(), env.policy_id().to_string(), mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_transition_dataset() {
        let env = Env::new(EnvKind::PuddleWorld).unwrap();
        let ds = collect_dataset(&env, 1, SamplingMode::UniformState, 4).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(collect_dataset(&env, 0, SamplingMode::UniformState, 4).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        for kind in [
            EnvKind::PuddleWorld,
            EnvKind::CartPole,
            EnvKind::MountainCar,
            EnvKind::Pendulum,
            EnvKind::TvrChain,
        ] {
            let env = Env::new(kind).unwrap();
            for mode in [SamplingMode::UniformState, SamplingMode::OnPolicyRollout] {
                let a = collect_dataset_with(&env, 700, mode, 9, Execution::Sequential).unwrap();
                let b = collect_dataset_with(&env, 700, mode, 9, Execution::Parallel).unwrap();
                assert_eq!(a, b);
                let c = collect_dataset(&env, 700, mode, 10).unwrap();
                assert_ne!(a.transitions, c.transitions);
            }
        }
    }

    #[test]
    fn replaying_rng_replays_trajectory() {
        let env = Env::new(EnvKind::CartPole).unwrap();
        let run = || {
            let mut r = rng::stream(3, 0);
            let mut s = vec![0.0, 0.0, 0.01, 0.0];
            let mut traj = Vec::new();
            for _ in 0..50 {
                let a = env.policy_action(&s, &mut r);
                let step = env.simulate(&s, &a, &mut r).unwrap();
                traj.push(step.clone());
                s = step.next_state;
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_state_rejected() {
        let env = Env::new(EnvKind::MountainCar).unwrap();
        let mut r = rng::stream(0, 0);
        assert!(env.simulate(&[f64::NAN, 0.0], &[1.0], &mut r).is_err());
    }

    #[test]
    fn tvr_empirical_frequencies_match_transition_matrix() {
        let env = Env::new(EnvKind::TvrChain).unwrap();
        let ds = collect_dataset(&env, 2000, SamplingMode::UniformState, 0).unwrap();
        let spec = env.chain().unwrap();
        let mut counts = [[0usize; 5]; 5];
        for t in &ds.transitions {
            counts[t.state[0] as usize][t.next_state[0] as usize] += 1;
        }
        for s in 0..4 {
            let total: usize = counts[s].iter().sum();
            assert!(total > 0);
            for next in 0..5 {
                let p = spec.mdp.p(s, 0, next);
                let freq = counts[s][next] as f64 / total as f64;
                let se = (p * (1.0 - p) / total as f64).sqrt();
                assert!((freq - p).abs() <= 3.0 * se + 1e-12, "s={s} s'={next}: {freq} vs {p}");
            }
        }
    }

    #[test]
    fn uniform_states_pass_chi_square() {
        // 10 bins per dimension; the 1% critical value of chi^2 with 9 dof is 21.67.
        let env = Env::new(EnvKind::PuddleWorld).unwrap();
        let ds = collect_dataset(&env, 5000, SamplingMode::UniformState, 21).unwrap();
        for d in 0..2 {
            let mut bins = [0usize; 10];
            for t in &ds.transitions {
                bins[((t.state[d] * 10.0) as usize).min(9)] += 1;
            }
            let chi: f64 = bins.iter().map(|&c| (c as f64 - 500.0).powi(2) / 500.0).sum();
            assert!(chi < 21.67, "dim {d}: chi2 = {chi}");
        }
    }

    #[test]
    fn env_names_round_trip() {
        for name in EnvKind::NAMES {
            assert_eq!(EnvKind::parse(name).unwrap().name(), name);
        }
        assert!(EnvKind::parse("swimmer").is_none());
    }
}
