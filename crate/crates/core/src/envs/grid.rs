//! Ground-truth values for continuous tasks by discretizing the state box.
//!
//! Each cell is represented by its center. From every center we simulate
//! `samples_per_cell` policy steps, map the next states back to cells (or to
//! a single absorbing terminal node) and average rewards. The resulting
//! finite MDP is evaluated by sparse value iteration; small grids can be
//! exported as a dense [`TabularMdp`] for cross-checking.

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, streams};
use crate::tabular::{TabularMdp, TabularPolicy};

/// Default resolutions, one per state dimension.
pub fn default_resolution(env: &Env) -> Vec<usize> {
    use crate::envs::EnvKind::*;
    match env.kind() {
        PuddleWorld => vec![25, 25],
        // Cart position and velocity are collapsed; the pole angle and its
        // rate carry the value.
        CartPole => vec![1, 1, 20, 25],
        MountainCar => vec![30, 25],
        Pendulum => vec![31, 31],
        TvrChain | BairdStar => vec![1],
    }
}

/// Value table of a discretized environment.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    pub resolution: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub discount: f64,
    /// Values per cell in row-major order (last dimension fastest).
    pub values: Vec<f64>,
    /// False for cells no simulated transition enters from another cell.
    pub reachable: Vec<bool>,
    /// True for cells whose center lies in a terminal region.
    pub terminal: Vec<bool>,
    /// Sparse transitions per cell: `(next cell or None for terminal, prob)`.
    transitions: Vec<Vec<(Option<usize>, f64)>>,
    rewards: Vec<f64>,
}

const TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

impl GridValues {
    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    /// Row-major index of the cell containing `s` (clamped to the box).
    pub fn cell_of(&self, s: &[f64]) -> usize {
        let mut idx = 0;
        for d in 0..self.resolution.len() {
            let n = self.resolution[d];
            let t = (s[d] - self.lo[d]) / (self.hi[d] - self.lo[d]);
            let k = ((t * n as f64).floor().max(0.0) as usize).min(n - 1);
            idx = idx * n + k;
        }
        idx
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let dims = self.resolution.len();
        let mut out = vec![0.0; dims];
        let mut rest = cell;
        for d in (0..dims).rev() {
            let n = self.resolution[d];
            let k = rest % n;
            rest /= n;
            out[d] = self.lo[d] + (k as f64 + 0.5) * (self.hi[d] - self.lo[d]) / n as f64;
        }
        out
    }

    /// Nearest-cell lookup `V*(s)`.
    pub fn lookup(&self, s: &[f64]) -> f64 {
        self.values[self.cell_of(s)]
    }

    /// Centers and values of reachable, non-terminal cells: the evaluation
    /// set for grid MSE.
    pub fn eval_points(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        (0..self.n_cells())
            .filter(|&c| self.reachable[c] && !self.terminal[c])
            .map(|c| (self.center(c), self.values[c]))
            .unzip()
    }

    /// Dense finite MDP with one action and an extra absorbing terminal node
    /// at index `n_cells`.
    pub fn to_tabular(&self) -> Result<TabularMdp> {
        let n = self.n_cells() + 1;
        let mut p = vec![0.0; n * n];
        let mut r = vec![0.0; n];
        for c in 0..self.n_cells() {
            for &(next, prob) in &self.transitions[c] {
                p[c * n + next.unwrap_or(n - 1)] += prob;
            }
            r[c] = self.rewards[c];
        }
        p[n * n - 1] = 1.0;
        let mut terminal = vec![false; n];
        terminal[n - 1] = true;
        TabularMdp::with_tolerance(n, 1, p, r, self.discount, terminal, 1e-9)
    }

    pub fn tabular_policy(&self) -> TabularPolicy {
        TabularPolicy::uniform(self.n_cells() + 1, 1)
    }
}

/// Builds and solves the discretized MDP of `env` under its evaluation policy.
///
/// Sampling for cell `c` uses stream `(ORACLE << 40) + c` of `seed`, so the
/// table is bit-reproducible and independent of thread count. A resolution
/// of 1 along a dimension collapses it.
pub fn discretized_true_values(
    env: &Env,
    resolution: &[usize],
    discount: f64,
    samples_per_cell: usize,
    seed: u64,
) -> Result<GridValues> {
    if env.kind().is_chain() {
        return Err(Error::invalid("grid", "chain environments are already tabular"));
    }
    if resolution.len() != env.state_dim() || resolution.contains(&0) {
        return Err(Error::invalid(
            "grid resolution",
            format!("need {} positive entries, got {resolution:?}", env.state_dim()),
        ));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::invalid(
            "discount",
            format!("grid oracle needs 0 < gamma < 1, got {discount}"),
        ));
    }
    if samples_per_cell == 0 {
        return Err(Error::invalid("samples per cell", "must be at least 1"));
    }
    let (lo, hi) = env.bounds();
    let n_cells: usize = resolution.iter().product();
    let mut grid = GridValues {
        resolution: resolution.to_vec(),
        lo,
        hi,
        discount,
        values: vec![0.0; n_cells],
        reachable: vec![false; n_cells],
        terminal: vec![false; n_cells],
        transitions: Vec::new(),
        rewards: Vec::new(),
    };

    // Per cell: (next cell or absorbing, probability) pairs and the mean reward.
    type CellModel = (Vec<(Option<usize>, f64)>, f64);
    let rows: Vec<Result<CellModel>> = Execution::default().map(n_cells, |c| {
        let mut rng = rng::stream(seed, (streams::ORACLE << 40) + c as u64);
        let s = grid.center(c);
        let mut counts: Vec<(Option<usize>, usize)> = Vec::new();
        let mut reward = 0.0;
        for _ in 0..samples_per_cell {
            let a = env.policy_action(&s, &mut rng);
            let step = env.simulate(&s, &a, &mut rng)?;
            reward += step.reward;
            let next = if step.terminal {
                None
            } else {
                Some(grid.cell_of(&step.next_state))
            };
            match counts.iter_mut().find(|(k, _)| *k == next) {
                Some(entry) => entry.1 += 1,
                None => counts.push((next, 1)),
            }
        }
        counts.sort_by_key(|&(k, _)| k.map_or(usize::MAX, |i| i));
        let total = samples_per_cell as f64;
        Ok((
            counts.into_iter().map(|(k, n)| (k, n as f64 / total)).collect(),
            reward / total,
        ))
    });
    for (c, row) in rows.into_iter().enumerate() {
        let (trans, reward) = row?;
        for &(next, _) in &trans {
            if let Some(k) = next {
                if k != c {
                    grid.reachable[k] = true;
                }
            }
        }
        grid.transitions.push(trans);
        grid.rewards.push(reward);
        grid.terminal[c] = env.is_terminal_state(&grid.center(c));
    }
    grid.values = sparse_policy_evaluation(&grid.transitions, &grid.rewards, discount)?;
    Ok(grid)
}

/// Gauss-Seidel sweeps over sparse rows until the Bellman residual is below `TOL`.
fn sparse_policy_evaluation(
    transitions: &[Vec<(Option<usize>, f64)>],
    rewards: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        for c in 0..n {
            let next: f64 = transitions[c].iter().map(|&(k, p)| k.map_or(0.0, |k| p * v[k])).sum();
            v[c] = rewards[c] + gamma * next;
        }
        let mut residual: f64 = 0.0;
        for c in 0..n {
            let next: f64 = transitions[c].iter().map(|&(k, p)| k.map_or(0.0, |k| p * v[k])).sum();
            residual = residual.max((rewards[c] + gamma * next - v[c]).abs());
        }
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                context: "grid value iteration",
            });
        }
        if residual <= TOL {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual: f64::NAN,
    })
}
