//! Exact computations on finite MDPs.
//!
//! These routines are the ground truth that the sample-based estimators are
//! checked against: true value functions, exact Bellman residuals, the exact
//! kernel loss and its dual-kernel, Mercer and RKHS forms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;

use crate::error::{check_len, Error, Result};
use crate::rng;

/// Probability rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Largest tolerated `|k(s,t) - k(t,s)|` on a state Gram matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Sweep cap for iterative policy evaluation.
pub const MAX_SWEEPS: usize = 1_000_000;

/// A finite MDP with transition tensor `P[s][a][s']` and mean rewards `R[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// `transition` is row-major `[s][a][s']`, `reward` is row-major `[s][a]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        Self::with_tolerance(n_states, n_actions, transition, reward, discount, terminal, ROW_SUM_TOL)
    }

    pub(crate) fn with_tolerance(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        terminal: Vec<bool>,
        row_tol: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("mdp", "n_states and n_actions must be positive"));
        }
        check_len("transition tensor", n_states * n_actions * n_states, transition.len())?;
        check_len("reward matrix", n_states * n_actions, reward.len())?;
        check_len("terminal mask", n_states, terminal.len())?;
        let has_terminal = terminal.iter().any(|&t| t);
        if !(discount > 0.0 && discount < 1.0) && !(discount == 1.0 && has_terminal) {
            return Err(Error::invalid(
                "mdp",
                format!("discount {discount} must lie in (0,1), or equal 1 with an absorbing terminal state"),
            ));
        }
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            if chunk.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid(
                    "mdp",
                    format!("negative or non-finite probability in row {row}"),
                ));
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > row_tol {
                return Err(Error::invalid(
                    "mdp",
                    format!("row (s={}, a={}) sums to {sum}", row / n_actions, row % n_actions),
                ));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("mdp", "non-finite reward"));
        }
        for s in (0..n_states).filter(|&s| terminal[s]) {
            for a in 0..n_actions {
                let p_self = transition[(s * n_actions + a) * n_states + s];
                if p_self != 1.0 || reward[s * n_actions + a] != 0.0 {
                    return Err(Error::invalid(
                        "mdp",
                        format!("terminal state {s} must self-loop with reward 0"),
                    ));
                }
            }
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            terminal,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Next-state distribution `P[s][a][·]`.
    pub fn next_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Same MDP with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            discount,
            self.terminal.clone(),
        )
    }

    /// `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, policy: &TabularPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut m = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (next, &p) in self.next_row(s, a).iter().enumerate() {
                    m[(s, next)] += w * p;
                }
            }
        }
        Ok(m)
    }

    /// `r_pi[s] = sum_a pi(a|s) R(s,a)`.
    pub fn policy_reward(&self, policy: &TabularPolicy) -> Result<DVector<f64>> {
        self.check_policy(policy)?;
        Ok(DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions).map(|a| policy.prob(s, a) * self.r(s, a)).sum()
        }))
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        check_len("policy states", self.n_states, policy.n_states)?;
        check_len("policy actions", self.n_actions, policy.n_actions)
    }
}

/// Stochastic policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(n_states, n_actions, probs, ROW_SUM_TOL)
    }

    pub(crate) fn with_tolerance(n_states: usize, n_actions: usize, probs: Vec<f64>, tol: f64) -> Result<Self> {
        check_len("policy table", n_states * n_actions, probs.len())?;
        for (s, row) in probs.chunks(n_actions.max(1)).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::invalid("policy", format!("negative probability in state {s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::invalid("policy", format!("row {s} sums to {sum}")));
            }
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
}

/// Sampling distribution `mu` over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    mu: Vec<f64>,
}

impl StateDistribution {
    /// Requires `mu > 0` on every non-terminal state of `mdp`.
    pub fn new(mu: Vec<f64>, mdp: &TabularMdp) -> Result<Self> {
        Self::with_tolerance(mu, mdp, ROW_SUM_TOL)
    }

    pub(crate) fn with_tolerance(mu: Vec<f64>, mdp: &TabularMdp, tol: f64) -> Result<Self> {
        check_len("state distribution", mdp.n_states(), mu.len())?;
        let sum: f64 = mu.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::invalid("mu", format!("sums to {sum}")));
        }
        for (s, &m) in mu.iter().enumerate() {
            if !(m >= 0.0) {
                return Err(Error::invalid("mu", format!("negative mass at state {s}")));
            }
            if m == 0.0 && !mdp.terminal()[s] {
                return Err(Error::invalid("mu", format!("non-terminal state {s} has zero mass")));
            }
        }
        Ok(StateDistribution { mu })
    }

    pub fn uniform(n_states: usize) -> Self {
        StateDistribution {
            mu: vec![1.0 / n_states as f64; n_states],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Iterative policy evaluation (Jacobi sweeps) until `max_s |B V(s) - V(s)| <= tol`.
///
/// Terminal states are pinned to zero. With `discount == 1` the sweep only
/// converges when every policy-induced chain is absorbed; otherwise the sweep
/// cap is hit and [`Error::NoConvergence`] is returned.
pub fn solve_value_function(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<DVector<f64>> {
    let p = mdp.policy_transition(policy)?;
    let r = mdp.policy_reward(policy)?;
    let gamma = mdp.discount();
    let terminal = mdp.terminal();
    let mut v = DVector::zeros(mdp.n_states());
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut next = &r + gamma * (&p * &v);
        residual = 0.0;
        for s in 0..mdp.n_states() {
            if terminal[s] {
                next[s] = 0.0;
            }
            residual = f64::max(residual, (next[s] - v[s]).abs());
        }
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                context: "policy evaluation",
            });
        }
        if residual <= tol {
            return Ok(v);
        }
        v = next;
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

/// Dense solve of `(I - gamma P_pi) V = r_pi` restricted to non-terminal states.
pub fn solve_value_direct(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<DVector<f64>> {
    let p = mdp.policy_transition(policy)?;
    let r = mdp.policy_reward(policy)?;
    let live: Vec<usize> = (0..mdp.n_states()).filter(|&s| !mdp.terminal()[s]).collect();
    let m = live.len();
    let gamma = mdp.discount();
    let a = DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * p[(live[i], live[j])]
    });
    let b = DVector::from_fn(m, |i, _| r[live[i]]);
    let x = a.clone().full_piv_lu().solve(&b).ok_or(Error::Singular {
        context: "policy evaluation (I - gamma P)",
        condition: f64::INFINITY,
    })?;
    let mut v = DVector::zeros(mdp.n_states());
    for (i, &s) in live.iter().enumerate() {
        v[s] = x[i];
    }
    Ok(v)
}

/// `R_pi V = B_pi V - V`.
pub fn exact_bellman_residual(mdp: &TabularMdp, policy: &TabularPolicy, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("value vector", mdp.n_states(), v.len())?;
    let p = mdp.policy_transition(policy)?;
    let r = mdp.policy_reward(policy)?;
    Ok(r + mdp.discount() * (&p * v) - v)
}

/// Squared Bellman error `L_2(V) = sum_s mu(s) (R_pi V(s))^2`.
pub fn squared_bellman_error(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    v: &DVector<f64>,
) -> Result<f64> {
    check_len("state distribution", mdp.n_states(), mu.len())?;
    let res = exact_bellman_residual(mdp, policy, v)?;
    Ok(res.iter().zip(mu.as_slice()).map(|(d, m)| m * d * d).sum())
}

fn check_gram(gram: &DMatrix<f64>, n: usize) -> Result<()> {
    check_len("gram rows", n, gram.nrows())?;
    check_len("gram cols", n, gram.ncols())?;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (gram[(i, j)] - gram[(j, i)]).abs();
            if !(gap <= SYMMETRY_TOL) {
                return Err(Error::AsymmetricKernel { row: i, col: j, gap });
            }
        }
    }
    Ok(())
}

/// `sum_{s,t} mu(s) mu(t) k(s,t) f(s) f(t)`.
pub fn weighted_quadratic(mu: &[f64], gram: &DMatrix<f64>, f: &DVector<f64>) -> f64 {
    let w = DVector::from_fn(f.len(), |s, _| mu[s] * f[s]);
    w.dot(&(gram * &w))
}

/// Exact kernel loss `L_k(V) = sum_{s,t} mu(s) mu(t) k(s,t) R V(s) R V(t)`.
///
/// `gram` is the kernel evaluated on the state set, `gram[(s, t)] = k(s, t)`.
pub fn exact_kernel_loss(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    gram: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    check_len("state distribution", mdp.n_states(), mu.len())?;
    check_gram(gram, mdp.n_states())?;
    let res = exact_bellman_residual(mdp, policy, v)?;
    Ok(weighted_quadratic(mu.as_slice(), gram, &res))
}

/// Unnormalized backward conditional, stored as `d[(s', s)] = d*(s | s')`
/// with `d*(s | s') = sum_a pi(a|s) P(s'|s,a) mu(s) / mu(s')`.
///
/// Columns of next states with no incoming mass are left at zero; a next
/// state with incoming mass but `mu(s') = 0` is an error.
pub fn backward_conditional(mdp: &TabularMdp, policy: &TabularPolicy, mu: &StateDistribution) -> Result<DMatrix<f64>> {
    check_len("state distribution", mdp.n_states(), mu.len())?;
    let p = mdp.policy_transition(policy)?;
    let mu = mu.as_slice();
    let n = mdp.n_states();
    let mut d = DMatrix::zeros(n, n);
    for next in 0..n {
        for s in 0..n {
            let flow = p[(s, next)] * mu[s];
            if flow == 0.0 {
                continue;
            }
            if mu[next] == 0.0 {
                return Err(Error::UnreachableMass { state: next });
            }
            d[(next, s)] = flow / mu[next];
        }
    }
    Ok(d)
}

/// Dual kernel `k*` such that `L_k(V) = ||V - V^pi||^2_{k*, mu}`.
///
/// Each term of `k*(s', t') = E[k(s', t') + g^2 k(s, t) - g (k(s', t) + k(s, t'))]`
/// is averaged over the predecessor states it actually depends on, with
/// `s ~ d*(. | s')` and `t ~ d*(. | t')`:
/// `k* = K + g^2 D K D^T - g (K D^T + D K)`.
pub fn dual_kernel(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    gram: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_gram(gram, mdp.n_states())?;
    let d = backward_conditional(mdp, policy, mu)?;
    let g = mdp.discount();
    let dk = &d * gram;
    let kdt = gram * d.transpose();
    let dkdt = &dk * d.transpose();
    Ok(gram + g * g * dkdt - g * (kdt + dk))
}

#[derive(Debug, Clone)]
pub struct MercerCheck {
    /// Exact kernel loss.
    pub lhs: f64,
    /// `sum_i lambda_i <R V, e_i>_mu^2`.
    pub rhs: f64,
    /// `lambda_max * L_2(V)`.
    pub bound: f64,
    pub lambda_max: f64,
    pub l2: f64,
    pub eigenvalues: Vec<f64>,
}

/// Mercer form of the kernel loss on a finite state set.
///
/// The eigenfunctions are obtained from the symmetric eigendecomposition of
/// `D^{1/2} K D^{1/2}` (`D = diag(mu)`); `e_i = D^{-1/2} u_i` are
/// mu-orthonormal and `<f, e_i>_mu = u_i^T D^{1/2} f`.
pub fn mercer_check(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    gram: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<MercerCheck> {
    let lhs = exact_kernel_loss(mdp, policy, mu, gram, v)?;
    let res = exact_bellman_residual(mdp, policy, v)?;
    let n = mdp.n_states();
    let sqrt_mu: Vec<f64> = mu.as_slice().iter().map(|m| m.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| sqrt_mu[i] * gram[(i, j)] * sqrt_mu[j]);
    let eig = SymmetricEigen::try_new(scaled, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let weighted = DVector::from_fn(n, |s, _| sqrt_mu[s] * res[s]);
    let rhs = (0..n)
        .map(|i| {
            let proj = eig.eigenvectors.column(i).dot(&weighted);
            eig.eigenvalues[i] * proj * proj
        })
        .sum();
    let lambda_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l2 = squared_bellman_error(mdp, policy, mu, v)?;
    Ok(MercerCheck {
        lhs,
        rhs,
        bound: lambda_max * l2,
        lambda_max,
        l2,
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
    })
}

#[derive(Debug, Clone)]
pub struct RkhsCheck {
    pub loss: f64,
    /// `||f*||^2_H` for the witness `f*(.) = E_mu[R V(s) k(s, .)]`.
    pub witness_norm_sq: f64,
    /// `(E_mu[R V(s) f(s)])^2` at the normalized witness `f = f*/||f*||_H`.
    pub attained: f64,
    /// Witness evaluated on the state set.
    pub witness: DVector<f64>,
}

/// RKHS form of the kernel loss: the loss equals the squared RKHS norm of
/// the witness function, and the normalized witness attains the supremum.
pub fn rkhs_witness_check(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    gram: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<RkhsCheck> {
    let loss = exact_kernel_loss(mdp, policy, mu, gram, v)?;
    let res = exact_bellman_residual(mdp, policy, v)?;
    let n = mdp.n_states();
    let mu = mu.as_slice();
    // f* = sum_s c_s k(s, .) with c_s = mu(s) R V(s); ||f*||^2 = c^T K c.
    let coef = DVector::from_fn(n, |s, _| mu[s] * res[s]);
    let witness = gram * &coef;
    let witness_norm_sq = coef.dot(&witness);
    let inner: f64 = (0..n).map(|s| mu[s] * res[s] * witness[s]).sum();
    let attained = if witness_norm_sq > 0.0 {
        inner * inner / witness_norm_sq
    } else {
        0.0
    };
    Ok(RkhsCheck {
        loss,
        witness_norm_sq,
        attained,
        witness,
    })
}

#[derive(Debug, Clone)]
pub struct RgBias {
    /// Monte-Carlo mean of the squared TD error.
    pub empirical_mean: f64,
    pub standard_error: f64,
    pub l2: f64,
    /// `E_mu[Var(r + gamma V(s') | s)]`.
    pub variance_term: f64,
    pub l2_plus_variance: f64,
}

impl RgBias {
    /// Gap between the Monte-Carlo mean and `L_2 + variance`, in standard errors.
    pub fn z_score(&self) -> f64 {
        if self.standard_error == 0.0 {
            if self.empirical_mean == self.l2_plus_variance {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical_mean - self.l2_plus_variance) / self.standard_error
        }
    }
}

/// Exact bootstrap variance `E_{s~mu}[Var_{a, s'}(R(s,a) + gamma V(s'))]`.
pub fn bootstrap_variance(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    v: &DVector<f64>,
) -> Result<f64> {
    check_len("value vector", mdp.n_states(), v.len())?;
    check_len("state distribution", mdp.n_states(), mu.len())?;
    mdp.check_policy(policy)?;
    let g = mdp.discount();
    let mut total = 0.0;
    for (s, &m) in mu.as_slice().iter().enumerate() {
        let (mut mean, mut second) = (0.0, 0.0);
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            for (next, &p) in mdp.next_row(s, a).iter().enumerate() {
                let target = mdp.r(s, a) + g * v[next];
                mean += pa * p * target;
                second += pa * p * target * target;
            }
        }
        total += m * (second - mean * mean);
    }
    Ok(total)
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding leaves acc slightly below 1; fall back to the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Compares the Monte-Carlo mean of the squared TD error against its exact
/// expectation `L_2(V) + E_mu[Var(B^ V(s))]`.
pub fn rg_bias_check(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    mu: &StateDistribution,
    v: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<RgBias> {
    if n_samples < 2 {
        return Err(Error::invalid("rg_bias_check", "need at least two samples"));
    }
    let l2 = squared_bellman_error(mdp, policy, mu, v)?;
    let variance_term = bootstrap_variance(mdp, policy, mu, v)?;
    let mut rng = rng::stream(seed, rng::streams::ORACLE);
    let g = mdp.discount();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let action_row = |s: usize| &policy.probs()[s * mdp.n_actions()..(s + 1) * mdp.n_actions()];
    for _ in 0..n_samples {
        let s = sample_index(mu.as_slice(), rng.random::<f64>());
        let a = sample_index(action_row(s), rng.random::<f64>());
        let next = sample_index(mdp.next_row(s, a), rng.random::<f64>());
        let td = mdp.r(s, a) + g * v[next] - v[s];
        let sq = td * td;
        sum += sq;
        sum_sq += sq * sq;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(RgBias {
        empirical_mean: mean,
        standard_error: (var / n).sqrt(),
        l2,
        variance_term,
        l2_plus_variance: l2 + variance_term,
    })
}

/// Random instances for property tests, verification suites and benches.
pub mod random {
    use super::*;
    use crate::rng::Rng;

    fn simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
        // Normalized exponentials: a flat Dirichlet draw.
        let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    /// Dense random MDP without terminal states; rewards uniform in [-1, 1].
    pub fn mdp(rng: &mut Rng, n_states: usize, n_actions: usize, discount: f64) -> TabularMdp {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend(simplex(rng, n_states));
        }
        let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Normalization leaves row sums within a few ulps of one.
        TabularMdp::with_tolerance(
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            vec![false; n_states],
            1e-12,
        )
        .expect("random mdp is valid")
    }

    pub fn policy(rng: &mut Rng, n_states: usize, n_actions: usize) -> TabularPolicy {
        let probs = (0..n_states).flat_map(|_| simplex(rng, n_actions)).collect();
        TabularPolicy::new(n_states, n_actions, probs).expect("random policy is valid")
    }

    /// Strictly positive distribution, bounded away from zero.
    pub fn distribution(rng: &mut Rng, mdp: &TabularMdp) -> StateDistribution {
        let n = mdp.n_states();
        let raw: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        StateDistribution::new(raw.into_iter().map(|x| x / total).collect(), mdp).expect("positive distribution")
    }

    /// Points in `[0,1]^dim` used to embed tabular states for continuous kernels.
    pub fn embedding(rng: &mut Rng, n_states: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n_states)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    /// Value vector with entries uniform in [-scale, scale].
    pub fn values(rng: &mut Rng, n_states: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n_states, |_, _| rng.random_range(-scale..scale))
    }
}
