//! Small linear-feature chains with known value functions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tabular::{self, StateDistribution, TabularMdp, TabularPolicy};
use crate::value_fn::FeatureMap;

/// Tabular MDP together with a linear feature table.
#[derive(Debug, Clone)]
pub struct LinearChainSpec {
    pub mdp: TabularMdp,
    pub policy: TabularPolicy,
    /// Row `s` is `phi(s)`.
    pub features: Vec<Vec<f64>>,
    /// Weights with `Phi w* = V^pi`, when the chain is realizable.
    pub true_weights: Option<Vec<f64>>,
    /// Off-policy sampling distribution used for datasets.
    pub mu: StateDistribution,
}

impl LinearChainSpec {
    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap::Table {
            rows: self.features.clone(),
        }
    }

    pub fn feature_matrix(&self) -> DMatrix<f64> {
        let d = self.features[0].len();
        DMatrix::from_fn(self.features.len(), d, |i, j| self.features[i][j])
    }

    pub fn true_values(&self) -> Result<DVector<f64>> {
        tabular::solve_value_direct(&self.mdp, &self.policy)
    }

    /// `max_s |phi(s) . w* - V^pi(s)|`.
    pub fn realizability_gap(&self) -> Result<f64> {
        let w = self
            .true_weights
            .as_ref()
            .ok_or_else(|| Error::invalid("chain", "no true weights"))?;
        let v = tabular::solve_value_function(&self.mdp, &self.policy, 1e-13)?;
        let fitted = self.feature_matrix() * DVector::from_column_slice(w);
        Ok((fitted - v).amax())
    }
}

/// Optimal weights of the stochastic Tsitsiklis–Van Roy style chain.
pub const TVR_WEIGHTS: [f64; 3] = [0.8, 1.0, 0.0];
/// Probability that the last state of the chain exits to the terminal state.
pub const TVR_EXIT: f64 = 0.1;

/// Stochastic 4+1-state chain with three linear features and `gamma = 1`.
///
/// ```text
///   s0 [1,0,0] --0.5--> s1 [0,1,0] --1.0--> T
///      |--------0.5--> s2 [0,0,1] --1.0--> s3 [0,0,2] --0.9--> s3
///                                                 |----0.1--> T
/// ```
///
/// The leftmost state `s0` has value `w1` and the bottom-right state `s3`
/// has value `2 w3`. Rewards are solved from `V = Phi w*` with
/// `w* = [0.8, 1.0, 0]`, so the chain is realizable by construction. Under
/// uniform sampling over the non-terminal states the expected TD(0) update of
/// `w3` is `+0.15 w3`, so fixed-point methods diverge along `w3`.
pub fn make_tvr_chain() -> Result<LinearChainSpec> {
    const N: usize = 5;
    const T: usize = 4;
    let features = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.0, 0.0, 2.0],
        vec![0.0, 0.0, 0.0],
    ];
    let mut p = vec![0.0; N * N];
    p[1] = 0.5;
    p[2] = 0.5;
    p[N + T] = 1.0;
    p[2 * N + 3] = 1.0;
    p[3 * N + 3] = 1.0 - TVR_EXIT;
    p[3 * N + T] = TVR_EXIT;
    p[T * N + T] = 1.0;

    // V = Phi w*; with gamma = 1 the reward of s is V(s) - sum_s' P(s'|s) V(s').
    let v: Vec<f64> = features
        .iter()
        .map(|phi| phi.iter().zip(TVR_WEIGHTS).map(|(a, b)| a * b).sum())
        .collect();
    let mut reward = vec![0.0; N];
    for s in 0..T {
        let next: f64 = (0..N).map(|t| p[s * N + t] * v[t]).sum();
        reward[s] = v[s] - next;
    }
    let mut terminal = vec![false; N];
    terminal[T] = true;
    let mdp = TabularMdp::new(N, 1, p, reward, 1.0, terminal)?;
    let mu = StateDistribution::new(vec![0.25, 0.25, 0.25, 0.25, 0.0], &mdp)?;
    let spec = LinearChainSpec {
        policy: TabularPolicy::uniform(N, 1),
        mdp,
        features,
        true_weights: Some(TVR_WEIGHTS.to_vec()),
        mu,
    };
    let gap = spec.realizability_gap()?;
    if gap > 1e-8 {
        return Err(Error::invalid("tvr chain", format!("realizability gap {gap:e}")));
    }
    Ok(spec)
}

/// Discount of the star counterexample.
pub const BAIRD_DISCOUNT: f64 = 0.99;

/// Baird's seven-state star with eight features.
///
/// States `0..6` have `phi = 2 e_i + e_7`; state 6 has `phi = e_6 + 2 e_7`.
/// The target policy moves every state to state 6 with zero reward, so
/// `V^pi = 0`; data is sampled uniformly over the seven states.
pub fn make_baird_star() -> Result<LinearChainSpec> {
    const N: usize = 7;
    let mut features = vec![vec![0.0; 8]; N];
    for (s, phi) in features.iter_mut().enumerate().take(6) {
        phi[s] = 2.0;
        phi[7] = 1.0;
    }
    features[6][6] = 1.0;
    features[6][7] = 2.0;
    let mut p = vec![0.0; N * N];
    for s in 0..N {
        p[s * N + 6] = 1.0;
    }
    let mdp = TabularMdp::new(N, 1, p, vec![0.0; N], BAIRD_DISCOUNT, vec![false; N])?;
    Ok(LinearChainSpec {
        policy: TabularPolicy::uniform(N, 1),
        mu: StateDistribution::uniform(N),
        mdp,
        features,
        true_weights: Some(vec![0.0; 8]),
    })
}

/// Conventional starting weights for the star: all ones except `w_6 = 10`.
pub fn baird_initial_weights() -> Vec<f64> {
    let mut w = vec![1.0; 8];
    w[6] = 10.0;
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tvr_realizable_with_stated_weights() {
        let spec = make_tvr_chain().unwrap();
        let v = tabular::solve_value_function(&spec.mdp, &spec.policy, 1e-13).unwrap();
        let fitted = spec.feature_matrix() * DVector::from_column_slice(&TVR_WEIGHTS);
        assert!((fitted - &v).amax() < 1e-8);
        assert_eq!(v[4], 0.0);
        assert!((v[0] - 0.8).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        assert!(spec.realizability_gap().unwrap() <= 1e-8);
    }

    #[test]
    fn baird_values_are_zero() {
        let spec = make_baird_star().unwrap();
        let v = spec.true_values().unwrap();
        assert!(v.amax() == 0.0);
    }
}
