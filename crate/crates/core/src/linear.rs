//! Closed-form solutions for linear value functions.
//!
//! With `X` the features of the sampled states, `X'` those of the next states
//! (zero rows for terminal transitions) and `Z = X - gamma X'`:
//!
//! * TD fixed point: `(X^T Z) theta = X^T r`;
//! * kernel-loss minimizer with the linear kernel:
//!   `(Z^T X X^T Z) theta = Z^T X X^T r`.
//!
//! When `X^T Z` is invertible both give the same `theta`.

use nalgebra::{DMatrix, DVector};

use crate::envs::Transition;
use crate::error::{check_len, Error, Result};
use crate::value_fn::FeatureMap;

/// Systems whose condition estimate exceeds this are reported as singular.
pub const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystemBundle {
    pub x: DMatrix<f64>,
    pub x_next: DMatrix<f64>,
    pub r: DVector<f64>,
    pub gamma: f64,
    pub z: DMatrix<f64>,
}

impl LinearSystemBundle {
    pub fn new(x: DMatrix<f64>, x_next: DMatrix<f64>, r: DVector<f64>, gamma: f64) -> Result<Self> {
        check_len("next-state feature rows", x.nrows(), x_next.nrows())?;
        check_len("next-state feature columns", x.ncols(), x_next.ncols())?;
        check_len("reward vector", x.nrows(), r.len())?;
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid(
                "linear bundle",
                "needs at least one sample and one feature",
            ));
        }
        let z = &x - gamma * &x_next;
        Ok(LinearSystemBundle { x, x_next, r, gamma, z })
    }

    /// Terminal transitions contribute a zero next-state feature row.
    pub fn from_transitions(batch: &[Transition], features: &FeatureMap, gamma: f64) -> Result<Self> {
        let d = features.dim();
        let n = batch.len();
        let mut x = DMatrix::zeros(n, d);
        let mut xn = DMatrix::zeros(n, d);
        for (i, t) in batch.iter().enumerate() {
            features.check_state(&t.state)?;
            features.check_state(&t.next_state)?;
            for (j, v) in features.features(&t.state).into_iter().enumerate() {
                x[(i, j)] = v;
            }
            if !t.terminal {
                for (j, v) in features.features(&t.next_state).into_iter().enumerate() {
                    xn[(i, j)] = v;
                }
            }
        }
        let r = DVector::from_iterator(n, batch.iter().map(|t| t.reward));
        Self::new(x, xn, r, gamma)
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// `X^T Z`.
    pub fn td_matrix(&self) -> DMatrix<f64> {
        self.x.transpose() * &self.z
    }

    /// Residuals `delta = r - Z theta`.
    pub fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.r - &self.z * theta
    }

    /// Linear-kernel V-statistic `(1/n^2) ||X^T delta||^2`.
    pub fn neu_loss(&self, theta: &DVector<f64>) -> f64 {
        let n = self.x.nrows() as f64;
        (self.x.transpose() * self.residuals(theta)).norm_squared() / (n * n)
    }
}

/// Ratio of extreme singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Pivoted LU solve with condition and residual checks.
fn checked_solve(a: DMatrix<f64>, b: DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let condition = condition_number(&a);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::Singular { context, condition });
    }
    let theta = a
        .clone()
        .full_piv_lu()
        .solve(&b)
        .ok_or(Error::Singular { context, condition })?;
    let residual = (&a * &theta - &b).norm();
    let scale = a.norm() * theta.norm() + b.norm();
    if !residual.is_finite() || residual > 1e-9 * scale.max(1.0) {
        return Err(Error::Singular { context, condition });
    }
    Ok(theta)
}

/// `theta_TD = (X^T Z)^{-1} X^T r`.
pub fn td_closed_form(bundle: &LinearSystemBundle) -> Result<DVector<f64>> {
    let a = bundle.td_matrix();
    let b = bundle.x.transpose() * &bundle.r;
    checked_solve(a, b, "X^T Z")
}

/// `theta_KBE = (Z^T X X^T Z)^{-1} Z^T X X^T r`.
pub fn kloss_closed_form(bundle: &LinearSystemBundle) -> Result<DVector<f64>> {
    kloss_closed_form_ridge(bundle, 0.0)
}

/// Same with `X X^T` replaced by `X X^T + ridge I`; `ridge = 0` is the plain form.
pub fn kloss_closed_form_ridge(bundle: &LinearSystemBundle, ridge: f64) -> Result<DVector<f64>> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge", format!("must be nonnegative, got {ridge}")));
    }
    let m = bundle.td_matrix();
    let c = bundle.x.transpose() * &bundle.r;
    let mut a = m.transpose() * &m;
    let mut b = m.transpose() * c;
    if ridge > 0.0 {
        a += ridge * bundle.z.transpose() * &bundle.z;
        b += ridge * bundle.z.transpose() * &bundle.r;
    }
    checked_solve(a, b, "Z^T X X^T Z")
}

/// Value function of the empirical MDP estimated from transition counts.
///
/// States are integer indices in `s[0]`. Transitions flagged terminal lead to
/// an absorbing zero-value state. Every state that appears, as a source or as
/// a non-terminal next state, must have at least one outgoing transition.
/// States that never appear get value 0.
pub fn certainty_equivalence(batch: &[Transition], n_states: usize, gamma: f64) -> Result<DVector<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("dataset", "is empty"));
    }
    let idx = |s: &[f64]| -> Result<usize> {
        let v = s[0];
        if s.len() != 1 || v < 0.0 || v.fract() != 0.0 || v as usize >= n_states {
            return Err(Error::invalid(
                "state",
                format!("expected an index in 0..{n_states}, got {s:?}"),
            ));
        }
        Ok(v as usize)
    };
    let mut counts = vec![0.0; n_states];
    let mut next = DMatrix::<f64>::zeros(n_states, n_states);
    let mut reward = vec![0.0; n_states];
    let mut seen = vec![false; n_states];
    for t in batch {
        let s = idx(&t.state)?;
        counts[s] += 1.0;
        reward[s] += t.reward;
        seen[s] = true;
        if !t.terminal {
            let sp = idx(&t.next_state)?;
            next[(s, sp)] += 1.0;
            seen[sp] = true;
        }
    }
    let live: Vec<usize> = (0..n_states).filter(|&s| seen[s]).collect();
    if let Some(&s) = live.iter().find(|&&s| counts[s] == 0.0) {
        return Err(Error::invalid(
            "dataset",
            format!("state {s} is reached but has no outgoing transitions"),
        ));
    }
    let m = live.len();
    let a = DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * next[(live[i], live[j])] / counts[live[i]]
    });
    let b = DVector::from_fn(m, |i, _| reward[live[i]] / counts[live[i]]);
    let x = checked_solve(a, b, "empirical model (I - gamma P)")?;
    let mut v = DVector::zeros(n_states);
    for (i, &s) in live.iter().enumerate() {
        v[s] = x[i];
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect_dataset, make_tvr_chain, Env, EnvKind, SamplingMode};
    use crate::kernels::Kernel;
    use crate::losses::kernel_loss_vstat;
    use crate::rng;
    use crate::tabular::{self, TabularMdp, TabularPolicy};
    use crate::value_fn::{Architecture, ValueFunction};
    use rand::Rng as _;

    fn tr(s: usize, r: f64, sp: usize, terminal: bool) -> Transition {
        Transition {
            state: vec![s as f64],
            action: vec![0.0],
            reward: r,
            next_state: vec![sp as f64],
            terminal,
        }
    }

    fn random_bundle(r: &mut rng::Rng, n: usize, d: usize) -> LinearSystemBundle {
        let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
        let xn = DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
        let rew = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        LinearSystemBundle::new(x, xn, rew, 0.9).unwrap()
    }

    #[test]
    fn scalar_case() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        let xn = DMatrix::from_column_slice(3, 1, &[0.5, 1.0, 3.0]);
        let r = DVector::from_column_slice(&[1.0, 0.0, 2.0]);
        let b = LinearSystemBundle::new(x.clone(), xn.clone(), r.clone(), 0.5).unwrap();
        let z: Vec<f64> = (0..3).map(|i| x[i] - 0.5 * xn[i]).collect();
        let expect = (0..3).map(|i| x[i] * r[i]).sum::<f64>() / (0..3).map(|i| x[i] * z[i]).sum::<f64>();
        assert!((td_closed_form(&b).unwrap()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn random_bundles_agree_and_solve_accurately() {
        let mut r = rng::stream(1, 0);
        for _ in 0..20 {
            let b = random_bundle(&mut r, 40, 5);
            let td = td_closed_form(&b).unwrap();
            let kb = kloss_closed_form(&b).unwrap();
            let res = (b.td_matrix() * &td - b.x.transpose() * &b.r).norm();
            assert!(res <= 1e-10);
            assert!((&td - &kb).norm() <= 1e-8 * td.norm().max(1.0));
        }
    }

    #[test]
    fn neu_form_equals_linear_kernel_vstat() {
        let mut r = rng::stream(2, 0);
        let fm = FeatureMap::Raw { dim: 3 };
        let batch: Vec<Transition> = (0..25)
            .map(|_| Transition {
                state: (0..3).map(|_| r.random::<f64>()).collect(),
                action: vec![0.0],
                reward: r.random(),
                next_state: (0..3).map(|_| r.random::<f64>()).collect(),
                terminal: r.random::<f64>() < 0.2,
            })
            .collect();
        let b = LinearSystemBundle::from_transitions(&batch, &fm, 0.9).unwrap();
        let vf = ValueFunction::init(Architecture::linear(fm.clone()), 0);
        let est = kernel_loss_vstat(&vf, &batch, &Kernel::linear(fm), 0.9).unwrap();
        let theta = DVector::from_column_slice(vf.params());
        assert!((b.neu_loss(&theta) - est.loss).abs() < 1e-12 * est.loss.max(1.0));
    }

    #[test]
    fn one_hot_enumeration_of_deterministic_mdp_recovers_values() {
        let mut p = vec![0.0; 16];
        p[1] = 1.0;
        p[4 + 2] = 1.0;
        p[8 + 3] = 1.0;
        p[12] = 1.0;
        let mdp = TabularMdp::new(4, 1, p, vec![1.0, 2.0, -1.0, 0.5], 0.9, vec![false; 4]).unwrap();
        let v = tabular::solve_value_direct(&mdp, &TabularPolicy::uniform(4, 1)).unwrap();
        let batch: Vec<_> = (0..4).map(|s| tr(s, mdp.r(s, 0), (s + 1) % 4, false)).collect();
        let b = LinearSystemBundle::from_transitions(&batch, &FeatureMap::OneHot { n: 4 }, 0.9).unwrap();
        let td = td_closed_form(&b).unwrap();
        assert!((&td - &v).amax() < 1e-12);
        let ce = certainty_equivalence(&batch, 4, 0.9).unwrap();
        assert!((&ce - &v).amax() < 1e-12);
    }

    #[test]
    fn tvr_full_enumeration_recovers_true_weights() {
        let spec = make_tvr_chain().unwrap();
        // One transition per (s, s') with multiplicity proportional to P(s'|s).
        let mut batch = Vec::new();
        for s in 0..4 {
            for sp in 0..5 {
                let count = (spec.mdp.p(s, 0, sp) * 20.0).round() as usize;
                for _ in 0..count {
                    batch.push(tr(s, spec.mdp.r(s, 0), sp, sp == 4));
                }
            }
        }
        let b = LinearSystemBundle::from_transitions(&batch, &spec.feature_map(), 1.0).unwrap();
        let w = kloss_closed_form(&b).unwrap();
        for (a, e) in w.iter().zip(spec.true_weights.unwrap()) {
            assert!((a - e).abs() < 1e-6, "{w}");
        }
    }

    #[test]
    fn gradient_descent_reaches_closed_form() {
        let env = Env::new(EnvKind::TvrChain).unwrap();
        let spec = env.chain().unwrap().clone();
        let data = collect_dataset(&env, 100, SamplingMode::UniformState, 3).unwrap();
        let b = LinearSystemBundle::from_transitions(&data.transitions, &spec.feature_map(), 1.0).unwrap();
        let w = kloss_closed_form(&b).unwrap();
        let k = Kernel::linear(spec.feature_map());
        let mut vf = ValueFunction::zeros(Architecture::linear(spec.feature_map()));
        for _ in 0..3000 {
            let g = kernel_loss_vstat(&vf, &data.transitions, &k, 1.0).unwrap().grad;
            let next: Vec<f64> = vf.params().iter().zip(&g).map(|(p, g)| p - 2.0 * g).collect();
            vf.set_params(&next).unwrap();
        }
        let got = DVector::from_column_slice(vf.params());
        assert!((got - w).amax() < 1e-4);
    }

    #[test]
    fn empirical_model_matches_one_hot_kernel_solution() {
        let mut r = rng::stream(4, 0);
        let batch: Vec<_> = (0..60)
            .map(|i| {
                tr(
                    i % 3,
                    r.random_range(-1.0..1.0),
                    r.random_range(0..3),
                    r.random::<f64>() < 0.1,
                )
            })
            .collect();
        let ce = certainty_equivalence(&batch, 3, 0.8).unwrap();
        let b = LinearSystemBundle::from_transitions(&batch, &FeatureMap::OneHot { n: 3 }, 0.8).unwrap();
        let kb = kloss_closed_form(&b).unwrap();
        assert!((&ce - &kb).amax() < 1e-8);

        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let ce2 = certainty_equivalence(&doubled, 3, 0.8).unwrap();
        assert!((&ce - &ce2).amax() < 1e-12);
    }

    #[test]
    fn reached_state_without_data_is_rejected() {
        let batch = [tr(0, 1.0, 1, false)];
        assert!(certainty_equivalence(&batch, 2, 0.9).is_err());
    }

    #[test]
    fn singular_system_reports_condition() {
        // Two identical feature columns.
        let x = DMatrix::from_fn(5, 2, |i, _| i as f64 + 1.0);
        let xn = DMatrix::zeros(5, 2);
        let b = LinearSystemBundle::new(x, xn, DVector::from_element(5, 1.0), 0.9).unwrap();
        match td_closed_form(&b) {
            Err(Error::Singular { condition, .. }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected singular, got {other:?}"),
        }
        assert!(kloss_closed_form(&b).is_err());
    }

    #[test]
    fn ridge_is_a_small_perturbation_on_regular_systems() {
        let mut r = rng::stream(6, 0);
        let b = random_bundle(&mut r, 30, 4);
        let plain = kloss_closed_form(&b).unwrap();
        let ridged = kloss_closed_form_ridge(&b, 1e-10).unwrap();
        assert!((plain - ridged).amax() < 1e-6);
    }
}
