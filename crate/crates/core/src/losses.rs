//! Trainable objectives: the kernel loss (V- and U-statistics), residual
//! gradient, fitted value iteration and TD(0), plus evaluation metrics.
//!
//! All losses work on a batch of transitions through the TD residual
//! `delta_i = r_i + gamma (1 - terminal_i) V(s'_i) - V(s_i)`.

use nalgebra::DMatrix;

use crate::envs::Transition;
use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::kernels::Kernel;
use crate::value_fn::{value_at, FeatureMap, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    VStat,
    UStat,
    /// Plain average of per-sample terms (RG, FVI).
    SampleMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub estimator: Estimator,
    pub batch_size: usize,
}

/// Loss identifiers accepted by the trainer and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    KlossV,
    KlossU,
    Rg,
    Fvi,
    Td0,
}

impl LossKind {
    pub const NAMES: [&'static str; 5] = ["kloss-v", "kloss-u", "rg", "fvi", "td0"];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::KlossV => "kloss-v",
            LossKind::KlossU => "kloss-u",
            LossKind::Rg => "rg",
            LossKind::Fvi => "fvi",
            LossKind::Td0 => "td0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kloss-v" => Some(LossKind::KlossV),
            "kloss-u" => Some(LossKind::KlossU),
            "rg" => Some(LossKind::Rg),
            "fvi" => Some(LossKind::Fvi),
            "td0" => Some(LossKind::Td0),
            _ => None,
        }
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, LossKind::KlossV | LossKind::KlossU)
    }
}

/// Residuals `delta_i` and their parameter gradients
/// `grad delta_i = gamma (1 - terminal_i) grad V(s'_i) - grad V(s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TDResidualBatch {
    pub residuals: Vec<f64>,
    /// Row `i` is `grad delta_i`.
    pub grads: Vec<Vec<f64>>,
}

fn check_batch(vf: &ValueFunction, batch: &[Transition], min: usize) -> Result<()> {
    if batch.len() < min {
        return Err(Error::invalid(
            "batch",
            format!("needs at least {min} transitions, got {}", batch.len()),
        ));
    }
    for t in batch {
        vf.check_state(&t.state)?;
        vf.check_state(&t.next_state)?;
    }
    Ok(())
}

#[inline]
fn bootstrap(t: &Transition, gamma: f64) -> f64 {
    if t.terminal {
        0.0
    } else {
        gamma
    }
}

pub fn td_residuals(vf: &ValueFunction, batch: &[Transition], gamma: f64, exec: Execution) -> Result<TDResidualBatch> {
    check_batch(vf, batch, 1)?;
    let rows = exec.map(batch.len(), |i| {
        let t = &batch[i];
        let now = vf.value_and_grad(&t.state);
        let g = bootstrap(t, gamma);
        if g == 0.0 {
            let grad = now.grad.iter().map(|x| -x).collect();
            return (t.reward - now.value, grad);
        }
        let next = vf.value_and_grad(&t.next_state);
        let grad = next.grad.iter().zip(&now.grad).map(|(a, b)| g * a - b).collect();
        (t.reward + g * next.value - now.value, grad)
    });
    let (residuals, grads) = rows.into_iter().unzip();
    Ok(TDResidualBatch { residuals, grads })
}

/// Residuals only.
pub fn td_errors(vf: &ValueFunction, batch: &[Transition], gamma: f64, exec: Execution) -> Vec<f64> {
    exec.map(batch.len(), |i| {
        let t = &batch[i];
        let g = bootstrap(t, gamma);
        let next = if g == 0.0 { 0.0 } else { vf.value(&t.next_state) };
        t.reward + g * next - vf.value(&t.state)
    })
}

/// `sum_j w_j grad_j`, accumulated in index order.
fn weighted_grad_sum(grads: &[Vec<f64>], weights: &[f64], scale: f64, n_params: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_params];
    for (g, &w) in grads.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(g) {
            *o += w * x;
        }
    }
    for o in &mut out {
        *o *= scale;
    }
    out
}

/// `(G delta)_i` row by row; each row is summed sequentially in `j`.
fn gram_times(gram: &DMatrix<f64>, delta: &[f64], skip_diagonal: bool, exec: Execution) -> Vec<f64> {
    let n = delta.len();
    exec.map(n, |i| {
        let mut acc = 0.0;
        for j in 0..n {
            if skip_diagonal && i == j {
                continue;
            }
            acc += gram[(i, j)] * delta[j];
        }
        acc
    })
}

/// `G delta` for `G = Phi Phi^T` without forming `G`: `O(n d)` instead of `O(n^2)`.
fn factored_gram_times(features: &FeatureMap, states: &[&[f64]], delta: &[f64], skip_diag: bool) -> Vec<f64> {
    let phis: Vec<Vec<f64>> = states.iter().map(|s| features.features(s)).collect();
    let mut proj = vec![0.0; features.dim()];
    for (phi, d) in phis.iter().zip(delta) {
        for (p, f) in proj.iter_mut().zip(phi) {
            *p += d * f;
        }
    }
    phis.iter()
        .zip(delta)
        .map(|(phi, d)| {
            let full: f64 = phi.iter().zip(&proj).map(|(f, p)| f * p).sum();
            if skip_diag {
                full - d * phi.iter().map(|f| f * f).sum::<f64>()
            } else {
                full
            }
        })
        .collect()
}

fn kernel_loss(
    vf: &ValueFunction,
    batch: &[Transition],
    kernel: &Kernel,
    gamma: f64,
    estimator: Estimator,
    exec: Execution,
) -> Result<LossEstimate> {
    let min = if estimator == Estimator::UStat { 2 } else { 1 };
    check_batch(vf, batch, min)?;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let td = td_residuals(vf, batch, gamma, exec)?;
    let n = batch.len() as f64;
    let norm = match estimator {
        Estimator::UStat => 1.0 / (n * (n - 1.0)),
        _ => 1.0 / (n * n),
    };
    let skip_diag = estimator == Estimator::UStat;
    let g_delta = match kernel {
        Kernel::Linear { features } if features.dim() < batch.len() => {
            for s in &states {
                features.check_state(s)?;
            }
            factored_gram_times(features, &states, &td.residuals, skip_diag)
        }
        _ => {
            let gram = kernel.gram_matrix_with(&states, exec)?;
            gram_times(&gram, &td.residuals, skip_diag, exec)
        }
    };
    let quad: f64 = td.residuals.iter().zip(&g_delta).map(|(d, gd)| d * gd).sum();
    let grad = weighted_grad_sum(&td.grads, &g_delta, 2.0 * norm, vf.n_params());
    Ok(LossEstimate {
        loss: quad * norm,
        grad,
        estimator,
        batch_size: batch.len(),
    })
}

/// `(1/n^2) sum_ij k(s_i, s_j) delta_i delta_j` with gradient
/// `(2/n^2) sum_ij k(s_i, s_j) delta_i grad delta_j`.
pub fn kernel_loss_vstat(
    vf: &ValueFunction,
    batch: &[Transition],
    kernel: &Kernel,
    gamma: f64,
) -> Result<LossEstimate> {
    kernel_loss(vf, batch, kernel, gamma, Estimator::VStat, Execution::default())
}

pub fn kernel_loss_vstat_with(
    vf: &ValueFunction,
    batch: &[Transition],
    kernel: &Kernel,
    gamma: f64,
    exec: Execution,
) -> Result<LossEstimate> {
    kernel_loss(vf, batch, kernel, gamma, Estimator::VStat, exec)
}

/// Diagonal-free version normalized by `1/(n(n-1))`; unbiased, may be negative.
pub fn kernel_loss_ustat(
    vf: &ValueFunction,
    batch: &[Transition],
    kernel: &Kernel,
    gamma: f64,
) -> Result<LossEstimate> {
    kernel_loss(vf, batch, kernel, gamma, Estimator::UStat, Execution::default())
}

pub fn kernel_loss_ustat_with(
    vf: &ValueFunction,
    batch: &[Transition],
    kernel: &Kernel,
    gamma: f64,
    exec: Execution,
) -> Result<LossEstimate> {
    kernel_loss(vf, batch, kernel, gamma, Estimator::UStat, exec)
}

/// Mean squared TD error; the gradient flows through both `V(s)` and `V(s')`.
pub fn rg_loss(vf: &ValueFunction, batch: &[Transition], gamma: f64) -> Result<LossEstimate> {
    let td = td_residuals(vf, batch, gamma, Execution::default())?;
    let n = batch.len() as f64;
    let loss = td.residuals.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = weighted_grad_sum(&td.grads, &td.residuals, 2.0 / n, vf.n_params());
    Ok(LossEstimate {
        loss,
        grad,
        estimator: Estimator::SampleMean,
        batch_size: batch.len(),
    })
}

/// Regression onto targets `y_i = r_i + gamma V_target(s'_i)` computed from
/// frozen parameters; the gradient passes through `V(s_i)` only.
pub fn fvi_step_loss(
    vf: &ValueFunction,
    target_params: &[f64],
    batch: &[Transition],
    gamma: f64,
) -> Result<LossEstimate> {
    check_len("target parameters", vf.n_params(), target_params.len())?;
    check_batch(vf, batch, 1)?;
    let arch = vf.arch();
    let rows = Execution::default().map(batch.len(), |i| {
        let t = &batch[i];
        let g = bootstrap(t, gamma);
        let y = t.reward
            + if g == 0.0 {
                0.0
            } else {
                g * value_at(arch, target_params, &t.next_state)
            };
        let now = vf.value_and_grad(&t.state);
        (now.value - y, now.grad)
    });
    let n = batch.len() as f64;
    let (errs, grads): (Vec<f64>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let loss = errs.iter().map(|e| e * e).sum::<f64>() / n;
    let grad = weighted_grad_sum(&grads, &errs, 2.0 / n, vf.n_params());
    Ok(LossEstimate {
        loss,
        grad,
        estimator: Estimator::SampleMean,
        batch_size: batch.len(),
    })
}

/// Semi-gradient step `theta + lr * delta * grad V(s)`.
pub fn td0_update(vf: &ValueFunction, t: &Transition, gamma: f64, lr: f64) -> Result<Vec<f64>> {
    vf.check_state(&t.state)?;
    vf.check_state(&t.next_state)?;
    let now = vf.value_and_grad(&t.state);
    let g = bootstrap(t, gamma);
    let next = if g == 0.0 { 0.0 } else { vf.value(&t.next_state) };
    let delta = t.reward + g * next - now.value;
    Ok(vf
        .params()
        .iter()
        .zip(&now.grad)
        .map(|(p, d)| p + lr * delta * d)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    /// Mean squared TD error on the batch: a biased proxy for the squared
    /// Bellman error.
    pub empirical_bellman: f64,
}

/// `mean (V(s) - V*(s))^2` over `eval_states`.
pub fn mse(vf: &ValueFunction, eval_states: &[Vec<f64>], oracle: &[f64], exec: Execution) -> Result<f64> {
    check_len("oracle values", eval_states.len(), oracle.len())?;
    if eval_states.is_empty() {
        return Err(Error::invalid("evaluation set", "is empty"));
    }
    let v = vf.batched_values(eval_states, exec);
    Ok(v.iter().zip(oracle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64)
}

pub fn empirical_bellman(vf: &ValueFunction, batch: &[Transition], gamma: f64, exec: Execution) -> f64 {
    let d = td_errors(vf, batch, gamma, exec);
    d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64
}

pub fn metrics(
    vf: &ValueFunction,
    oracle: &[f64],
    eval_states: &[Vec<f64>],
    batch: &[Transition],
    gamma: f64,
) -> Result<Metrics> {
    check_batch(vf, batch, 1)?;
    let exec = Execution::default();
    Ok(Metrics {
        mse: mse(vf, eval_states, oracle, exec)?,
        empirical_bellman: empirical_bellman(vf, batch, gamma, exec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, make_baird_star, make_tvr_chain, EnvKind, SamplingMode};
    use crate::kernels::Kernel;
    use crate::rng;
    use crate::tabular::{self, TabularMdp, TabularPolicy};
    use crate::value_fn::{l2_norm, Activation, Architecture, FeatureMap};
    use rand::Rng as _;

    fn tr(s: f64, r: f64, sp: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![s],
            action: vec![0.0],
            reward: r,
            next_state: vec![sp],
            terminal,
        }
    }

    #[test]
    fn factored_linear_kernel_matches_pairwise_sum() {
        let mut r = rng::stream(31, 0);
        let batch = random_batch(&mut r, 40, 3);
        let fm = FeatureMap::Raw { dim: 3 };
        let vf = ValueFunction::new(Architecture::linear(fm.clone()), vec![0.3, -1.2, 0.7]).unwrap();
        let kernel = Kernel::linear(fm);
        let delta = td_errors(&vf, &batch, 0.9, Execution::default());
        for (est, skip) in [(Estimator::VStat, false), (Estimator::UStat, true)] {
            let mut quad = 0.0;
            for i in 0..batch.len() {
                for j in 0..batch.len() {
                    if !(skip && i == j) {
                        quad += kernel.eval(&batch[i].state, &batch[j].state) * delta[i] * delta[j];
                    }
                }
            }
            let n = batch.len() as f64;
            let expect = if skip { quad / (n * (n - 1.0)) } else { quad / (n * n) };
            let got = kernel_loss(&vf, &batch, &kernel, 0.9, est, Execution::default()).unwrap();
            assert!((got.loss - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
    }

    fn random_batch(r: &mut rng::Rng, n: usize, dim: usize) -> Vec<Transition> {
        (0..n)
            .map(|_| Transition {
                state: (0..dim).map(|_| r.random::<f64>()).collect(),
                action: vec![0.0],
                reward: r.random_range(-1.0..1.0),
                next_state: (0..dim).map(|_| r.random::<f64>()).collect(),
                terminal: r.random::<f64>() < 0.1,
            })
            .collect()
    }

    #[test]
    fn vstat_single_sample_collapses() {
        let vf = ValueFunction::new(Architecture::linear(FeatureMap::Raw { dim: 1 }), vec![0.5]).unwrap();
        let batch = [tr(1.0, 2.0, 3.0, false)];
        let k = Kernel::gaussian(0.5).unwrap();
        let est = kernel_loss_vstat(&vf, &batch, &k, 0.9).unwrap();
        let delta = 2.0 + 0.9 * 1.5 - 0.5;
        assert!((est.loss - delta * delta).abs() < 1e-14);
        let grad_delta = 0.9 * 3.0 - 1.0;
        assert!((est.grad[0] - 2.0 * delta * grad_delta).abs() < 1e-14);
    }

    #[test]
    fn ustat_pair_and_constant_cases() {
        let vf = ValueFunction::zeros(Architecture::linear(FeatureMap::Raw { dim: 1 }));
        let k = Kernel::gaussian(1.0).unwrap();
        let batch = [tr(0.0, 1.5, 0.0, true), tr(1.0, -2.0, 0.0, true)];
        let est = kernel_loss_ustat(&vf, &batch, &k, 0.9).unwrap();
        assert!((est.loss - (-1.0f64).exp() * 1.5 * -2.0).abs() < 1e-14);
        assert!(kernel_loss_ustat(&vf, &batch[..1], &k, 0.9).is_err());

        // Constant kernel (all states equal) and constant residual c: loss c^2.
        let batch: Vec<_> = (0..7).map(|_| tr(0.0, 0.7, 0.0, true)).collect();
        let est = kernel_loss_ustat(&vf, &batch, &k, 0.9).unwrap();
        assert!((est.loss - 0.49).abs() < 1e-14);
    }

    #[test]
    fn v_minus_u_matches_direct_sums() {
        let mut r = rng::stream(11, 0);
        let batch = random_batch(&mut r, 9, 2);
        let vf = ValueFunction::init(Architecture::linear(FeatureMap::Raw { dim: 2 }), 1);
        let k = Kernel::gaussian(0.3).unwrap();
        let v = kernel_loss_vstat(&vf, &batch, &k, 0.8).unwrap().loss;
        let u = kernel_loss_ustat(&vf, &batch, &k, 0.8).unwrap().loss;
        let d = td_errors(&vf, &batch, 0.8, Execution::Sequential);
        let n = 9.0;
        let mut diag = 0.0;
        let mut off = 0.0;
        for i in 0..9 {
            for j in 0..9 {
                let term = k.eval(&batch[i].state, &batch[j].state) * d[i] * d[j];
                if i == j {
                    diag += term;
                } else {
                    off += term;
                }
            }
        }
        let expect = diag / (n * n) + (1.0 / (n * n) - 1.0 / (n * (n - 1.0))) * off;
        assert!((v - u - expect).abs() < 1e-14);
    }

    #[test]
    fn exact_enumeration_at_true_values_gives_zero_loss() {
        // One transition per (s, s') pair weighted by mu(s) P(s'|s) reproduces
        // the exact double sum when transitions are deterministic.
        let mut p = vec![0.0; 9];
        p[1] = 1.0;
        p[5] = 1.0;
        p[6] = 1.0;
        let mdp = TabularMdp::new(3, 1, p, vec![1.0, -0.5, 2.0], 0.9, vec![false; 3]).unwrap();
        let pol = TabularPolicy::uniform(3, 1);
        let v = tabular::solve_value_direct(&mdp, &pol).unwrap();
        let vf = ValueFunction::new(Architecture::linear(FeatureMap::OneHot { n: 3 }), v.as_slice().to_vec()).unwrap();
        let batch: Vec<_> = (0..3)
            .map(|s| {
                let sp = (0..3).find(|&t| mdp.p(s, 0, t) == 1.0).unwrap();
                tr(s as f64, mdp.r(s, 0), sp as f64, false)
            })
            .collect();
        let k = Kernel::gaussian(1.0).unwrap();
        assert!(kernel_loss_vstat(&vf, &batch, &k, 0.9).unwrap().loss.abs() < 1e-10);
    }

    #[test]
    fn vstat_is_nonnegative_and_parallel_is_bitwise_sequential() {
        let mut r = rng::stream(5, 0);
        let arch = Architecture::mlp(3, &[16], Activation::Tanh).unwrap();
        for trial in 0..20 {
            let batch = random_batch(&mut r, 40, 3);
            let vf = ValueFunction::init(arch.clone(), trial);
            let k = Kernel::gaussian(0.2).unwrap();
            let a = kernel_loss_vstat_with(&vf, &batch, &k, 0.95, Execution::Sequential).unwrap();
            let b = kernel_loss_vstat_with(&vf, &batch, &k, 0.95, Execution::Parallel).unwrap();
            assert!(a.loss >= -1e-12);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rg_two_transition_hand_algebra() {
        // V(s) = w s, w = 2; gamma = 0.5.
        // t1: s=1, r=1, s'=2 -> delta = 1 + 2 - 2 = 1, grad delta = 0.5*2 - 1 = 0
        // t2: s=2, r=0, s'=1 -> delta = 0 + 1 - 4 = -3, grad delta = 0.5 - 2 = -1.5
        // loss = (1 + 9)/2 = 5, grad = (2/2)(1*0 + (-3)(-1.5)) = 4.5
        let vf = ValueFunction::new(Architecture::linear(FeatureMap::Raw { dim: 1 }), vec![2.0]).unwrap();
        let est = rg_loss(&vf, &[tr(1.0, 1.0, 2.0, false), tr(2.0, 0.0, 1.0, false)], 0.5).unwrap();
        assert!((est.loss - 5.0).abs() < 1e-14);
        assert!((est.grad[0] - 4.5).abs() < 1e-14);
    }

    #[test]
    fn zero_residual_gives_zero_loss_and_grad() {
        let vf = ValueFunction::zeros(Architecture::linear(FeatureMap::Raw { dim: 1 }));
        let batch = [tr(0.3, 0.0, 0.6, false), tr(0.1, 0.0, 0.2, true)];
        let est = rg_loss(&vf, &batch, 0.9).unwrap();
        assert_eq!((est.loss, est.grad.clone()), (0.0, vec![0.0]));
        let est = fvi_step_loss(&vf, vf.params(), &batch, 0.9).unwrap();
        assert_eq!(est.grad, vec![0.0]);
        assert_eq!(td0_update(&vf, &batch[0], 0.9, 0.1).unwrap(), vec![0.0]);
    }

    #[test]
    fn fvi_gradient_is_least_squares_gradient() {
        let mut r = rng::stream(2, 0);
        let batch = random_batch(&mut r, 30, 3);
        let arch = Architecture::linear(FeatureMap::Raw { dim: 3 });
        let vf = ValueFunction::init(arch.clone(), 4);
        let target = ValueFunction::init(arch, 5);
        let est = fvi_step_loss(&vf, target.params(), &batch, 0.9).unwrap();
        // grad = (2/n) X^T (X theta - y)
        let n = batch.len();
        let x = DMatrix::from_fn(n, 3, |i, j| batch[i].state[j]);
        let y = nalgebra::DVector::from_fn(n, |i, _| {
            let t = &batch[i];
            t.reward
                + if t.terminal {
                    0.0
                } else {
                    0.9 * target.value(&t.next_state)
                }
        });
        let theta = nalgebra::DVector::from_column_slice(vf.params());
        let g = x.transpose() * (&x * theta - y) * (2.0 / n as f64);
        for j in 0..3 {
            assert!((g[j] - est.grad[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn fvi_gradient_ignores_next_state_path() {
        let mut r = rng::stream(3, 0);
        let batch = random_batch(&mut r, 25, 2);
        let vf = ValueFunction::init(Architecture::mlp(2, &[8], Activation::Tanh).unwrap(), 3);
        let fvi = fvi_step_loss(&vf, vf.params(), &batch, 0.9).unwrap();
        let rg = rg_loss(&vf, &batch, 0.9).unwrap();
        // Same loss value at target = theta, different gradients.
        assert!((fvi.loss - rg.loss).abs() < 1e-12);
        assert!(l2_norm(&fvi.grad.iter().zip(&rg.grad).map(|(a, b)| a - b).collect::<Vec<_>>()) > 1e-6);
        // Equals the RG gradient with the gamma grad V(s') term dropped.
        let mut manual = vec![0.0; vf.n_params()];
        let d = td_errors(&vf, &batch, 0.9, Execution::Sequential);
        for (t, di) in batch.iter().zip(&d) {
            let g = vf.value_and_grad(&t.state).grad;
            for (m, gi) in manual.iter_mut().zip(g) {
                *m -= 2.0 / 25.0 * di * gi;
            }
        }
        for (a, b) in manual.iter().zip(&fvi.grad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tabular_td0_updates_one_cell() {
        let vf = ValueFunction::new(
            Architecture::linear(FeatureMap::OneHot { n: 4 }),
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let t = tr(1.0, 0.5, 3.0, false);
        let out = td0_update(&vf, &t, 0.9, 0.1).unwrap();
        let delta = 0.5 + 0.9 * 4.0 - 2.0;
        assert_eq!(out, vec![1.0, 2.0 + 0.1 * delta, 3.0, 4.0]);
    }

    #[test]
    fn td0_diverges_on_baird_star() {
        let spec = make_baird_star().unwrap();
        let env = envs::Env::new(EnvKind::BairdStar).unwrap();
        let data = envs::collect_dataset(&env, 5000, SamplingMode::UniformState, 0).unwrap();
        let w0 = envs::chain::baird_initial_weights();
        let mut vf = ValueFunction::new(Architecture::linear(spec.feature_map()), w0.clone()).unwrap();
        let mut blew_up = false;
        for t in &data.transitions {
            let w = td0_update(&vf, t, spec.mdp.discount(), 0.01).unwrap();
            vf.set_params(&w).unwrap();
            if l2_norm(&w) > 10.0 * l2_norm(&w0) {
                blew_up = true;
                break;
            }
        }
        assert!(blew_up);
    }

    #[test]
    fn kernel_gradient_vanishes_at_zero_function_on_baird() {
        let spec = make_baird_star().unwrap();
        let env = envs::Env::new(EnvKind::BairdStar).unwrap();
        let data = envs::collect_dataset(&env, 200, SamplingMode::UniformState, 0).unwrap();
        let vf = ValueFunction::zeros(Architecture::linear(spec.feature_map()));
        let k = Kernel::linear(spec.feature_map());
        let est = kernel_loss_vstat(&vf, &data.transitions, &k, spec.mdp.discount()).unwrap();
        assert_eq!(est.loss, 0.0);
        assert!(est.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn metrics_zero_at_oracle() {
        let spec = make_tvr_chain().unwrap();
        let vf = ValueFunction::new(
            Architecture::linear(spec.feature_map()),
            spec.true_weights.clone().unwrap(),
        )
        .unwrap();
        let states: Vec<Vec<f64>> = (0..4).map(|s| vec![s as f64]).collect();
        let v = spec.true_values().unwrap();
        let oracle: Vec<f64> = (0..4).map(|s| v[s]).collect();
        // The chain is deterministic from s1 and s2, so their TD errors vanish.
        let batch = [
            tr(1.0, spec.mdp.r(1, 0), 4.0, true),
            tr(2.0, spec.mdp.r(2, 0), 3.0, false),
        ];
        let m = metrics(&vf, &oracle, &states, &batch, 1.0).unwrap();
        assert!(m.mse < 1e-20);
        assert!(m.empirical_bellman < 1e-20);
    }

    #[test]
    fn metrics_match_loops() {
        let mut r = rng::stream(8, 0);
        let batch = random_batch(&mut r, 20, 2);
        let vf = ValueFunction::init(Architecture::mlp(2, &[6], Activation::Relu).unwrap(), 2);
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.next_state.clone()).collect();
        let oracle: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let m = metrics(&vf, &oracle, &states, &batch, 0.9).unwrap();
        let mut mse_loop = 0.0;
        let mut bell = 0.0;
        for i in 0..20 {
            mse_loop += (vf.value(&states[i]) - oracle[i]).powi(2) / 20.0;
            let t = &batch[i];
            let next = if t.terminal { 0.0 } else { 0.9 * vf.value(&t.next_state) };
            bell += (t.reward + next - vf.value(&t.state)).powi(2) / 20.0;
        }
        assert!((m.mse - mse_loop).abs() < 1e-12);
        assert!((m.empirical_bellman - bell).abs() < 1e-12);
    }

    #[test]
    fn loss_names_round_trip() {
        for name in LossKind::NAMES {
            assert_eq!(LossKind::parse(name).unwrap().name(), name);
        }
        assert!(LossKind::parse("gtd2").is_none());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::value_fn::Architecture;
    use proptest::prelude::*;

    fn batch(d: usize) -> impl Strategy<Value = Vec<Transition>> {
        let t = (
            prop::collection::vec(-1.0f64..1.0, d),
            -1.0f64..1.0,
            prop::collection::vec(-1.0f64..1.0, d),
            prop::bool::weighted(0.1),
        )
            .prop_map(|(state, reward, next_state, terminal)| Transition {
                state,
                action: vec![0.0],
                reward,
                next_state,
                terminal,
            });
        prop::collection::vec(t, 2..20)
    }

    fn linear_vf(theta: Vec<f64>) -> ValueFunction {
        ValueFunction::new(Architecture::linear(FeatureMap::Raw { dim: theta.len() }), theta).unwrap()
    }

    proptest! {
        #[test]
        fn vstat_nonnegative_and_ustat_consistent(
            b in batch(2),
            theta in prop::collection::vec(-2.0f64..2.0, 2),
            length in 0.2f64..2.0,
            gamma in 0.0f64..1.0,
        ) {
            let vf = linear_vf(theta);
            let k = Kernel::gaussian_length_scale(length).unwrap();
            let v = kernel_loss_vstat(&vf, &b, &k, gamma).unwrap();
            let u = kernel_loss_ustat(&vf, &b, &k, gamma).unwrap();
            prop_assert!(v.loss >= -1e-12);
            // n^2 V = n(n-1) U + sum_i k(s_i, s_i) delta_i^2, with k(s, s) = 1.
            let n = b.len() as f64;
            let diag: f64 = td_errors(&vf, &b, gamma, Execution::Sequential).iter().map(|d| d * d).sum();
            let lhs = n * n * v.loss;
            let rhs = n * (n - 1.0) * u.loss + diag;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn factored_linear_kernel_matches_dense(
            b in batch(2),
            theta in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let vf = linear_vf(theta);
            let feats = FeatureMap::Raw { dim: 2 };
            let fast = kernel_loss_vstat(&vf, &b, &Kernel::linear(feats.clone()), 0.9).unwrap();
            let states: Vec<&[f64]> = b.iter().map(|t| t.state.as_slice()).collect();
            let gram = Kernel::linear(feats).gram_matrix(&states).unwrap();
            let delta = td_errors(&vf, &b, 0.9, Execution::Sequential);
            let n = b.len() as f64;
            let mut dense = 0.0;
            for i in 0..b.len() {
                for j in 0..b.len() {
                    dense += gram[(i, j)] * delta[i] * delta[j];
                }
            }
            dense /= n * n;
            prop_assert!((fast.loss - dense).abs() <= 1e-10 * dense.abs().max(1.0));
        }

        #[test]
        fn losses_bitwise_identical_across_execution(
            b in batch(3),
            theta in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let vf = linear_vf(theta);
            let k = Kernel::gaussian_length_scale(0.5).unwrap();
            let s = kernel_loss_vstat_with(&vf, &b, &k, 0.95, Execution::Sequential).unwrap();
            let p = kernel_loss_vstat_with(&vf, &b, &k, 0.95, Execution::Parallel).unwrap();
            prop_assert_eq!(s, p);
        }

        #[test]
        fn rg_loss_is_mean_squared_td_error(
            b in batch(2),
            theta in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let vf = linear_vf(theta);
            let rg = rg_loss(&vf, &b, 0.9).unwrap();
            let d = td_errors(&vf, &b, 0.9, Execution::Sequential);
            let mean = d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
            prop_assert!((rg.loss - mean).abs() <= 1e-12 * mean.max(1.0));
        }
    }
}
