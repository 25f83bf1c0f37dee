//! Identity suite over random tabular instances and linear systems.

use kbl_core::envs::Transition;
use kbl_core::kernels::Kernel;
use kbl_core::linear::{self, LinearSystemBundle};
use kbl_core::rng;
use kbl_core::tabular::{self, random};
use kbl_core::value_fn::FeatureMap;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

#[derive(Debug, Clone)]
pub struct VerifySettings {
    pub n_mdps: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub values_per_mdp: usize,
    pub gamma: f64,
    pub rg_samples: usize,
    pub n_bundles: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            n_mdps: 20,
            n_states: 8,
            n_actions: 3,
            values_per_mdp: 100,
            gamma: 0.9,
            rg_samples: 100_000,
            n_bundles: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub instances: usize,
    /// Largest observed violation measure (error, or z-score).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(name: &'static str, instances: usize, worst: f64, tolerance: f64) -> Self {
        CheckRow {
            name,
            instances,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

pub fn table_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("check,instances,worst,tolerance,result\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:e},{:e},{}\n",
            r.name,
            r.instances,
            r.worst,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    out
}

pub fn table_text(rows: &[CheckRow]) -> String {
    let mut out = format!(
        "{:<28} {:>9} {:>12} {:>10}  result\n",
        "check", "instances", "worst", "tolerance"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<28} {:>9} {:>12.3e} {:>10.1e}  {}\n",
            r.name,
            r.instances,
            r.worst,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    out
}

struct Instance {
    mdp: tabular::TabularMdp,
    policy: tabular::TabularPolicy,
    mu: tabular::StateDistribution,
    gram: DMatrix<f64>,
}

fn instance(s: &VerifySettings, k: usize) -> kbl_core::Result<Instance> {
    let mut r = rng::stream(s.seed, (rng::streams::ORACLE << 40) + k as u64);
    let mdp = random::mdp(&mut r, s.n_states, s.n_actions, s.gamma);
    let policy = random::policy(&mut r, s.n_states, s.n_actions);
    let mu = random::distribution(&mut r, &mdp);
    let points = random::embedding(&mut r, s.n_states, 2);
    let length = r.random_range(0.2..1.0);
    let gram = Kernel::gaussian_length_scale(length)?.gram_matrix(&points)?;
    Ok(Instance { mdp, policy, mu, gram })
}

/// Runs every identity check; numerical failures inside a check propagate.
pub fn run_suite(s: &VerifySettings) -> kbl_core::Result<Vec<CheckRow>> {
    let mut zero_at_fixed_point: f64 = 0.0;
    let mut min_positive = f64::INFINITY;
    let mut dual_gap: f64 = 0.0;
    let mut mercer_gap: f64 = 0.0;
    let mut mercer_bound: f64 = 0.0;
    let mut witness_gap: f64 = 0.0;
    for k in 0..s.n_mdps {
        let inst = instance(s, k)?;
        let (mdp, pi, mu, gram) = (&inst.mdp, &inst.policy, &inst.mu, &inst.gram);
        let vpi = tabular::solve_value_direct(mdp, pi)?;
        zero_at_fixed_point = zero_at_fixed_point.max(tabular::exact_kernel_loss(mdp, pi, mu, gram, &vpi)?);
        let kstar = tabular::dual_kernel(mdp, pi, mu, gram)?;
        let mut r = rng::stream(s.seed, (rng::streams::EVAL << 40) + k as u64);
        for _ in 0..s.values_per_mdp {
            let v = random::values(&mut r, s.n_states, 5.0);
            let loss = tabular::exact_kernel_loss(mdp, pi, mu, gram, &v)?;
            min_positive = min_positive.min(loss);
            let dual = tabular::weighted_quadratic(mu.as_slice(), &kstar, &(&v - &vpi));
            dual_gap = dual_gap.max((loss - dual).abs());
            let m = tabular::mercer_check(mdp, pi, mu, gram, &v)?;
            mercer_gap = mercer_gap.max((m.lhs - m.rhs).abs());
            mercer_bound = mercer_bound.max(m.lhs - m.bound);
            let w = tabular::rkhs_witness_check(mdp, pi, mu, gram, &v)?;
            witness_gap = witness_gap
                .max((w.attained - w.loss).abs())
                .max((w.witness_norm_sq - w.loss).abs());
        }
    }
    let n_values = s.n_mdps * s.values_per_mdp;
    let mut rows = vec![
        CheckRow::new("kernel-loss-zero-at-vpi", s.n_mdps, zero_at_fixed_point, 1e-10),
        CheckRow {
            name: "kernel-loss-positive-off-vpi",
            instances: n_values,
            worst: -min_positive,
            tolerance: 0.0,
            passed: min_positive > 0.0,
        },
        CheckRow::new("dual-kernel-identity", n_values, dual_gap, 1e-8),
        CheckRow::new("eigen-expansion", n_values, mercer_gap, 1e-8),
        CheckRow::new("eigen-upper-bound", n_values, mercer_bound, 1e-10),
        CheckRow::new("witness-norm", n_values, witness_gap, 1e-10),
    ];

    let inst = instance(s, s.n_mdps)?;
    let mut r = rng::stream(s.seed, rng::streams::EVAL);
    let v = random::values(&mut r, s.n_states, 2.0);
    let bias = tabular::rg_bias_check(&inst.mdp, &inst.policy, &inst.mu, &v, s.rg_samples, s.seed)?;
    rows.push(CheckRow::new("rg-bias-variance-z", 1, bias.z_score().abs(), 3.0));

    let mut td_gap: f64 = 0.0;
    for k in 0..s.n_bundles {
        let b = random_bundle(s.seed, k as u64, s.gamma)?;
        let td = linear::td_closed_form(&b)?;
        let kbe = linear::kloss_closed_form(&b)?;
        td_gap = td_gap.max((&kbe - &td).norm() / td.norm());
    }
    rows.push(CheckRow::new("kbe-equals-td", s.n_bundles, td_gap, 1e-8));

    let mut ce_gap: f64 = 0.0;
    for k in 0..s.n_mdps {
        let (batch, n) = random_tabular_dataset(s.seed, k as u64, s.n_states);
        let b = LinearSystemBundle::from_transitions(&batch, &FeatureMap::OneHot { n }, s.gamma)?;
        let kbe = linear::kloss_closed_form(&b)?;
        let ce = linear::certainty_equivalence(&batch, n, s.gamma)?;
        ce_gap = ce_gap.max((kbe - ce).amax());
    }
    rows.push(CheckRow::new("one-hot-certainty-equivalence", s.n_mdps, ce_gap, 1e-8));
    Ok(rows)
}

/// Dense random bundle: 50 samples of 5 features in `[-1, 1]`.
pub fn random_bundle(seed: u64, k: u64, gamma: f64) -> kbl_core::Result<LinearSystemBundle> {
    let mut r = rng::stream(seed, (rng::streams::ORACLE << 40) + (1 << 20) + k);
    let (n, d) = (50, 5);
    let x = DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
    let xn = DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
    let rew = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
    LinearSystemBundle::new(x, xn, rew, gamma)
}

/// Every state appears as a source at least once, plus 3n random extras.
pub fn random_tabular_dataset(seed: u64, k: u64, n: usize) -> (Vec<Transition>, usize) {
    let mut r = rng::stream(seed, (rng::streams::ORACLE << 40) + (2 << 20) + k);
    let mut batch = Vec::new();
    for i in 0..4 * n {
        let s = if i < n { i } else { r.random_range(0..n) };
        batch.push(Transition {
            state: vec![s as f64],
            action: vec![0.0],
            reward: r.random_range(-1.0..1.0),
            next_state: vec![r.random_range(0..n) as f64],
            terminal: false,
        });
    }
    (batch, n)
}
