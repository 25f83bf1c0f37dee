//! Parametric value functions with parameter gradients.
//!
//! Parameters live in one flat vector. For an MLP the layout is layer-major;
//! within a layer the weight matrix comes first (row-major, `out x in`),
//! followed by the bias vector.

use rand::Rng as _;

use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::rng;

/// Feature map for linear value functions.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `phi(s) = s`.
    Raw { dim: usize },
    /// One-hot indicator of the integer state index stored in `s[0]`.
    OneHot { n: usize },
    /// Row `s[0]` of a fixed feature table.
    Table { rows: Vec<Vec<f64>> },
}

impl FeatureMap {
    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Raw { dim } => *dim,
            FeatureMap::OneHot { n } => *n,
            FeatureMap::Table { rows } => rows.first().map_or(0, Vec::len),
        }
    }

    /// Dimension of the state vectors this map accepts.
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Raw { dim } => *dim,
            FeatureMap::OneHot { .. } | FeatureMap::Table { .. } => 1,
        }
    }

    fn index(s: &[f64], n: usize) -> usize {
        let idx = s[0];
        assert!(
            idx >= 0.0 && idx.fract() == 0.0 && (idx as usize) < n,
            "state index {idx} outside 0..{n}"
        );
        idx as usize
    }

    pub fn features(&self, s: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Raw { .. } => s.to_vec(),
            FeatureMap::OneHot { n } => {
                let mut phi = vec![0.0; *n];
                phi[Self::index(s, *n)] = 1.0;
                phi
            }
            FeatureMap::Table { rows } => rows[Self::index(s, rows.len())].clone(),
        }
    }

    /// Validates a state vector against this map.
    pub fn check_state(&self, s: &[f64]) -> Result<()> {
        check_len("state", self.input_dim(), s.len())?;
        let n = match self {
            FeatureMap::Raw { .. } => return Ok(()),
            FeatureMap::OneHot { n } => *n,
            FeatureMap::Table { rows } => rows.len(),
        };
        if s[0] >= 0.0 && s[0].fract() == 0.0 && (s[0] as usize) < n {
            Ok(())
        } else {
            Err(Error::invalid("state", format!("index {} outside 0..{n}", s[0])))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative from pre-activation `x` and output `y`. The relu
    /// subgradient at exactly zero is taken to be 0.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected network; hidden layers use `activation`, the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
}

/// Forward-pass intermediates: `pre[l]` and `post[l]` for each layer, with
/// `post` of the last layer equal to the network output.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }
}

impl Mlp {
    /// `widths = [input, hidden..., output]`.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid("mlp", format!("bad layer widths {widths:?}")));
        }
        Ok(Mlp { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `m` is drawn from `U(-1/sqrt(m), 1/sqrt(m))`.
    pub fn init(&self, rng: &mut rng::Rng) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.n_params());
        for w in self.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..bound));
            }
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> MlpTrace {
        debug_assert_eq!(params.len(), self.n_params());
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.widths.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let input = if l == 0 { x } else { &post[l - 1][..] };
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
            offset += n_in * n_out + n_out;
        }
        MlpTrace {
            input: x.to_vec(),
            pre,
            post,
        }
    }

    pub fn output(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(params, x).post.pop().unwrap()
    }

    /// Vector-Jacobian product: accumulates `out_grad^T d(output)/d(params)`
    /// scaled by `scale` into `grad`.
    pub fn backward_into(&self, params: &[f64], trace: &MlpTrace, out_grad: &[f64], scale: f64, grad: &mut [f64]) {
        let n_layers = self.widths.len() - 1;
        let offsets: Vec<usize> = self
            .widths
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        let mut delta: Vec<f64> = out_grad.iter().map(|g| g * scale).collect();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            if l + 1 != n_layers {
                for o in 0..n_out {
                    delta[o] *= self.activation.derivative(trace.pre[l][o], trace.post[l][o]);
                }
            }
            let input = if l == 0 {
                &trace.input[..]
            } else {
                &trace.post[l - 1][..]
            };
            let off = offsets[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &params[off..off + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (i, w) in weights[o * n_in..(o + 1) * n_in].iter().enumerate() {
                        next[i] += w * d;
                    }
                }
                delta = next;
            }
        }
    }

    /// Gradient of `out_grad^T output(x)` with respect to the input.
    pub fn input_grad(&self, params: &[f64], trace: &MlpTrace, out_grad: &[f64]) -> Vec<f64> {
        let n_layers = self.widths.len() - 1;
        let mut offset_end = self.n_params();
        let mut delta = out_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offset_end - (n_in * n_out + n_out);
            if l + 1 != n_layers {
                for o in 0..n_out {
                    delta[o] *= self.activation.derivative(trace.pre[l][o], trace.post[l][o]);
                }
            }
            let weights = &params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                for (i, w) in weights[o * n_in..(o + 1) * n_in].iter().enumerate() {
                    next[i] += w * delta[o];
                }
            }
            delta = next;
            offset_end = off;
        }
        delta
    }
}

/// Architecture of a [`ValueFunction`].
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Linear(FeatureMap),
    /// Scalar-output MLP.
    Mlp(Mlp),
}

impl Architecture {
    pub fn linear(features: FeatureMap) -> Self {
        Architecture::Linear(features)
    }

    /// `input -> hidden... -> 1`.
    pub fn mlp(input: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(Architecture::Mlp(Mlp::new(widths, activation)?))
    }

    pub fn n_params(&self) -> usize {
        match self {
            Architecture::Linear(f) => f.dim(),
            Architecture::Mlp(m) => m.n_params(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Linear(f) => f.input_dim(),
            Architecture::Mlp(m) => m.input_dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Architecture::Linear(_) => "linear",
            Architecture::Mlp(_) => "mlp",
        }
    }

    pub fn features(&self) -> Option<&FeatureMap> {
        match self {
            Architecture::Linear(f) => Some(f),
            Architecture::Mlp(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `V_theta(s)` together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    arch: Architecture,
    params: Vec<f64>,
}

impl ValueFunction {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", arch.n_params(), params.len())?;
        check_finite(&params)?;
        Ok(ValueFunction { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.n_params();
        ValueFunction {
            arch,
            params: vec![0.0; n],
        }
    }

    /// Linear weights drawn from `U(-1, 1)`; MLPs use [`Mlp::init`].
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::streams::INIT);
        let params = match &arch {
            Architecture::Linear(f) => (0..f.dim()).map(|_| r.random_range(-1.0..1.0)).collect(),
            Architecture::Mlp(m) => m.init(&mut r),
        };
        ValueFunction { arch, params }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("parameter vector", self.params.len(), params.len())?;
        check_finite(params)?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut vf = self.clone();
        vf.set_params(params)?;
        Ok(vf)
    }

    pub fn check_state(&self, s: &[f64]) -> Result<()> {
        match &self.arch {
            Architecture::Linear(f) => f.check_state(s),
            Architecture::Mlp(m) => check_len("state", m.input_dim(), s.len()),
        }
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        value_at(&self.arch, &self.params, s)
    }

    pub fn value_and_grad(&self, s: &[f64]) -> GradientRecord {
        match &self.arch {
            Architecture::Linear(f) => {
                let phi = f.features(s);
                GradientRecord {
                    value: phi.iter().zip(&self.params).map(|(a, b)| a * b).sum(),
                    grad: phi,
                }
            }
            Architecture::Mlp(m) => {
                let trace = m.forward(&self.params, s);
                let mut grad = vec![0.0; self.params.len()];
                m.backward_into(&self.params, &trace, &[1.0], 1.0, &mut grad);
                GradientRecord {
                    value: trace.output()[0],
                    grad,
                }
            }
        }
    }

    pub fn batched_values_and_grads<S: AsRef<[f64]> + Sync>(&self, states: &[S]) -> Vec<GradientRecord> {
        self.batched_values_and_grads_with(states, Execution::default())
    }

    pub fn batched_values_and_grads_with<S: AsRef<[f64]> + Sync>(
        &self,
        states: &[S],
        exec: Execution,
    ) -> Vec<GradientRecord> {
        exec.map(states.len(), |i| self.value_and_grad(states[i].as_ref()))
    }

    pub fn batched_values<S: AsRef<[f64]> + Sync>(&self, states: &[S], exec: Execution) -> Vec<f64> {
        exec.map(states.len(), |i| self.value(states[i].as_ref()))
    }
}

/// Evaluates `V_params(s)` without building a [`ValueFunction`].
pub fn value_at(arch: &Architecture, params: &[f64], s: &[f64]) -> f64 {
    match arch {
        Architecture::Linear(f) => f.features(s).iter().zip(params).map(|(a, b)| a * b).sum(),
        Architecture::Mlp(m) => m.forward(params, s).output()[0],
    }
}

fn check_finite(params: &[f64]) -> Result<()> {
    if params.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "value-function parameters",
        })
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straightforward forward pass written against the documented layout.
    fn reference_forward(widths: &[usize], act: Activation, params: &[f64], x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (ni, no) = (widths[l], widths[l + 1]);
            let mut out = vec![0.0; no];
            for o in 0..no {
                let mut acc = params[off + ni * no + o];
                for i in 0..ni {
                    acc += params[off + o * ni + i] * h[i];
                }
                out[o] = if l + 2 == widths.len() {
                    acc
                } else {
                    match act {
                        Activation::Relu => {
                            if acc > 0.0 {
                                acc
                            } else {
                                0.0
                            }
                        }
                        Activation::Tanh => acc.tanh(),
                    }
                };
            }
            off += ni * no + no;
            h = out;
        }
        h[0]
    }

    fn random_state(r: &mut rng::Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_zero_params() {
        let vf = ValueFunction::zeros(Architecture::linear(FeatureMap::Raw { dim: 3 }));
        assert_eq!(vf.value(&[1.0, -2.0, 5.0]), 0.0);
    }

    #[test]
    fn mlp_with_zero_output_weights_returns_bias() {
        let arch = Architecture::mlp(2, &[5], Activation::Relu).unwrap();
        let mut vf = ValueFunction::init(arch, 1);
        let mut p = vf.params().to_vec();
        let n = p.len();
        // Output layer: 5 weights then 1 bias.
        for w in &mut p[n - 6..n - 1] {
            *w = 0.0;
        }
        p[n - 1] = 0.75;
        vf.set_params(&p).unwrap();
        assert_eq!(vf.value(&[0.3, 0.9]), 0.75);
    }

    #[test]
    fn mlp_matches_reference_forward() {
        let mut r = rng::stream(5, 0);
        for act in [Activation::Relu, Activation::Tanh] {
            let arch = Architecture::mlp(3, &[7, 4], act).unwrap();
            let vf = ValueFunction::init(arch, 9);
            for _ in 0..20 {
                let s = random_state(&mut r, 3);
                let expect = reference_forward(&[3, 7, 4, 1], act, vf.params(), &s);
                assert!((vf.value(&s) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_grad_is_features() {
        let table = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let vf = ValueFunction::new(Architecture::linear(FeatureMap::Table { rows: table }), vec![0.3, 0.1]).unwrap();
        let rec = vf.value_and_grad(&[1.0]);
        assert_eq!(rec.grad, vec![-1.0, 0.5]);
        assert!((rec.value - (-0.3 + 0.05)).abs() < 1e-15);
    }

    #[test]
    fn mlp_grad_matches_finite_differences() {
        let mut r = rng::stream(6, 0);
        let h = 1e-5;
        for trial in 0..50 {
            let act = if trial % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Relu
            };
            let arch = Architecture::mlp(2, &[8, 6], act).unwrap();
            let vf = ValueFunction::init(arch.clone(), 100 + trial);
            let s = random_state(&mut r, 2);
            let rec = vf.value_and_grad(&s);
            let mut num = vec![0.0; vf.n_params()];
            for k in 0..vf.n_params() {
                let mut p = vf.params().to_vec();
                p[k] += h;
                let up = value_at(&arch, &p, &s);
                p[k] -= 2.0 * h;
                let down = value_at(&arch, &p, &s);
                num[k] = (up - down) / (2.0 * h);
            }
            let diff: f64 = rec
                .grad
                .iter()
                .zip(&num)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = l2_norm(&num).max(1e-8);
            let tol = if act == Activation::Tanh { 1e-4 } else { 1e-3 };
            assert!(diff / scale <= tol, "trial {trial}: rel err {}", diff / scale);
        }
    }

    #[test]
    fn relu_kink_uses_zero_subgradient() {
        // One hidden unit whose pre-activation is exactly zero at s = 0.
        let arch = Architecture::mlp(1, &[1], Activation::Relu).unwrap();
        // [w1, b1, w2, b2]
        let vf = ValueFunction::new(arch, vec![2.0, 0.0, 3.0, 0.5]).unwrap();
        let rec = vf.value_and_grad(&[0.0]);
        assert_eq!(rec.value, 0.5);
        assert_eq!(rec.grad, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn batched_matches_singles() {
        let arch = Architecture::mlp(2, &[80], Activation::Relu).unwrap();
        let vf = ValueFunction::init(arch, 3);
        let mut r = rng::stream(3, 1);
        let states: Vec<Vec<f64>> = (0..150).map(|_| random_state(&mut r, 2)).collect();
        let batch = vf.batched_values_and_grads(&states);
        let singles: Vec<GradientRecord> = states.iter().map(|s| vf.value_and_grad(s)).collect();
        assert_eq!(batch, singles);
        assert_eq!(vf.batched_values_and_grads(&states[..1])[0], singles[0]);
        let mut permuted = states.clone();
        permuted.reverse();
        let rev = vf.batched_values_and_grads_with(&permuted, Execution::Sequential);
        for (i, rec) in rev.iter().enumerate() {
            assert_eq!(rec, &singles[149 - i]);
        }
    }

    #[test]
    fn rejects_nan_and_wrong_length() {
        let arch = Architecture::linear(FeatureMap::Raw { dim: 2 });
        assert!(ValueFunction::new(arch.clone(), vec![f64::NAN, 0.0]).is_err());
        assert!(ValueFunction::new(arch, vec![0.0]).is_err());
    }

    #[test]
    fn linear_second_differences_vanish() {
        let arch = Architecture::linear(FeatureMap::Raw { dim: 3 });
        let s = [0.2, -1.3, 2.0];
        let a = [0.5, 0.25, -1.0];
        let b = [1.5, -0.75, 0.125];
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let second = value_at(&arch, &a, &s) + value_at(&arch, &b, &s) - 2.0 * value_at(&arch, &mid, &s);
        assert!(second.abs() < 1e-15);
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let mlp = Mlp::new(vec![3, 5, 2], Activation::Tanh).unwrap();
        let mut r = rng::stream(2, 0);
        let params = mlp.init(&mut r);
        let x = random_state(&mut r, 3);
        let og = [0.7, -1.1];
        let trace = mlp.forward(&params, &x);
        let g = mlp.input_grad(&params, &trace, &og);
        for i in 0..3 {
            let mut up = x.clone();
            up[i] += 1e-6;
            let mut dn = x.clone();
            dn[i] -= 1e-6;
            let f = |z: &[f64]| {
                let o = mlp.output(&params, z);
                og[0] * o[0] + og[1] * o[1]
            };
            let num = (f(&up) - f(&dn)) / 2e-6;
            assert!((g[i] - num).abs() < 1e-7);
        }
    }
}
