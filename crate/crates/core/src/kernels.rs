//! Positive-definite kernels over states and state-action pairs.
//!
//! Gaussian kernels are parameterised by their squared scale `h`:
//! `k(x, y) = exp(-||x - y||^2 / h)`. A length-scale `l` corresponds to
//! `h = l^2`; the median heuristic produces `h = (alpha * med)^2` directly.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::value_fn::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `exp(-||x - y||^2 / scale)`. For state-action pairs the inputs are the
    /// concatenation `[s, a]`, which gives `exp(-(||ds||^2 + ||da||^2) / scale)`.
    Gaussian { scale: f64 },
    /// `phi(x)^T phi(y)`.
    Linear { features: FeatureMap },
}

impl Kernel {
    pub fn gaussian(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(
                "bandwidth",
                format!("must be positive and finite, got {scale}"),
            ));
        }
        Ok(Kernel::Gaussian { scale })
    }

    /// Gaussian with length-scale `l`, i.e. `exp(-||x - y||^2 / l^2)`.
    pub fn gaussian_length_scale(length: f64) -> Result<Self> {
        if !(length > 0.0) {
            return Err(Error::invalid(
                "bandwidth",
                format!("length scale must be positive, got {length}"),
            ));
        }
        Self::gaussian(length * length)
    }

    pub fn linear(features: FeatureMap) -> Self {
        Kernel::Linear { features }
    }

    /// Input dimension the kernel requires, if fixed.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Kernel::Gaussian { .. } => None,
            Kernel::Linear { features } => Some(features.input_dim()),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Gaussian { scale } => (-sq_dist(x, y) / scale).exp(),
            Kernel::Linear { features } => dot(&features.features(x), &features.features(y)),
        }
    }

    /// `G[i][j] = k(x_i, x_j)`, exactly symmetric.
    pub fn gram_matrix<P: AsRef<[f64]> + Sync>(&self, points: &[P]) -> Result<DMatrix<f64>> {
        self.gram_matrix_with(points, Execution::default())
    }

    pub fn gram_matrix_with<P: AsRef<[f64]> + Sync>(&self, points: &[P], exec: Execution) -> Result<DMatrix<f64>> {
        let n = points.len();
        if n == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let dim = points[0].as_ref().len();
        if let Some(want) = self.input_dim() {
            check_len("kernel input", want, dim)?;
        }
        for p in points {
            check_len("kernel input", dim, p.as_ref().len())?;
        }
        let rows: Vec<Vec<f64>> = match self {
            Kernel::Gaussian { scale } => exec.map(n, |i| {
                let xi = points[i].as_ref();
                (i..n)
                    .map(|j| (-sq_dist(xi, points[j].as_ref()) / scale).exp())
                    .collect()
            }),
            Kernel::Linear { features } => {
                let phi: Vec<Vec<f64>> = exec.map(n, |i| features.features(points[i].as_ref()));
                exec.map(n, |i| (i..n).map(|j| dot(&phi[i], &phi[j])).collect())
            }
        };
        let mut g = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                g[(i, i + off)] = v;
                g[(i + off, i)] = v;
            }
        }
        Ok(g)
    }
}

/// Squared Euclidean distance, summed in index order so that swapping the
/// arguments gives the same bits.
#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Median heuristic: `(alpha * med)^2` with `med` the median of all
/// `n(n-1)/2` pairwise Euclidean distances.
pub fn median_bandwidth<P: AsRef<[f64]>>(points: &[P], alpha: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("median bandwidth", "need at least two points"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(
            "median bandwidth",
            format!("alpha must be positive, got {alpha}"),
        ));
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for (i, x) in points.iter().enumerate() {
        for y in &points[i + 1..] {
            dists.push(sq_dist(x.as_ref(), y.as_ref()).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if !(med > 0.0) {
        return Err(Error::invalid("median bandwidth", "median pairwise distance is zero"));
    }
    Ok((alpha * med).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Fixed length-scale `l`: `exp(-||x - y||^2 / l^2)`.
    Fixed(f64),
    /// Median heuristic recomputed on every batch.
    Median { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    GaussianRbf,
    LinearFeature,
    StateActionRbf,
}

impl KernelKind {
    pub const NAMES: [&'static str; 3] = ["gaussian-rbf", "linear-feature", "state-action-rbf"];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::GaussianRbf => "gaussian-rbf",
            KernelKind::LinearFeature => "linear-feature",
            KernelKind::StateActionRbf => "state-action-rbf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian-rbf" | "gaussian" | "rbf" => Some(KernelKind::GaussianRbf),
            "linear-feature" | "linear" => Some(KernelKind::LinearFeature),
            "state-action-rbf" => Some(KernelKind::StateActionRbf),
            _ => None,
        }
    }
}

/// Kernel choice plus bandwidth policy, resolved into a [`Kernel`] per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn gaussian(length_scale: f64) -> Self {
        KernelSpec {
            kind: KernelKind::GaussianRbf,
            bandwidth: Bandwidth::Fixed(length_scale),
        }
    }

    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::LinearFeature,
            bandwidth: Bandwidth::Fixed(1.0),
        }
    }

    /// `points` are the kernel inputs of the current batch (states, or
    /// concatenated state-action vectors); `features` is required for the
    /// linear kind.
    pub fn resolve<P: AsRef<[f64]>>(&self, points: &[P], features: Option<&FeatureMap>) -> Result<Kernel> {
        match self.kind {
            KernelKind::LinearFeature => {
                let features = features
                    .ok_or_else(|| Error::invalid("kernel", "linear-feature kernel needs a linear feature map"))?;
                Ok(Kernel::linear(features.clone()))
            }
            KernelKind::GaussianRbf | KernelKind::StateActionRbf => match self.bandwidth {
                Bandwidth::Fixed(l) => Kernel::gaussian_length_scale(l),
                Bandwidth::Median { alpha } => Kernel::gaussian(median_bandwidth(points, alpha)?),
            },
        }
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..4).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), 2..12))
    }

    proptest! {
        #[test]
        fn gaussian_gram_is_symmetric_psd(pts in points(), length in 0.1f64..3.0) {
            let g = Kernel::gaussian_length_scale(length).unwrap().gram_matrix(&pts).unwrap();
            for i in 0..pts.len() {
                prop_assert_eq!(g[(i, i)], 1.0);
                for j in 0..pts.len() {
                    prop_assert_eq!(g[(i, j)], g[(j, i)]);
                }
            }
            let min = g.symmetric_eigen().eigenvalues.min();
            prop_assert!(min > -1e-9, "min eigenvalue {}", min);
        }

        #[test]
        fn parallel_gram_matches_sequential(pts in points(), length in 0.1f64..3.0) {
            let k = Kernel::gaussian_length_scale(length).unwrap();
            let a = k.gram_matrix_with(&pts, Execution::Sequential).unwrap();
            let b = k.gram_matrix_with(&pts, Execution::Parallel).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
