//! Kernel Bellman loss for value-function learning.
//!
//! The crate is organised around the pieces needed to study the kernel loss
//! `L_k(V) = E[k(s, s̄) R V(s) R V(s̄)]` at desk scale:
//!
//! * [`tabular`] exact finite-MDP oracles (true values, exact kernel loss,
//!   dual kernel, Mercer and RKHS identities, residual-gradient bias);
//! * [`envs`] simulators, fixed evaluation policies, datasets and
//!   discretized ground-truth values;
//! * [`value_fn`] linear and MLP value functions with parameter gradients;
//! * [`kernels`] positive-definite kernels, bandwidth selection, Gram matrices;
//! * [`losses`] the V/U-statistic kernel losses and the residual-gradient,
//!   FVI and TD(0) baselines;
//! * [`linear`] closed-form TD and kernel-loss solutions in the linear regime;
//! * [`trainer`] the deterministic policy-evaluation training loop;
//! * [`policy_opt`] the kernel-loss variant of path-consistency learning.
//!
//! Pairwise sums and batch evaluations run on rayon when the `parallel`
//! feature is enabled. Every parallel path reduces in a fixed order, so results
//! are bitwise identical to the sequential fallback.

pub mod envs;
pub mod error;
pub mod exec;
pub mod io;
pub mod kernels;
pub mod linear;
pub mod losses;
pub mod policy_opt;
pub mod rng;
pub mod tabular;
pub mod trainer;
pub mod value_fn;

pub use error::{Error, Result};
pub use exec::Execution;
