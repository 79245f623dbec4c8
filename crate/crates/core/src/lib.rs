//! Stein kernels from moment maps.
//!
//! A moment map of a centered measure `mu` is a convex `phi` whose gradient
//! pushes the probability density `exp(-phi)` forward to `mu`. Its Hessian,
//! read through the inverse gradient, is a Stein kernel for `mu`. This crate
//! builds such maps (closed forms, a 1D grid solver, products and
//! semi-discrete max-affine potentials), turns them into kernels, and uses the
//! kernels to bound distances to the standard Gaussian.

pub mod cloud;
pub mod clt_bench;
pub mod error;
pub mod inequalities;
pub mod measures;
pub mod metrics;
pub mod moment_map;
pub mod numfmt;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stein;

pub use cloud::{PointCloud, WeightedCloud, Weights};
pub use error::{Error, Result};
pub use measures::{make_measure, Factor, Measure, MeasureFlags, MeasureSpec, Support};
pub use potential::{Polynomial1d, Potential, ProductPotential, SeparablePotential};
pub use moment_map::{
    closed_form_map, solve_1d, solve_moment_map, solve_product, solve_semidiscrete, Backend, MomentMap, SolveOptions,
};
pub use stein::{kernel_1d_explicit, kernel_from_moment_map, transported_kernel, SteinKernelField};
pub use metrics::{stein_discrepancy_upper, DistanceMethod, DistanceResult};
pub use inequalities::{InequalityReport, MomentCheck, ScalarTest};
pub use clt_bench::{certified_bound, fit_rate, run_clt_experiment, CltConfig, ExperimentRecord, RateFit};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
