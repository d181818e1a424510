//! Rank-based estimation for post-nonlinear models and causal ordering.
//!
//! The model for one regression is `h(Y) = Xᵀβ + ε` with an unknown strictly
//! increasing `h`. Two estimators recover `β`, `h` at the sample points, and
//! the residuals `ε̂`:
//!
//! - [`rank_gauss`] assumes standard Gaussian noise and maximizes a concave
//!   pairwise rank likelihood;
//! - [`rank_general`] drops the noise assumption and maximizes a smoothed
//!   rank concordance, identifying `β` up to scale.
//!
//! [`order`] turns either estimator into a causal ordering by repeatedly
//! removing the node whose residuals are least dependent (by [`hsic`]) on
//! the rest. [`sim`] generates benchmark data and runs replicated
//! experiments.
//!
//! ```
//! use pnlrank::data::{compute_ranks, Dataset};
//! use pnlrank::order::{estimate_ordering, OrderConfig};
//! use pnlrank::rank_gauss::fit_rank_gauss;
//! use pnlrank::optim::AscentOptions;
//! use ndarray::Array2;
//!
//! // X2 = cbrt(2 X1 + e): X1 causes X2
//! let n = 200;
//! let x1: Vec<f64> = (0..n).map(|i| ((i * 37 % n) as f64 / n as f64 - 0.5) * 4.0).collect();
//! let e: Vec<f64> = (0..n).map(|i| ((i * 91 % n) as f64 / n as f64 - 0.5) * 2.0).collect();
//! let x2: Vec<f64> = x1.iter().zip(&e).map(|(a, b)| (2.0 * a + b).cbrt()).collect();
//!
//! let design = Array2::from_shape_vec((n, 1), x1.clone())?;
//! let fit = fit_rank_gauss(design.view(), &x2, &compute_ranks(&x2)?, &AscentOptions::default())?;
//! assert!(fit.converged && fit.beta[0] > 0.0);
//!
//! let mut values = Array2::zeros((n, 2));
//! values.column_mut(0).assign(&ndarray::Array1::from(x1));
//! values.column_mut(1).assign(&ndarray::Array1::from(x2));
//! let data = Dataset::with_default_names(values)?;
//! let ordering = estimate_ordering(&data, &OrderConfig::default())?;
//! assert_eq!(ordering.order().len(), 2);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod accum;
pub mod data;
pub mod error;
pub mod hsic;
pub mod normal;
pub mod optim;
pub mod order;
pub mod rank_gauss;
pub mod rank_general;
pub mod sim;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{BasisSpec, CausalOrdering, Dag, Dataset, RankVector};
pub use error::{DataError, FitError, HsicError, OrderError, SimError};
pub use order::{Method, OrderConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/rank_gauss.md")]
    pub mod rank_gauss {}
    #[doc = include_str!("../../../book/src/rank_general.md")]
    pub mod rank_general {}
    #[doc = include_str!("../../../book/src/hsic.md")]
    pub mod hsic {}
    #[doc = include_str!("../../../book/src/ordering.md")]
    pub mod ordering {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
