//! Mosaic permutation tests and confidence intervals for linear models of
//! panel data.
//!
//! The crate tests the cluster-independence assumption behind clustered
//! standard errors and builds confidence intervals that stay valid in finite
//! samples under a joint invariance condition on the errors. The moving
//! parts:
//!
//! - [`panel`] — balanced `N×T` panels, cluster partitions, and the
//!   within-cluster rank-revealing least-squares engine.
//! - [`invariance`] — symmetric involutions on the time axis (sign symmetry,
//!   time reversal, local exchangeability, or a custom matrix).
//! - [`mosaic`] — invariance-preserving residuals, sign randomization, the
//!   quadratic cross-cluster statistic, and the permutation p-value.
//! - [`inference`] — the mosaic point estimate, confidence interval, and
//!   standard error, plus pooled-OLS comparators with homoskedastic and
//!   cluster-robust standard errors.
//! - [`diagnostics`] — split-sample checks: spatial fold construction, the
//!   squared-gap-to-variance ratio, and theoretical vs empirical interval
//!   overlap rates.
//! - [`simlab`] — synthetic data-generating processes and Monte Carlo
//!   drivers for calibration, robustness, and coverage experiments.
//!
//! All randomized routines are driven by explicit 64-bit seeds with
//! per-replicate derived streams, so results are reproducible bit for bit
//! and independent of the parallelism degree (see the `parallel` feature).

pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod invariance;
pub mod mosaic;
pub mod panel;
pub mod rng;
pub mod simlab;

mod parallel;

pub use error::{Error, Result};
pub use invariance::{Invariance, InvarianceKind};
pub use panel::{augment_design, cluster_fit, ClusterFit, Clustering, PanelData};
