//! Confidence intervals for a regression coefficient, plus OLS comparators.
//!
//! The mosaic estimator residualizes both the outcome and the covariate of
//! interest cluster by cluster on the augmented controls; the interval comes
//! from inverting the permutation test with the estimator itself as the test
//! statistic, which reduces to quantiles of a closed-form replicate value.
//! The quantile convention is chosen so that interval membership agrees
//! exactly with acceptance of the corresponding two-sided test at the same
//! seed.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariance::Invariance;
use crate::mosaic::{mosaic_resid_with, MosaicResiduals, SignAssignment};
use crate::panel::Clustering;
use crate::parallel::map_indexed;
use crate::rng::replicate_rng;

/// Replicates whose randomized covariate is numerically indistinguishable
/// from the original (`|1 − ρ| < DEGENERATE_RHO_TOL`) contribute the analytic
/// limit 0: the numerator vanishes identically there.
const DEGENERATE_RHO_TOL: f64 = 1e-12;

/// Inputs for [`mosaic_ci`].
#[derive(Clone)]
pub struct CiInputs<'a> {
    /// Outcomes, `N×T`.
    pub y: &'a DMatrix<f64>,
    /// Covariate of interest, `N×T`.
    pub z: &'a DMatrix<f64>,
    /// Control covariates, each `N×T`.
    pub x: &'a [DMatrix<f64>],
    pub clustering: &'a Clustering,
    pub invariance: &'a Invariance,
    /// Miscoverage level in (0, 1).
    pub alpha: f64,
    /// Number of randomization replicates (`≥ 2`; `≥ ceil(2/alpha)` is
    /// recommended so both tail quantiles are interior).
    pub r: usize,
    pub seed: u64,
}

/// Point estimate together with the reusable intermediates.
pub struct MosaicBeta {
    /// `⟨D, ε̂⟩ / ⟨D, D⟩`.
    pub beta_hat: f64,
    /// Antisymmetrized covariate residuals `D = (A − A·P)/2`.
    pub d: DMatrix<f64>,
    /// Covariate residuals `A`.
    pub a: DMatrix<f64>,
    /// Outcome residuals `ε̂`.
    pub eps_hat: MosaicResiduals,
}

fn synthetic_ids(n: usize, t: usize) -> (Vec<String>, Vec<String>) {
    (
        (0..n).map(|i| format!("u{i}")).collect(),
        (1..=t).map(|j| j.to_string()).collect(),
    )
}

/// The mosaic point estimate of the coefficient on `z`, controlling for `x`.
pub fn mosaic_beta(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    clustering: &Clustering,
    invariance: &Invariance,
) -> Result<MosaicBeta> {
    if z.shape() != y.shape() {
        return Err(Error::DimensionMismatch(format!(
            "covariate of interest is {}x{} but the outcome is {}x{}",
            z.nrows(),
            z.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let (n, t) = y.shape();
    let (unit_ids, time_ids) = synthetic_ids(n, t);
    let eps_hat = mosaic_resid_with(y, x, clustering, invariance, &unit_ids, &time_ids)?;
    let a = mosaic_resid_with(z, x, clustering, invariance, &unit_ids, &time_ids)?
        .into_residuals();
    let d = (&a - invariance.apply(&a)?) * 0.5;

    let dd = d.dot(&d);
    if dd <= no_variation_tolerance(&a) {
        return Err(Error::NoLocalVariation);
    }
    let beta_hat = d.dot(eps_hat.residuals()) / dd;
    Ok(MosaicBeta {
        beta_hat,
        d,
        a,
        eps_hat,
    })
}

fn no_variation_tolerance(a: &DMatrix<f64>) -> f64 {
    1e-12 * a.dot(a).max(1.0)
}

/// Result of a mosaic confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct CiResult {
    pub beta_hat: f64,
    pub lower: f64,
    pub upper: f64,
    /// Sample standard deviation of the replicate values.
    pub se: f64,
    pub alpha: f64,
    pub r: usize,
    pub seed: u64,
    /// `(ρ̃·β̂ − β̃) / (1 − ρ̃)` per replicate, in replicate order.
    pub replicate_values: Vec<f64>,
    /// `ρ̃` per replicate.
    pub rho_values: Vec<f64>,
    /// Replicates with `ρ̃ → 1` whose value was set to the analytic limit 0.
    pub degenerate_count: usize,
}

/// 1-based order-statistic indices for the interval endpoints: the lower
/// endpoint uses `floor((R+1)·α/2)` clamped to at least 1, the upper
/// `ceil((R+1)·(1−α/2))` clamped to at most `R`. This pairing makes interval
/// membership match the `(1+count)/(R+1)` permutation p-value exactly.
pub fn quantile_indices(r: usize, alpha: f64) -> (usize, usize) {
    let k = (r + 1) as f64 * alpha / 2.0;
    // Nudge against floating-point droop in products like 500·0.05.
    let lo = (k + 1e-9).floor() as usize;
    let hi = ((r + 1) as f64 * (1.0 - alpha / 2.0) - 1e-9).ceil() as usize;
    (lo.max(1), hi.min(r))
}

/// Interval endpoints from the replicate values (any order).
pub fn ci_endpoints(beta_hat: f64, values: &[f64], alpha: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite replicate values"));
    let (lo, hi) = quantile_indices(sorted.len(), alpha);
    (beta_hat + sorted[lo - 1], beta_hat + sorted[hi - 1])
}

/// Sample standard deviation of the replicate values (denominator `R − 1`).
pub fn mosaic_se(replicate_values: &[f64]) -> f64 {
    let n = replicate_values.len();
    assert!(n >= 2, "standard error needs at least two replicates");
    let mean = replicate_values.iter().sum::<f64>() / n as f64;
    let ss = replicate_values
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}

/// Per-cluster inner products that turn each replicate into `O(M)` work.
struct ClusterTerms {
    /// `⟨D_m, D_m⟩`
    dd: Vec<f64>,
    /// `⟨D_m, D_m·P⟩`
    dd_flip: Vec<f64>,
    /// `⟨D_m·P, D_m·P⟩`
    dd_flip2: Vec<f64>,
    /// `⟨D_m, ε̂_m⟩`
    de: Vec<f64>,
    /// `⟨D_m, ε̂_m·P⟩`
    de_flip: Vec<f64>,
}

impl ClusterTerms {
    fn compute(
        d: &DMatrix<f64>,
        eps: &DMatrix<f64>,
        clustering: &Clustering,
        invariance: &Invariance,
    ) -> Result<Self> {
        let m = clustering.n_clusters();
        let mut terms = ClusterTerms {
            dd: vec![0.0; m],
            dd_flip: vec![0.0; m],
            dd_flip2: vec![0.0; m],
            de: vec![0.0; m],
            de_flip: vec![0.0; m],
        };
        for c in 0..m {
            let members = clustering.members(c);
            let d_block = d.select_rows(members.iter());
            let e_block = eps.select_rows(members.iter());
            let d_moved = invariance.apply(&d_block)?;
            let e_moved = invariance.apply(&e_block)?;
            terms.dd[c] = d_block.dot(&d_block);
            terms.dd_flip[c] = d_block.dot(&d_moved);
            terms.dd_flip2[c] = d_moved.dot(&d_moved);
            terms.de[c] = d_block.dot(&e_block);
            terms.de_flip[c] = d_block.dot(&e_moved);
        }
        Ok(terms)
    }
}

/// Mosaic confidence interval by test inversion.
///
/// Each replicate draws one sign assignment and transforms the orthogonalized
/// covariate and the outcome residuals with the *same* signs; the coupling is
/// what makes the interval an exact inversion of the permutation test.
pub fn mosaic_ci(inputs: &CiInputs) -> Result<CiResult> {
    if !(inputs.alpha > 0.0 && inputs.alpha < 1.0) {
        return Err(Error::InvalidAlpha(inputs.alpha));
    }
    if inputs.r < 2 {
        return Err(Error::InvalidReplicates {
            min: 2,
            got: inputs.r,
        });
    }
    let fit = mosaic_beta(
        inputs.y,
        inputs.z,
        inputs.x,
        inputs.clustering,
        inputs.invariance,
    )?;
    let terms = ClusterTerms::compute(
        &fit.d,
        fit.eps_hat.residuals(),
        inputs.clustering,
        inputs.invariance,
    )?;
    let m = inputs.clustering.n_clusters();
    let dd: f64 = terms.dd.iter().sum();

    let per_replicate = map_indexed(inputs.r, |k| {
        let mut rng = replicate_rng(inputs.seed, k as u64);
        let signs = SignAssignment::sample(m, &mut rng);
        let mut d_dt = 0.0; // <D, D~>
        let mut dt_dt = 0.0; // <D~, D~>
        let mut d_et = 0.0; // <D, eps~>
        for c in 0..m {
            if signs.bit(c) {
                d_dt += terms.dd_flip[c];
                dt_dt += terms.dd_flip2[c];
                d_et += terms.de_flip[c];
            } else {
                d_dt += terms.dd[c];
                dt_dt += terms.dd[c];
                d_et += terms.de[c];
            }
        }
        assert!(
            dt_dt > 0.0,
            "randomized covariate lost all variation; the transform is not orthogonal"
        );
        let rho = d_dt / (dd * dt_dt).sqrt();
        let beta_tilde = d_et / dd;
        let value = if (1.0 - rho).abs() < DEGENERATE_RHO_TOL {
            0.0
        } else {
            (rho * fit.beta_hat - beta_tilde) / (1.0 - rho)
        };
        (value, rho)
    });

    let replicate_values: Vec<f64> = per_replicate.iter().map(|&(v, _)| v).collect();
    let rho_values: Vec<f64> = per_replicate.iter().map(|&(_, r)| r).collect();
    let degenerate_count = rho_values
        .iter()
        .filter(|&&r| (1.0 - r).abs() < DEGENERATE_RHO_TOL)
        .count();

    let (lower, upper) = ci_endpoints(fit.beta_hat, &replicate_values, inputs.alpha);
    let se = mosaic_se(&replicate_values);
    Ok(CiResult {
        beta_hat: fit.beta_hat,
        lower,
        upper,
        se,
        alpha: inputs.alpha,
        r: inputs.r,
        seed: inputs.seed,
        replicate_values,
        rho_values,
        degenerate_count,
    })
}

/// Pooled OLS estimate of the coefficient on `z` with homoskedastic and
/// cluster-robust (CRV1) standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct OlsResult {
    pub beta: f64,
    pub se_homoskedastic: f64,
    pub se_cluster_robust: f64,
    /// Number of pooled observations `N·T`.
    pub n_obs: usize,
    /// Design columns after `[z, x…]`.
    pub n_params: usize,
}

/// Pooled OLS of `y` on `[z, x…]` over all `N·T` observations.
///
/// The cluster-robust variance sums score outer products by cluster and
/// applies the CRV1 small-sample factor `M/(M−1)·(n−1)/(n−k)`.
pub fn ols_panel(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    clustering: &Clustering,
) -> Result<OlsResult> {
    let (n_units, t) = y.shape();
    if z.shape() != (n_units, t) {
        return Err(Error::DimensionMismatch(
            "covariate of interest shape differs from the outcome".into(),
        ));
    }
    for (i, mat) in x.iter().enumerate() {
        if mat.shape() != (n_units, t) {
            return Err(Error::DimensionMismatch(format!(
                "control {i} shape differs from the outcome"
            )));
        }
    }
    if clustering.n_units() != n_units {
        return Err(Error::InvalidClustering(
            "clustering does not cover the panel's units".into(),
        ));
    }

    let n = n_units * t;
    let k = 1 + x.len();
    if n <= k {
        return Err(Error::RankDeficient(format!(
            "{n} observations cannot identify {k} coefficients"
        )));
    }
    // Row i*T + s is unit i at time s; column 0 is z.
    let mut w = DMatrix::zeros(n, k);
    let mut yv = DVector::zeros(n);
    for i in 0..n_units {
        for s in 0..t {
            let row = i * t + s;
            w[(row, 0)] = z[(i, s)];
            for (d, mat) in x.iter().enumerate() {
                w[(row, d + 1)] = mat[(i, s)];
            }
            yv[row] = y[(i, s)];
        }
    }

    let qr = w.clone().col_piv_qr();
    let r_mat = qr.r();
    let diag_len = r_mat.nrows().min(r_mat.ncols());
    let max_pivot = (0..diag_len)
        .map(|i| r_mat[(i, i)].abs())
        .fold(0.0f64, f64::max);
    let tol = 1e-8 * (n as f64).sqrt() * max_pivot;
    if max_pivot == 0.0 || (0..diag_len).any(|i| r_mat[(i, i)].abs() <= tol) {
        return Err(Error::RankDeficient(
            "pooled design has collinear columns".into(),
        ));
    }

    let plain = w.clone().qr();
    let qty = plain.q().transpose() * &yv;
    let beta = plain
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("pooled design is singular".into()))?;
    let resid = &yv - &w * &beta;
    let rss = resid.dot(&resid);
    let dof = (n - k) as f64;
    let sigma2 = rss / dof;

    // (WᵀW)⁻¹ = R⁻¹ R⁻ᵀ from the unpivoted factorization.
    let r_inv = plain
        .r()
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient("pooled design is singular".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let se_homoskedastic = (sigma2 * xtx_inv[(0, 0)]).max(0.0).sqrt();

    let m = clustering.n_clusters() as f64;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for c in 0..clustering.n_clusters() {
        let mut score = DVector::<f64>::zeros(k);
        for &unit in clustering.members(c) {
            for s in 0..t {
                let row = unit * t + s;
                let e = resid[row];
                for col in 0..k {
                    score[col] += w[(row, col)] * e;
                }
            }
        }
        meat += &score * score.transpose();
    }
    let correction = (m / (m - 1.0)) * ((n as f64 - 1.0) / dof);
    let vcr = &xtx_inv * meat * &xtx_inv * correction;
    let se_cluster_robust = vcr[(0, 0)].max(0.0).sqrt();

    Ok(OlsResult {
        beta: beta[0],
        se_homoskedastic,
        se_cluster_robust,
        n_obs: n,
        n_params: k,
    })
}
