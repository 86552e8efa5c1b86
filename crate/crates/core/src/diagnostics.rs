//! Split-sample diagnostics of standard-error quality.
//!
//! The data are split into two disjoint folds of clusters; each method
//! produces an estimate, a standard error, and confidence intervals on both
//! folds. Honest standard errors make the squared estimate gap comparable to
//! the summed squared standard errors (`Λ ≈ 1`), and the rate at which the
//! two intervals overlap should match a closed-form prediction.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::inference::{ci_endpoints, mosaic_ci, ols_panel, CiInputs};
use crate::invariance::Invariance;
use crate::panel::Clustering;
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, root_rng};

/// A two-fold split of the clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    /// The `floor(M/2)` clusters nearest the anchor (anchor included).
    pub fold1: Vec<usize>,
    /// The remaining `ceil(M/2)` clusters.
    pub fold2: Vec<usize>,
    /// The randomly selected cluster the split grew from.
    pub anchor: usize,
}

fn check_coords(clustering: &Clustering, coords: &[Vec<f64>]) -> Result<usize> {
    let m = clustering.n_clusters();
    if coords.len() != m {
        return Err(Error::MissingCoordinates(format!(
            "{} coordinate vectors for {m} clusters",
            coords.len()
        )));
    }
    let dim = coords[0].len();
    if dim == 0 {
        return Err(Error::MissingCoordinates(
            "coordinate vectors are empty".into(),
        ));
    }
    if coords.iter().any(|c| c.len() != dim) {
        return Err(Error::MissingCoordinates(
            "coordinate vectors have inconsistent dimensions".into(),
        ));
    }
    Ok(dim)
}

/// Deterministic split around a given anchor cluster: fold 1 collects the
/// `floor(M/2)` clusters closest to the anchor in Euclidean distance, with
/// ties broken by ascending cluster index.
pub fn split_folds_at(
    clustering: &Clustering,
    coords: &[Vec<f64>],
    anchor: usize,
) -> Result<FoldSplit> {
    check_coords(clustering, coords)?;
    let m = clustering.n_clusters();
    if anchor >= m {
        return Err(Error::InvalidClustering(format!(
            "anchor {anchor} out of range for {m} clusters"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let dist2 = |c: usize| -> f64 {
        coords[c]
            .iter()
            .zip(coords[anchor].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    order.sort_by(|&a, &b| {
        dist2(a)
            .partial_cmp(&dist2(b))
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    let half = m / 2;
    let mut fold1: Vec<usize> = order[..half].to_vec();
    let mut fold2: Vec<usize> = order[half..].to_vec();
    fold1.sort_unstable();
    fold2.sort_unstable();
    Ok(FoldSplit {
        fold1,
        fold2,
        anchor,
    })
}

/// Randomized split: draw the anchor uniformly from a seeded stream, then
/// split deterministically around it.
pub fn split_folds(
    clustering: &Clustering,
    coords: &[Vec<f64>],
    seed: u64,
) -> Result<FoldSplit> {
    check_coords(clustering, coords)?;
    use rand::Rng;
    let mut rng = root_rng(seed);
    let anchor = rng.random_range(0..clustering.n_clusters());
    split_folds_at(clustering, coords, anchor)
}

/// Squared estimate gap over summed squared standard errors.
pub fn lambda_ratio(b1: f64, se1: f64, b2: f64, se2: f64) -> Result<f64> {
    let denom = se1 * se1 + se2 * se2;
    if !denom.is_finite() || denom <= 0.0 {
        return Err(Error::ZeroVariance(
            "both standard errors are zero; the gap ratio is undefined".into(),
        ));
    }
    Ok((b1 - b2).powi(2) / denom)
}

/// Probability that two independent level-`alpha` normal intervals for the
/// same parameter overlap:
/// `1 − 2·Φ(Φ⁻¹(α/2)·sqrt((se1+se2)²/(se1²+se2²)))`.
pub fn overlap_theoretical(alpha: f64, se1: f64, se2: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if !(se1 > 0.0 && se2 > 0.0) {
        return Err(Error::ZeroVariance(
            "overlap probability needs positive standard errors".into(),
        ));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let ratio = ((se1 + se2).powi(2) / (se1 * se1 + se2 * se2)).sqrt();
    Ok(1.0 - 2.0 * std_normal.cdf(std_normal.inverse_cdf(alpha / 2.0) * ratio))
}

/// An inference method the diagnostics pipeline can run on a sub-panel.
#[derive(Debug, Clone)]
pub enum DiagMethod {
    /// Pooled OLS with the homoskedastic standard error.
    OlsHomoskedastic,
    /// Pooled OLS with the CRV1 cluster-robust standard error.
    OlsClusterRobust,
    /// Mosaic interval under the given invariance with `r` replicates.
    Mosaic { invariance: Invariance, r: usize },
}

impl DiagMethod {
    pub fn name(&self) -> String {
        match self {
            DiagMethod::OlsHomoskedastic => "ols-homoskedastic".into(),
            DiagMethod::OlsClusterRobust => "ols-cluster-robust".into(),
            DiagMethod::Mosaic { invariance, .. } => format!("mosaic-{}", invariance.kind()),
        }
    }
}

/// One method's fit on one fold: point estimate, standard error, and a
/// closed interval per requested alpha.
struct MethodFit {
    beta: f64,
    se: f64,
    intervals: Vec<(f64, f64)>,
}

/// One diagnostics row (split × method × alpha).
#[derive(Debug, Clone, Serialize)]
pub struct SplitRecord {
    pub split: usize,
    pub method: String,
    pub alpha: f64,
    pub anchor: usize,
    pub beta1: Option<f64>,
    pub se1: Option<f64>,
    pub beta2: Option<f64>,
    pub se2: Option<f64>,
    pub lambda: Option<f64>,
    pub overlap: Option<bool>,
    pub p_theoretical: Option<f64>,
    /// True when the normal-theory overlap prediction is only an
    /// approximation for this method (mosaic intervals are not normal).
    pub p_theoretical_approximate: bool,
    pub error: Option<String>,
}

/// Per-method-per-alpha aggregates over all splits.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRecord {
    pub method: String,
    pub alpha: f64,
    pub n_splits_ok: usize,
    pub n_splits_failed: usize,
    pub mean_lambda: Option<f64>,
    /// Empirical overlap rate across splits.
    pub overlap_rate: Option<f64>,
    /// Mean theoretical overlap probability across splits.
    pub mean_p_theoretical: Option<f64>,
}

/// Full diagnostics output: raw rows plus aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub rows: Vec<SplitRecord>,
    pub aggregates: Vec<AggregateRecord>,
    pub n_splits: usize,
    pub seed: u64,
}

impl DiagnosticsReport {
    /// One CSV row per split × method × alpha; empty fields where a fold
    /// failed to fit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "split,method,alpha,anchor,beta1,se1,beta2,se2,lambda,overlap,p_theoretical,p_theoretical_approximate,error\n",
        );
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.split,
                r.method,
                r.alpha,
                r.anchor,
                fmt(r.beta1),
                fmt(r.se1),
                fmt(r.beta2),
                fmt(r.se2),
                fmt(r.lambda),
                r.overlap.map(|b| b.to_string()).unwrap_or_default(),
                fmt(r.p_theoretical),
                r.p_theoretical_approximate,
                r.error.clone().unwrap_or_default().replace(',', ";"),
            ));
        }
        out
    }
}

/// Inputs shared by every split of the diagnostics pipeline.
pub struct DiagnosticsInputs<'a> {
    pub y: &'a DMatrix<f64>,
    pub z: &'a DMatrix<f64>,
    pub x: &'a [DMatrix<f64>],
    pub clustering: &'a Clustering,
    /// Per-cluster coordinates used for the spatial split; when `None` the
    /// covariate means per cluster are used as coordinates.
    pub coords: Option<&'a [Vec<f64>]>,
    pub methods: &'a [DiagMethod],
    pub n_splits: usize,
    pub alphas: &'a [f64],
    pub seed: u64,
}

/// Cluster coordinates from covariate means: one entry per cluster, the mean
/// of `z` and of each control over the cluster's observations.
pub fn coords_from_covariates(
    z: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    clustering: &Clustering,
) -> Vec<Vec<f64>> {
    let t = z.ncols() as f64;
    (0..clustering.n_clusters())
        .map(|c| {
            let members = clustering.members(c);
            let count = members.len() as f64 * t;
            let mut coord = Vec::with_capacity(1 + x.len());
            let mean_of =
                |mat: &DMatrix<f64>| members.iter().map(|&u| mat.row(u).sum()).sum::<f64>() / count;
            coord.push(mean_of(z));
            for mat in x {
                coord.push(mean_of(mat));
            }
            coord
        })
        .collect()
}

/// A fold's data: outcomes, covariate of interest, controls, clustering.
type SubPanel = (DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>, Clustering);

/// Restrict the panel to a set of clusters, re-indexing the clustering.
fn sub_panel(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    clustering: &Clustering,
    clusters: &[usize],
) -> Result<SubPanel> {
    let mut units = Vec::new();
    let mut assignment = Vec::new();
    for (new_c, &c) in clusters.iter().enumerate() {
        for &u in clustering.members(c) {
            units.push(u);
            assignment.push(new_c);
        }
    }
    let sub = |mat: &DMatrix<f64>| mat.select_rows(units.iter());
    Ok((
        sub(y),
        sub(z),
        x.iter().map(sub).collect(),
        Clustering::new(assignment)?,
    ))
}

fn fit_method(
    method: &DiagMethod,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    clustering: &Clustering,
    alphas: &[f64],
    seed: u64,
) -> Result<MethodFit> {
    match method {
        DiagMethod::OlsHomoskedastic | DiagMethod::OlsClusterRobust => {
            let fit = ols_panel(y, z, x, clustering)?;
            let se = match method {
                DiagMethod::OlsHomoskedastic => fit.se_homoskedastic,
                _ => fit.se_cluster_robust,
            };
            let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
            let intervals = alphas
                .iter()
                .map(|&a| {
                    let zcrit = std_normal.inverse_cdf(1.0 - a / 2.0);
                    (fit.beta - zcrit * se, fit.beta + zcrit * se)
                })
                .collect();
            Ok(MethodFit {
                beta: fit.beta,
                se,
                intervals,
            })
        }
        DiagMethod::Mosaic { invariance, r } => {
            // One replicate pass serves every alpha: the endpoints are
            // order statistics of the same replicate values.
            let first_alpha = alphas.first().copied().unwrap_or(0.05);
            let ci = mosaic_ci(&CiInputs {
                y,
                z,
                x,
                clustering,
                invariance,
                alpha: first_alpha,
                r: *r,
                seed,
            })?;
            let intervals = alphas
                .iter()
                .map(|&a| ci_endpoints(ci.beta_hat, &ci.replicate_values, a))
                .collect();
            Ok(MethodFit {
                beta: ci.beta_hat,
                se: ci.se,
                intervals,
            })
        }
    }
}

/// Run the split-sample diagnostics.
///
/// Each split draws an anchor cluster from a derived seed, fits every method
/// on both folds, and records the gap ratio and interval overlap per alpha.
/// Per-fold fit failures are recorded in the affected rows, not fatal.
pub fn run_diagnostics(inputs: &DiagnosticsInputs) -> Result<DiagnosticsReport> {
    if inputs.n_splits == 0 {
        return Err(Error::InvalidSpec("n_splits must be at least 1".into()));
    }
    for &a in inputs.alphas {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidAlpha(a));
        }
    }
    let owned_coords;
    let coords: &[Vec<f64>] = match inputs.coords {
        Some(c) => {
            check_coords(inputs.clustering, c)?;
            c
        }
        None => {
            owned_coords = coords_from_covariates(inputs.z, inputs.x, inputs.clustering);
            &owned_coords
        }
    };

    let per_split: Vec<Vec<SplitRecord>> = map_indexed(inputs.n_splits, |s| {
        let split_seed = derive_seed(inputs.seed, s as u64);
        let split =
            split_folds(inputs.clustering, coords, split_seed).expect("coords validated above");
        let mut rows = Vec::new();
        for (mi, method) in inputs.methods.iter().enumerate() {
            let mut fits = Vec::with_capacity(2);
            for (fi, fold) in [&split.fold1, &split.fold2].into_iter().enumerate() {
                let fit = sub_panel(inputs.y, inputs.z, inputs.x, inputs.clustering, fold)
                    .and_then(|(fy, fz, fx, fc)| {
                        fit_method(
                            method,
                            &fy,
                            &fz,
                            &fx,
                            &fc,
                            inputs.alphas,
                            derive_seed(split_seed, (2 * mi + fi) as u64),
                        )
                    });
                fits.push(fit);
            }
            let approx = matches!(method, DiagMethod::Mosaic { .. });
            match (&fits[0], &fits[1]) {
                (Ok(f1), Ok(f2)) => {
                    let lambda = lambda_ratio(f1.beta, f1.se, f2.beta, f2.se).ok();
                    for (ai, &alpha) in inputs.alphas.iter().enumerate() {
                        let (lo1, hi1) = f1.intervals[ai];
                        let (lo2, hi2) = f2.intervals[ai];
                        // Closed intervals: touching endpoints overlap.
                        let overlap = lo1.max(lo2) <= hi1.min(hi2);
                        let p_t = overlap_theoretical(alpha, f1.se, f2.se).ok();
                        rows.push(SplitRecord {
                            split: s,
                            method: method.name(),
                            alpha,
                            anchor: split.anchor,
                            beta1: Some(f1.beta),
                            se1: Some(f1.se),
                            beta2: Some(f2.beta),
                            se2: Some(f2.se),
                            lambda,
                            overlap: Some(overlap),
                            p_theoretical: p_t,
                            p_theoretical_approximate: approx,
                            error: None,
                        });
                    }
                }
                (f1, f2) => {
                    let msg = [f1, f2]
                        .iter()
                        .filter_map(|f| f.as_ref().err())
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join("; ");
                    for &alpha in inputs.alphas {
                        rows.push(SplitRecord {
                            split: s,
                            method: method.name(),
                            alpha,
                            anchor: split.anchor,
                            beta1: None,
                            se1: None,
                            beta2: None,
                            se2: None,
                            lambda: None,
                            overlap: None,
                            p_theoretical: None,
                            p_theoretical_approximate: approx,
                            error: Some(msg.clone()),
                        });
                    }
                }
            }
        }
        rows
    });

    let rows: Vec<SplitRecord> = per_split.into_iter().flatten().collect();
    let mut aggregates = Vec::new();
    for method in inputs.methods {
        let name = method.name();
        for &alpha in inputs.alphas {
            let group: Vec<&SplitRecord> = rows
                .iter()
                .filter(|r| r.method == name && r.alpha == alpha)
                .collect();
            let ok: Vec<&&SplitRecord> = group.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&SplitRecord) -> Option<f64>| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            aggregates.push(AggregateRecord {
                method: name.clone(),
                alpha,
                n_splits_ok: ok.len(),
                n_splits_failed: group.len() - ok.len(),
                mean_lambda: mean(|r| r.lambda),
                overlap_rate: mean(|r| r.overlap.map(|b| if b { 1.0 } else { 0.0 })),
                mean_p_theoretical: mean(|r| r.p_theoretical),
            });
        }
    }

    Ok(DiagnosticsReport {
        rows,
        aggregates,
        n_splits: inputs.n_splits,
        seed: inputs.seed,
    })
}
