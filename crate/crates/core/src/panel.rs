//! Balanced panel data and the within-cluster least-squares engine.
//!
//! A panel holds an `N×T` outcome matrix, `D` covariate matrices of the same
//! shape, and a partition of the units into clusters. Residuals are estimated
//! cluster by cluster on an invariance-augmented design via rank-revealing
//! (column-pivoted) QR, so collinear augmented columns are dropped
//! deterministically.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::invariance::Invariance;

/// A partition of the `N` units into `M ≥ 2` nonempty clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    /// `assignment[i]` is the cluster index of unit `i`, in `0..n_clusters`.
    assignment: Vec<usize>,
    /// Unit indices per cluster, each ascending.
    members: Vec<Vec<usize>>,
}

impl Clustering {
    /// Build a clustering from per-unit cluster indices. Cluster labels must
    /// be dense in `0..M` with every cluster nonempty and `M ≥ 2`.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::InvalidClustering("no units".into()));
        }
        let m = assignment.iter().copied().max().unwrap() + 1;
        if m < 2 {
            return Err(Error::InvalidClustering(
                "at least 2 clusters are required; a single cluster makes the \
                 cluster-independence null vacuous"
                    .into(),
            ));
        }
        let mut members = vec![Vec::new(); m];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        if let Some(empty) = members.iter().position(|v| v.is_empty()) {
            return Err(Error::InvalidClustering(format!(
                "cluster {empty} is empty; cluster labels must be dense in 0..{m}"
            )));
        }
        Ok(Self {
            assignment,
            members,
        })
    }

    /// Split `n` units into `m` contiguous clusters of near-equal size.
    pub fn contiguous(n: usize, m: usize) -> Result<Self> {
        if m < 2 || n < m {
            return Err(Error::InvalidClustering(format!(
                "cannot split {n} units into {m} clusters"
            )));
        }
        let base = n / m;
        let extra = n % m;
        let mut assignment = Vec::with_capacity(n);
        for c in 0..m {
            let size = base + usize::from(c < extra);
            assignment.extend(std::iter::repeat_n(c, size));
        }
        Self::new(assignment)
    }

    pub fn n_units(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, unit: usize) -> usize {
        self.assignment[unit]
    }

    /// Unit indices of cluster `m`, ascending.
    pub fn members(&self, m: usize) -> &[usize] {
        &self.members[m]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Compare two labels numerically when both parse as numbers, else as strings.
fn natural_less(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x < y,
        _ => a < b,
    }
}

/// True when labels are strictly increasing under their natural order
/// (numeric when all labels parse as numbers, lexicographic otherwise).
pub fn naturally_ascending(labels: &[String]) -> bool {
    labels
        .windows(2)
        .all(|w| natural_less(w[0].as_str(), w[1].as_str()))
}

/// A balanced panel: outcomes, covariates, and a cluster partition.
#[derive(Debug, Clone)]
pub struct PanelData {
    /// Outcomes, `N×T`.
    y: DMatrix<f64>,
    /// Covariates, each `N×T`.
    x: Vec<DMatrix<f64>>,
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    clustering: Clustering,
}

impl PanelData {
    pub fn new(
        y: DMatrix<f64>,
        x: Vec<DMatrix<f64>>,
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
        clustering: Clustering,
    ) -> Result<Self> {
        let (n, t) = y.shape();
        if n < 1 {
            return Err(Error::InvalidPanel("at least one unit is required".into()));
        }
        if t < 2 {
            return Err(Error::InvalidPanel(
                "at least two time periods are required".into(),
            ));
        }
        for (d, mat) in x.iter().enumerate() {
            if mat.shape() != (n, t) {
                return Err(Error::DimensionMismatch(format!(
                    "covariate {d} is {}x{} but the outcome matrix is {n}x{t}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        if unit_ids.len() != n {
            return Err(Error::InvalidPanel(format!(
                "{} unit ids for {n} units",
                unit_ids.len()
            )));
        }
        if time_ids.len() != t {
            return Err(Error::InvalidPanel(format!(
                "{} time ids for {t} time periods",
                time_ids.len()
            )));
        }
        if !naturally_ascending(&time_ids) {
            return Err(Error::InvalidPanel(
                "time ids must be strictly increasing under their natural order".into(),
            ));
        }
        if clustering.n_units() != n {
            return Err(Error::InvalidClustering(format!(
                "clustering covers {} units but the panel has {n}",
                clustering.n_units()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidPanel(
                "panel matrices must be finite (no missing entries)".into(),
            ));
        }
        Ok(Self {
            y,
            x,
            unit_ids,
            time_ids,
            clustering,
        })
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.len()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }
}

/// One cluster's least-squares fit on the augmented design.
#[derive(Debug, Clone)]
pub struct ClusterFit {
    /// Index of the cluster this fit belongs to.
    pub cluster: usize,
    /// Augmented design columns retained after pivot filtering, ascending.
    /// Empty when the cluster's design has no usable columns, in which case
    /// the residuals are the outcomes unchanged.
    pub kept_columns: Vec<usize>,
    /// Numerical rank of the cluster's augmented design.
    pub rank: usize,
    /// Residuals, `|C_m|×T`, rows in the cluster's ascending unit order.
    pub residuals: DMatrix<f64>,
}

/// Append the transformed covariates `X⁽ᵈ⁾·P` after the originals.
///
/// The output keeps a stable order: the `D` original matrices first, then the
/// `D` transformed ones.
pub fn augment_design(x: &[DMatrix<f64>], p: &Invariance) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend(x.iter().cloned());
    for mat in x {
        out.push(p.apply(mat)?);
    }
    Ok(out)
}

/// Pivot threshold for dropping collinear design columns: columns whose pivot
/// magnitude is at most `1e-8 · sqrt(n_obs)` times the largest pivot are
/// removed, which makes the drop deterministic.
fn rank_tolerance(n_obs: usize) -> f64 {
    1e-8 * (n_obs as f64).sqrt()
}

/// Vectorize a cluster block unit-major, time-minor: unit `i`'s `T` entries
/// are contiguous.
fn vectorize_cluster(mat: &DMatrix<f64>, members: &[usize]) -> DVector<f64> {
    let t = mat.ncols();
    let mut v = DVector::zeros(members.len() * t);
    for (pos, &unit) in members.iter().enumerate() {
        for tt in 0..t {
            v[pos * t + tt] = mat[(unit, tt)];
        }
    }
    v
}

fn unvectorize_cluster(v: &DVector<f64>, n_units: usize, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_units, t, |i, j| v[i * t + j])
}

/// Least squares of `y` on the columns of `design` (assumed full column rank),
/// returning the residual vector. With zero columns this is `y` itself.
fn residualize(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if design.ncols() == 0 {
        return Ok(y.clone());
    }
    let qr = design.clone().qr();
    let qty = qr.q().transpose() * y;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("kept design columns are singular".into()))?;
    Ok(y - design * beta)
}

/// Fit cluster `m` of the panel on the augmented design and return its
/// residuals.
///
/// The cluster's `|C_m|·T` observations are vectorized unit-major/time-minor
/// and regressed on the vectorized augmented columns restricted to the
/// cluster. Columns failing the pivot threshold are dropped; the fit is then
/// redone on the kept columns only, so refitting with `kept_columns` is
/// bit-for-bit reproducible.
pub fn cluster_fit(
    panel: &PanelData,
    augmented: &[DMatrix<f64>],
    m: usize,
) -> Result<ClusterFit> {
    let t = panel.n_times();
    for (d, mat) in augmented.iter().enumerate() {
        if mat.shape() != (panel.n_units(), t) {
            return Err(Error::DimensionMismatch(format!(
                "augmented column {d} has shape {}x{}, expected {}x{t}",
                mat.nrows(),
                mat.ncols(),
                panel.n_units()
            )));
        }
    }
    let members = panel.clustering().members(m);
    let n_obs = members.len() * t;
    let y = vectorize_cluster(panel.y(), members);

    let k = augmented.len();
    if k == 0 {
        return Ok(ClusterFit {
            cluster: m,
            kept_columns: Vec::new(),
            rank: 0,
            residuals: unvectorize_cluster(&y, members.len(), t),
        });
    }

    let mut design = DMatrix::zeros(n_obs, k);
    for (col, mat) in augmented.iter().enumerate() {
        design.set_column(col, &vectorize_cluster(mat, members));
    }

    let kept = select_columns(&design, rank_tolerance(n_obs));
    let rank = kept.len();
    if rank >= n_obs {
        return Err(Error::DegenerateCluster {
            cluster: m,
            n_obs,
            rank,
        });
    }

    let reduced = design.select_columns(kept.iter());
    let resid = residualize(&reduced, &y)?;
    Ok(ClusterFit {
        cluster: m,
        kept_columns: kept,
        rank,
        residuals: unvectorize_cluster(&resid, members.len(), t),
    })
}

/// Column-pivoted QR rank filter: returns the ascending indices of the
/// columns whose pivots clear `tol · max_pivot`.
fn select_columns(design: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let k = design.ncols();
    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let diag_len = r.nrows().min(r.ncols());
    let pivots: Vec<f64> = (0..diag_len).map(|i| r[(i, i)].abs()).collect();
    let max_pivot = pivots.iter().cloned().fold(0.0f64, f64::max);
    if max_pivot == 0.0 {
        return Vec::new();
    }
    let mut rank = 0;
    for &p in &pivots {
        if p > tol * max_pivot {
            rank += 1;
        } else {
            break;
        }
    }
    // Recover the column permutation by permuting an index row.
    let mut order = RowDVector::<usize>::from_iterator(k, 0..k);
    qr.p().permute_columns(&mut order);
    let mut kept: Vec<usize> = order.iter().copied().take(rank).collect();
    kept.sort_unstable();
    kept
}
