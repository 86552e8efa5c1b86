//! Mosaic residuals, sign randomization, and the permutation test.
//!
//! Residuals are estimated cluster by cluster on the invariance-augmented
//! design, which makes each residual block invariant in distribution to the
//! transform and keeps the blocks independent under the null. Randomized
//! copies re-apply the transform to a random subset of clusters; comparing a
//! statistic of the observed residuals against its randomized draws yields a
//! finite-sample valid p-value for the cluster-independence null.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariance::Invariance;
use crate::panel::{augment_design, cluster_fit, ClusterFit, Clustering, PanelData};
use crate::parallel::{map_indexed, try_map_indexed};
use crate::rng::replicate_rng;

/// Per-cluster residuals of an outcome on the augmented design.
#[derive(Debug, Clone)]
pub struct MosaicResiduals {
    /// `N×T` residual matrix in original unit order.
    residuals: DMatrix<f64>,
    /// Per-cluster fit metadata (kept columns, ranks).
    fits: Vec<ClusterFit>,
    clustering: Clustering,
}

impl MosaicResiduals {
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    pub fn fits(&self) -> &[ClusterFit] {
        &self.fits
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    /// Consume and return the residual matrix.
    pub fn into_residuals(self) -> DMatrix<f64> {
        self.residuals
    }
}

/// Residuals of `outcome` on the invariance-augmented covariates, estimated
/// separately within each cluster.
///
/// This is the workhorse behind both the test (residualizing the outcome)
/// and the confidence interval (residualizing the covariate of interest).
pub fn mosaic_resid_with(
    outcome: &DMatrix<f64>,
    covariates: &[DMatrix<f64>],
    clustering: &Clustering,
    invariance: &Invariance,
    unit_ids: &[String],
    time_ids: &[String],
) -> Result<MosaicResiduals> {
    let panel = PanelData::new(
        outcome.clone(),
        covariates.to_vec(),
        unit_ids.to_vec(),
        time_ids.to_vec(),
        clustering.clone(),
    )?;
    mosaic_resid(&panel, invariance)
}

/// Residuals of the panel's outcome on the invariance-augmented design.
pub fn mosaic_resid(panel: &PanelData, invariance: &Invariance) -> Result<MosaicResiduals> {
    if invariance.t() != panel.n_times() {
        return Err(Error::DimensionMismatch(format!(
            "invariance acts on {} time periods but the panel has {}",
            invariance.t(),
            panel.n_times()
        )));
    }
    let augmented = augment_design(panel.x(), invariance)?;
    let m = panel.clustering().n_clusters();
    let fits = try_map_indexed(m, |c| cluster_fit(panel, &augmented, c))?;

    let mut residuals = DMatrix::zeros(panel.n_units(), panel.n_times());
    for fit in &fits {
        let members = panel.clustering().members(fit.cluster);
        for (pos, &unit) in members.iter().enumerate() {
            residuals.row_mut(unit).copy_from(&fit.residuals.row(pos));
        }
    }
    Ok(MosaicResiduals {
        residuals,
        fits,
        clustering: panel.clustering().clone(),
    })
}

/// One draw of per-cluster transform indicators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignAssignment {
    bits: Vec<bool>,
}

impl SignAssignment {
    /// Sample `m` independent fair bits.
    pub fn sample<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..m).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Whether cluster `m` gets transformed.
    pub fn bit(&self, m: usize) -> bool {
        self.bits[m]
    }

    /// Sign `z_m = 2·b_m − 1` as `±1`.
    pub fn sign(&self, m: usize) -> f64 {
        if self.bits[m] {
            1.0
        } else {
            -1.0
        }
    }
}

/// Apply the invariance to the row blocks of `mat` selected by `signs`.
pub fn randomize_matrix(
    mat: &DMatrix<f64>,
    clustering: &Clustering,
    invariance: &Invariance,
    signs: &SignAssignment,
) -> Result<DMatrix<f64>> {
    if signs.len() != clustering.n_clusters() {
        return Err(Error::DimensionMismatch(format!(
            "{} sign bits for {} clusters",
            signs.len(),
            clustering.n_clusters()
        )));
    }
    if mat.nrows() != clustering.n_units() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows but the clustering covers {} units",
            mat.nrows(),
            clustering.n_units()
        )));
    }
    let mut out = mat.clone_owned();
    for m in 0..clustering.n_clusters() {
        if !signs.bit(m) {
            continue;
        }
        let members = clustering.members(m);
        let block = mat.select_rows(members.iter());
        let transformed = invariance.apply(&block)?;
        for (pos, &unit) in members.iter().enumerate() {
            out.row_mut(unit).copy_from(&transformed.row(pos));
        }
    }
    Ok(out)
}

/// Randomized residual matrix: cluster `m` is transformed when its bit is set.
pub fn mosaic_randomize(
    resid: &MosaicResiduals,
    invariance: &Invariance,
    signs: &SignAssignment,
) -> Result<DMatrix<f64>> {
    randomize_matrix(resid.residuals(), resid.clustering(), invariance, signs)
}

/// Symmetric inter-cluster weights for the quadratic statistic.
///
/// Entries within a cluster are zero and every cluster pair satisfies the
/// unit normalization `Σ s_ij² = 1`.
#[derive(Debug, Clone)]
pub struct StatWeights {
    s: DMatrix<f64>,
    clustering: Clustering,
}

impl StatWeights {
    /// Validate an explicit weight matrix against its clustering.
    pub fn new(s: DMatrix<f64>, clustering: Clustering) -> Result<Self> {
        let n = clustering.n_units();
        if s.shape() != (n, n) {
            return Err(Error::InvalidWeights(format!(
                "weight matrix is {}x{}, expected {n}x{n}",
                s.nrows(),
                s.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidWeights(format!(
                        "weights are not symmetric at ({i},{j})"
                    )));
                }
                if clustering.cluster_of(i) == clustering.cluster_of(j) && s[(i, j)] != 0.0 {
                    return Err(Error::InvalidWeights(format!(
                        "weight ({i},{j}) is nonzero inside cluster {}",
                        clustering.cluster_of(i)
                    )));
                }
            }
        }
        let m = clustering.n_clusters();
        for a in 0..m {
            for b in (a + 1)..m {
                let mut sum = 0.0;
                for &i in clustering.members(a) {
                    for &j in clustering.members(b) {
                        sum += s[(i, j)] * s[(i, j)];
                    }
                }
                if (sum - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidWeights(format!(
                        "cluster pair ({a},{b}) has squared weight sum {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { s, clustering })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }
}

/// Uniform weights: `s_ij = 1/sqrt(|C_m|·|C_m'|)` across each cluster pair,
/// which satisfies the per-pair unit normalization.
pub fn default_weights(clustering: &Clustering) -> StatWeights {
    let n = clustering.n_units();
    let sizes = clustering.sizes();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (clustering.cluster_of(i), clustering.cluster_of(j));
            if a != b {
                s[(i, j)] = 1.0 / ((sizes[a] * sizes[b]) as f64).sqrt();
            }
        }
    }
    StatWeights { s, clustering: clustering.clone() }
}

/// Weighted sum of inter-cluster residual covariances:
/// `S = Σ_m Σ_{i∈C_m} Σ_{j∉C_m} s_ij ⟨ε_i, ε_j⟩` (each unordered pair counted
/// twice).
pub fn quadratic_stat(resid: &DMatrix<f64>, weights: &StatWeights) -> f64 {
    let n = resid.nrows();
    debug_assert_eq!(n, weights.clustering.n_units());
    let gram = resid * resid.transpose();
    let mut total = 0.0;
    for i in 0..n {
        let ci = weights.clustering.cluster_of(i);
        for j in 0..n {
            if weights.clustering.cluster_of(j) != ci {
                total += weights.s[(i, j)] * gram[(i, j)];
            }
        }
    }
    total
}

/// Change in the weighted inter-cluster covariance of pair `(m, m')` caused
/// by the transform: `δ = Σ_{i∈C_m, j∈C_m'} s_ij ε_iᵀ (I − P) ε_j`.
pub fn delta_pair(
    resid: &DMatrix<f64>,
    weights: &StatWeights,
    invariance: &Invariance,
    m: usize,
    m_prime: usize,
) -> Result<f64> {
    if m == m_prime {
        return Err(Error::InvalidClustering(
            "delta is defined for distinct clusters".into(),
        ));
    }
    let transformed = invariance.apply(resid)?;
    let mut delta = 0.0;
    for &i in weights.clustering.members(m) {
        for &j in weights.clustering.members(m_prime) {
            let plain = resid.row(i).dot(&resid.row(j));
            let moved = resid.row(i).dot(&transformed.row(j));
            delta += weights.s[(i, j)] * (plain - moved);
        }
    }
    Ok(delta)
}

/// Per-pair inner products that let randomized statistics be recomputed in
/// `O(M²)` per replicate: `same[(a,b)]` is the pair's weighted covariance as
/// observed, `flipped[(a,b)]` the covariance after transforming one side.
#[derive(Debug, Clone)]
pub struct PairInnerProducts {
    same: DMatrix<f64>,
    flipped: DMatrix<f64>,
    m: usize,
}

impl PairInnerProducts {
    pub fn compute(
        resid: &DMatrix<f64>,
        weights: &StatWeights,
        invariance: &Invariance,
    ) -> Result<Self> {
        let clustering = &weights.clustering;
        let m = clustering.n_clusters();
        let transformed = invariance.apply(resid)?;
        let mut same = DMatrix::zeros(m, m);
        let mut flipped = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in (a + 1)..m {
                let mut s_ab = 0.0;
                let mut f_ab = 0.0;
                for &i in clustering.members(a) {
                    for &j in clustering.members(b) {
                        let w = weights.s[(i, j)];
                        if w == 0.0 {
                            continue;
                        }
                        s_ab += w * resid.row(i).dot(&resid.row(j));
                        f_ab += w * resid.row(i).dot(&transformed.row(j));
                    }
                }
                same[(a, b)] = s_ab;
                flipped[(a, b)] = f_ab;
            }
        }
        Ok(Self { same, flipped, m })
    }

    /// Observed statistic `S` (each unordered pair counted twice).
    pub fn observed(&self) -> f64 {
        let mut total = 0.0;
        for a in 0..self.m {
            for b in (a + 1)..self.m {
                total += 2.0 * self.same[(a, b)];
            }
        }
        total
    }

    /// Statistic of the randomized residuals for one sign assignment.
    pub fn randomized(&self, signs: &SignAssignment) -> f64 {
        let mut total = 0.0;
        for a in 0..self.m {
            for b in (a + 1)..self.m {
                let v = if signs.bit(a) == signs.bit(b) {
                    self.same[(a, b)]
                } else {
                    self.flipped[(a, b)]
                };
                total += 2.0 * v;
            }
        }
        total
    }

    /// Mean of the randomized statistic over all sign assignments,
    /// `(same + flipped)` summed over pairs.
    pub fn randomization_mean(&self) -> f64 {
        let mut total = 0.0;
        for a in 0..self.m {
            for b in (a + 1)..self.m {
                total += self.same[(a, b)] + self.flipped[(a, b)];
            }
        }
        total
    }

    /// `δ_{a,b} = same − flipped` for a pair.
    pub fn delta(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.same[(lo, hi)] - self.flipped[(lo, hi)]
    }
}

/// A user-supplied statistic evaluated on an `N×T` residual matrix.
pub type StatisticFn = Box<dyn Fn(&DMatrix<f64>) -> f64 + Send + Sync>;

/// Test statistic applied to an `N×T` residual matrix.
pub enum Statistic {
    /// The built-in quadratic statistic; `two_sided` compares `|S|` instead
    /// of the signed value (dependence can be negative).
    Quadratic {
        weights: StatWeights,
        two_sided: bool,
    },
    /// Any user statistic; evaluated on materialized randomized residuals.
    Custom(StatisticFn),
}

impl Statistic {
    pub fn quadratic(weights: StatWeights) -> Self {
        Statistic::Quadratic {
            weights,
            two_sided: false,
        }
    }

    pub fn quadratic_two_sided(weights: StatWeights) -> Self {
        Statistic::Quadratic {
            weights,
            two_sided: true,
        }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&DMatrix<f64>) -> f64 + Send + Sync + 'static,
    {
        Statistic::Custom(Box::new(f))
    }
}

/// Outcome of a mosaic permutation test.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    /// Statistic of the observed residuals.
    pub observed: f64,
    /// Statistic of each randomized residual matrix.
    pub randomized: Vec<f64>,
    /// `(1 + #{r : observed ≤ randomized_r}) / (R + 1)`.
    pub p_value: f64,
    pub seed: u64,
    pub r: usize,
}

/// Run the mosaic permutation test of cluster independence.
///
/// Residuals are estimated once; each of the `r` replicates transforms an
/// independent random subset of clusters (replicate `k` draws from a stream
/// keyed by `k`, so the result is independent of evaluation order).
pub fn mosaic_test(
    panel: &PanelData,
    invariance: &Invariance,
    statistic: &Statistic,
    r: usize,
    seed: u64,
) -> Result<TestResult> {
    if r < 1 {
        return Err(Error::InvalidReplicates { min: 1, got: r });
    }
    let resid = mosaic_resid(panel, invariance)?;
    let m = panel.clustering().n_clusters();

    let (observed, randomized) = match statistic {
        Statistic::Quadratic { weights, two_sided } => {
            if weights.clustering() != panel.clustering() {
                return Err(Error::InvalidWeights(
                    "weights were built for a different clustering".into(),
                ));
            }
            let pairs = PairInnerProducts::compute(resid.residuals(), weights, invariance)?;
            let fold = |v: f64| if *two_sided { v.abs() } else { v };
            let observed = fold(pairs.observed());
            let randomized = map_indexed(r, |k| {
                let mut rng = replicate_rng(seed, k as u64);
                let signs = SignAssignment::sample(m, &mut rng);
                fold(pairs.randomized(&signs))
            });
            (observed, randomized)
        }
        Statistic::Custom(f) => {
            let observed = f(resid.residuals());
            let randomized = try_map_indexed(r, |k| {
                let mut rng = replicate_rng(seed, k as u64);
                let signs = SignAssignment::sample(m, &mut rng);
                let materialized = mosaic_randomize(&resid, invariance, &signs)?;
                Ok::<f64, Error>(f(&materialized))
            })?;
            (observed, randomized)
        }
    };

    let exceed = randomized.iter().filter(|&&v| observed <= v).count();
    let p_value = (1 + exceed) as f64 / (r + 1) as f64;
    Ok(TestResult {
        observed,
        randomized,
        p_value,
        seed,
        r,
    })
}
