//! Error types shared across the crate.

/// Errors produced by panel construction, fitting, and inference.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Panel data violates a structural invariant (shape, ordering, missing cells).
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    /// Clustering is not a valid partition of the units.
    #[error("invalid clustering: {0}")]
    InvalidClustering(String),

    /// A custom transform failed the symmetry or involution check.
    #[error("invalid invariance: {0}")]
    InvalidInvariance(String),

    /// A cluster is too small to leave any residual degrees of freedom.
    #[error(
        "cluster {cluster} has {n_obs} observations but the augmented design has rank {rank}, \
         leaving no residual degrees of freedom; combine it with a neighboring cluster \
         (the CLI flag --merge-clusters does this automatically)"
    )]
    DegenerateCluster {
        cluster: usize,
        n_obs: usize,
        rank: usize,
    },

    /// Statistic weights violate symmetry, zero-diagonal-block, or normalization.
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    /// Replicate count out of range.
    #[error("replicate count must be at least {min} (got {got})")]
    InvalidReplicates { min: usize, got: usize },

    /// Alpha outside (0, 1).
    #[error("alpha must lie strictly between 0 and 1 (got {0})")]
    InvalidAlpha(f64),

    /// The covariate of interest has no variation under the invariance.
    #[error(
        "the covariate of interest has no variation under the invariance after \
         within-cluster adjustment; the interval is undefined"
    )]
    NoLocalVariation,

    /// Pooled design matrix is rank deficient.
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    /// Standard errors were both zero where a ratio needs them positive.
    #[error("zero variance: {0}")]
    ZeroVariance(String),

    /// Fold splitting was asked to run without usable cluster coordinates.
    #[error("missing coordinates: {0}")]
    MissingCoordinates(String),

    /// A simulation spec violates its constraints.
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
