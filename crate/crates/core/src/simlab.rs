//! Synthetic data-generating processes and Monte Carlo drivers.
//!
//! Four error families cover the regimes of interest: an autocorrelated,
//! non-stationary process with cluster-common shocks (the hard robustness
//! case), an exactly pairwise-exchangeable null, a cross-cluster
//! contamination alternative, and an i.i.d. Gaussian baseline. The drivers
//! measure p-value calibration and how well the randomization distribution
//! of the centered statistic tracks its marginal law.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::invariance::Invariance;
use crate::mosaic::{
    default_weights, mosaic_resid, mosaic_test, PairInnerProducts, SignAssignment, Statistic,
};
use crate::panel::{Clustering, PanelData};
use crate::parallel::try_map_indexed;
use crate::rng::{derive_seed, replicate_rng, root_rng, sample_laplace};

/// Error family of a synthetic panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpFamily {
    /// AR(1) errors with Laplace innovations, `t^{1/4}` scale growth, and a
    /// cluster-common Gaussian shock per (cluster, time). Autocorrelated,
    /// non-stationary, cluster-correlated — but cluster independent.
    Robustness324,
    /// Errors exactly exchangeable within adjacent time pairs, with a
    /// within-cluster common factor and pair-level heteroskedasticity.
    LocallyExchangeable,
    /// `ε = γ + 1(t ≤ T₀)·λ` with a single shared disturbance `λ`: cluster
    /// independence fails across all clusters, yet pair exchangeability
    /// holds exactly when `T₀` is even.
    ClusterContaminated,
    /// Independent standard normal errors.
    IidGaussian,
}

impl std::fmt::Display for DgpFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DgpFamily::Robustness324 => "robustness324",
            DgpFamily::LocallyExchangeable => "locally-exchangeable",
            DgpFamily::ClusterContaminated => "cluster-contaminated",
            DgpFamily::IidGaussian => "iid-gaussian",
        };
        f.write_str(name)
    }
}

/// A synthetic panel specification.
#[derive(Debug, Clone, Serialize)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub m: usize,
    /// AR coefficient, in `[0, 1)`. Only `Robustness324` uses it.
    pub rho: f64,
    pub family: DgpFamily,
    /// Coefficient on the generated covariate.
    pub beta: f64,
    /// Scale of the cluster-common shock in `Robustness324` (1 = as
    /// designed, 0 = none).
    pub cluster_noise: f64,
    /// Contamination horizon `T₀` for `ClusterContaminated`; defaults to `T`.
    pub t0: Option<usize>,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(
        n: usize,
        t: usize,
        m: usize,
        rho: f64,
        family: DgpFamily,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            n,
            t,
            m,
            rho,
            family,
            beta: 1.0,
            cluster_noise: 1.0,
            t0: None,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_cluster_noise(mut self, scale: f64) -> Self {
        self.cluster_noise = scale;
        self
    }

    pub fn with_t0(mut self, t0: usize) -> Self {
        self.t0 = Some(t0);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::InvalidSpec("n and t must be positive".into()));
        }
        if self.m < 2 || self.m > self.n {
            return Err(Error::InvalidSpec(format!(
                "need 2 <= m <= n (got m={}, n={})",
                self.m, self.n
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidSpec(format!(
                "rho must lie in [0, 1) (got {})",
                self.rho
            )));
        }
        if self.family == DgpFamily::Robustness324 && !self.n.is_multiple_of(self.m) {
            return Err(Error::InvalidSpec(format!(
                "robustness324 uses evenly sized clusters: m={} must divide n={}",
                self.m, self.n
            )));
        }
        if let Some(t0) = self.t0 {
            if t0 > self.t {
                return Err(Error::InvalidSpec(format!("t0={t0} exceeds t={}", self.t)));
            }
        }
        Ok(())
    }

    pub fn clustering(&self) -> Result<Clustering> {
        Clustering::contiguous(self.n, self.m)
    }
}

/// A generated panel with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub panel: PanelData,
    pub true_beta: f64,
    /// The error matrix before the covariate effect was added.
    pub errors: DMatrix<f64>,
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw the error matrix for a spec. Exposed separately so the recursion can
/// be exercised at `t = 1`, below the panel type's minimum.
pub fn gen_errors(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (n, t, m) = (spec.n, spec.t, spec.m);
    let clustering = spec.clustering()?;
    let mut eps = DMatrix::zeros(n, t);
    match spec.family {
        DgpFamily::IidGaussian => {
            for i in 0..n {
                for s in 0..t {
                    eps[(i, s)] = randn(rng);
                }
            }
        }
        DgpFamily::Robustness324 => {
            // Cluster-common shocks, one per (cluster, time).
            let mut eta = DMatrix::zeros(m, t);
            for c in 0..m {
                for s in 0..t {
                    eta[(c, s)] = spec.cluster_noise * randn(rng);
                }
            }
            let scale = (1.0 - spec.rho * spec.rho).sqrt();
            for i in 0..n {
                let c = clustering.cluster_of(i);
                // Stationary start of the homoskedastic core (variance 2).
                let mut prev = sample_laplace(rng);
                for s in 0..t {
                    let time = (s + 1) as f64;
                    let value = spec.rho * prev
                        + time.powf(0.25) * scale * sample_laplace(rng)
                        + eta[(c, s)];
                    eps[(i, s)] = value;
                    prev = value;
                }
            }
        }
        DgpFamily::LocallyExchangeable => {
            // Adjacent time pairs are built from i.i.d. (factor, noise)
            // draws, so swapping the two columns of any pair leaves the
            // joint law of a cluster unchanged. Pair-level scales add
            // heteroskedasticity without breaking the exchangeability.
            let pair_scale = |p: usize| (1.0 + 0.5 * p as f64).sqrt();
            for c in 0..m {
                let members = clustering.members(c).to_vec();
                let mut p = 0;
                let mut s = 0;
                while s + 1 < t {
                    let scale = pair_scale(p);
                    let h1 = randn(rng);
                    let h2 = randn(rng);
                    for &i in &members {
                        let u1 = randn(rng);
                        let u2 = randn(rng);
                        eps[(i, s)] = scale * (0.6 * h1 + 0.8 * u1);
                        eps[(i, s + 1)] = scale * (0.6 * h2 + 0.8 * u2);
                    }
                    p += 1;
                    s += 2;
                }
                if s < t {
                    // Odd horizon: the last time is self-paired.
                    let scale = pair_scale(p);
                    let h = randn(rng);
                    for &i in &members {
                        eps[(i, s)] = scale * (0.6 * h + 0.8 * randn(rng));
                    }
                }
            }
        }
        DgpFamily::ClusterContaminated => {
            let t0 = spec.t0.unwrap_or(t);
            let lambda = randn(rng);
            for i in 0..n {
                for s in 0..t {
                    eps[(i, s)] = randn(rng) + if s < t0 { lambda } else { 0.0 };
                }
            }
        }
    }
    Ok(eps)
}

/// Generate a full panel: `Y = β·X + ε` with a single covariate.
///
/// The covariate is i.i.d. standard normal except for `ClusterContaminated`,
/// where it carries a common time factor (`x = w_t + ξ`) so that the shared
/// disturbance actually distorts naive standard errors.
pub fn gen_panel(spec: &DgpSpec) -> Result<GeneratedPanel> {
    if spec.t < 2 {
        return Err(Error::InvalidSpec(
            "panels need at least two time periods".into(),
        ));
    }
    let mut rng = root_rng(spec.seed);
    let errors = gen_errors(spec, &mut rng)?;
    let (n, t) = (spec.n, spec.t);
    let mut x = DMatrix::zeros(n, t);
    match spec.family {
        DgpFamily::ClusterContaminated => {
            let w: Vec<f64> = (0..t).map(|_| randn(&mut rng)).collect();
            for i in 0..n {
                for s in 0..t {
                    x[(i, s)] = w[s] + randn(&mut rng);
                }
            }
        }
        _ => {
            for i in 0..n {
                for s in 0..t {
                    x[(i, s)] = randn(&mut rng);
                }
            }
        }
    }
    let y = spec.beta * &x + &errors;
    let panel = PanelData::new(
        y,
        vec![x],
        (0..n).map(|i| format!("u{i}")).collect(),
        (1..=t).map(|s| s.to_string()).collect(),
        spec.clustering()?,
    )?;
    Ok(GeneratedPanel {
        panel,
        true_beta: spec.beta,
        errors,
    })
}

/// One-sample Kolmogorov–Smirnov distance of `values` from Uniform(0, 1).
pub fn ks_uniform_distance(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let hi = (i as f64 + 1.0) / n - p;
            let lo = p - i as f64 / n;
            hi.max(lo)
        })
        .fold(0.0, f64::max)
}

/// Rejection rates of the mosaic test on repeated draws from a spec.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationRow {
    pub alpha: f64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationTable {
    pub rows: Vec<CalibrationRow>,
    /// KS distance of the simulated p-values from Uniform(0, 1).
    pub ks_distance: f64,
    pub p_values: Vec<f64>,
    pub n_sims: usize,
    pub r: usize,
    pub seed: u64,
}

impl CalibrationTable {
    pub fn rejection_at(&self, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|row| (row.alpha - alpha).abs() < 1e-12)
            .map(|row| row.rejection_rate)
    }

    /// Tidy CSV: one row per simulation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sim,p_value\n");
        for (i, p) in self.p_values.iter().enumerate() {
            out.push_str(&format!("{i},{p}\n"));
        }
        out
    }
}

/// Run `n_sims` independent panels from the spec and test each at `r`
/// replicates with the signed quadratic statistic and uniform weights.
pub fn run_null_calibration(
    spec: &DgpSpec,
    invariance: &Invariance,
    r: usize,
    n_sims: usize,
    alphas: &[f64],
) -> Result<CalibrationTable> {
    if n_sims == 0 {
        return Err(Error::InvalidSpec("n_sims must be at least 1".into()));
    }
    if invariance.t() != spec.t {
        return Err(Error::DimensionMismatch(format!(
            "invariance acts on {} time periods but the spec has {}",
            invariance.t(),
            spec.t
        )));
    }
    let p_values = try_map_indexed(n_sims, |s| {
        let sim_seed = derive_seed(spec.seed, s as u64);
        let generated = gen_panel(&spec.clone().with_seed(sim_seed))?;
        let weights = default_weights(generated.panel.clustering());
        let result = mosaic_test(
            &generated.panel,
            invariance,
            &Statistic::quadratic(weights),
            r,
            derive_seed(sim_seed, u64::MAX),
        )?;
        Ok::<f64, Error>(result.p_value)
    })?;

    let rows = alphas
        .iter()
        .map(|&alpha| CalibrationRow {
            alpha,
            rejection_rate: p_values.iter().filter(|&&p| p <= alpha).count() as f64
                / n_sims as f64,
        })
        .collect();
    Ok(CalibrationTable {
        rows,
        ks_distance: ks_uniform_distance(&p_values),
        p_values,
        n_sims,
        r,
        seed: spec.seed,
    })
}

/// Raw moments plus skewness of a sample or distribution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Moments {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub skewness: f64,
}

impl Moments {
    pub fn of_sample(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let m1 = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| v * v).sum::<f64>() / n;
        let m3 = values.iter().map(|v| v * v * v).sum::<f64>() / n;
        let var = (m2 - m1 * m1).max(0.0);
        let c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
        Moments {
            m1,
            m2,
            m3,
            skewness: c3 / var.powf(1.5),
        }
    }
}

/// Comparison of the marginal law of the centered statistic against one
/// dataset's randomization distribution.
#[derive(Debug, Clone, Serialize)]
pub struct RandVsMarginal {
    /// Centered, scaled statistic across independent simulations.
    pub delta_draws: Vec<f64>,
    /// Randomization draws for the first simulated dataset, same scaling.
    pub randomization_draws: Vec<f64>,
    pub delta_moments: Moments,
    /// Empirical moments of the randomization draws.
    pub randomization_moments: Moments,
    /// Exact moments of the randomization distribution (no sampling noise):
    /// the sign symmetry gives `m1 = 0`, `m2 = Σδ²/σ²`, and
    /// `m3 = 6·Σ_{a<b<c} δ_ab δ_bc δ_ac / σ³`.
    pub randomization_moments_exact: Moments,
    /// `(q, |Q_q(Δ) − Q_q(Δ̃)| / |Q_q(Δ)|)` at q ∈ {0.9, 0.95, 0.99}.
    pub quantile_gaps: Vec<(f64, f64)>,
    /// Cross-simulation sample standard deviation used for scaling.
    pub sigma: f64,
    pub n_sims: usize,
    pub r: usize,
}

fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

impl RandVsMarginal {
    /// Plot-ready histogram: shared equal-width bins over both samples.
    pub fn histogram_csv(&self, bins: usize) -> String {
        let all = self
            .delta_draws
            .iter()
            .chain(self.randomization_draws.iter());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in all {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let mut marginal = vec![0usize; bins];
        let mut randomization = vec![0usize; bins];
        let bucket = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
        for &v in &self.delta_draws {
            marginal[bucket(v)] += 1;
        }
        for &v in &self.randomization_draws {
            randomization[bucket(v)] += 1;
        }
        let mut out = String::from("bin_lo,bin_hi,marginal_count,randomization_count\n");
        for b in 0..bins {
            out.push_str(&format!(
                "{},{},{},{}\n",
                lo + b as f64 * width,
                lo + (b + 1) as f64 * width,
                marginal[b],
                randomization[b]
            ));
        }
        out
    }

    /// Tidy CSV of the raw draws (one row per draw, labeled by source).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,draw\n");
        for v in &self.delta_draws {
            out.push_str(&format!("marginal,{v}\n"));
        }
        for v in &self.randomization_draws {
            out.push_str(&format!("randomization,{v}\n"));
        }
        out
    }
}

/// Compare the marginal law of the centered statistic (over `n_sims`
/// independent panels) with the randomization distribution of the first
/// panel (`r` sign draws). The scale `σ` is estimated as the
/// cross-simulation sample standard deviation of the centered statistic.
pub fn run_randomization_vs_marginal(
    spec: &DgpSpec,
    invariance: &Invariance,
    r: usize,
    n_sims: usize,
) -> Result<RandVsMarginal> {
    if n_sims < 2 {
        return Err(Error::InvalidSpec("n_sims must be at least 2".into()));
    }
    if r < 1 {
        return Err(Error::InvalidReplicates { min: 1, got: r });
    }
    // Centered statistic S − E[S̃] per simulation; keep the per-pair deltas
    // of the first dataset for its randomization distribution.
    let per_sim: Vec<(f64, Option<DMatrix<f64>>)> = try_map_indexed(n_sims, |s| {
        let sim_seed = derive_seed(spec.seed, s as u64);
        let generated = gen_panel(&spec.clone().with_seed(sim_seed))?;
        let weights = default_weights(generated.panel.clustering());
        let resid = mosaic_resid(&generated.panel, invariance)?;
        let pairs = PairInnerProducts::compute(resid.residuals(), &weights, invariance)?;
        let m = generated.panel.clustering().n_clusters();
        let mut centered = 0.0;
        let mut deltas = if s == 0 {
            Some(DMatrix::zeros(m, m))
        } else {
            None
        };
        for a in 0..m {
            for b in (a + 1)..m {
                let d = pairs.delta(a, b);
                centered += d;
                if let Some(dm) = deltas.as_mut() {
                    dm[(a, b)] = d;
                }
            }
        }
        Ok::<(f64, Option<DMatrix<f64>>), Error>((centered, deltas))
    })?;

    let centered: Vec<f64> = per_sim.iter().map(|(c, _)| *c).collect();
    let mean = centered.iter().sum::<f64>() / n_sims as f64;
    let sigma = (centered.iter().map(|c| (c - mean).powi(2)).sum::<f64>()
        / (n_sims as f64 - 1.0))
        .sqrt();
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::ZeroVariance(
            "centered statistic has zero variance across simulations".into(),
        ));
    }
    let delta_draws: Vec<f64> = centered.iter().map(|c| c / sigma).collect();

    let deltas = per_sim[0].1.as_ref().expect("first sim keeps its deltas");
    let m = deltas.nrows();
    let rand_seed = derive_seed(spec.seed, u64::MAX - 1);
    let randomization_draws: Vec<f64> = (0..r)
        .map(|k| {
            let mut rng = replicate_rng(rand_seed, k as u64);
            let signs = SignAssignment::sample(m, &mut rng);
            let mut total = 0.0;
            for a in 0..m {
                for b in (a + 1)..m {
                    total += signs.sign(a) * signs.sign(b) * deltas[(a, b)];
                }
            }
            total / sigma
        })
        .collect();

    // Exact randomization moments for the first dataset.
    let mut sum_sq = 0.0;
    for a in 0..m {
        for b in (a + 1)..m {
            sum_sq += deltas[(a, b)] * deltas[(a, b)];
        }
    }
    let mut triangle = 0.0;
    for a in 0..m {
        for b in (a + 1)..m {
            for c in (b + 1)..m {
                triangle += deltas[(a, b)] * deltas[(b, c)] * deltas[(a, c)];
            }
        }
    }
    let m2_exact = sum_sq / (sigma * sigma);
    let m3_exact = 6.0 * triangle / (sigma * sigma * sigma);
    let randomization_moments_exact = Moments {
        m1: 0.0,
        m2: m2_exact,
        m3: m3_exact,
        skewness: m3_exact / m2_exact.powf(1.5),
    };

    let mut sorted_delta = delta_draws.clone();
    sorted_delta.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let mut sorted_rand = randomization_draws.clone();
    sorted_rand.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let quantile_gaps = [0.9, 0.95, 0.99]
        .iter()
        .map(|&q| {
            let qd = empirical_quantile(&sorted_delta, q);
            let qr = empirical_quantile(&sorted_rand, q);
            (q, (qd - qr).abs() / qd.abs())
        })
        .collect();

    Ok(RandVsMarginal {
        delta_moments: Moments::of_sample(&delta_draws),
        randomization_moments: Moments::of_sample(&randomization_draws),
        randomization_moments_exact,
        quantile_gaps,
        delta_draws,
        randomization_draws,
        sigma,
        n_sims,
        r,
    })
}
