//! Shared test oracles, independent of the library's fast paths.

use mosaic_core::invariance::Invariance;
use mosaic_core::mosaic::{
    mosaic_randomize, quadratic_stat, MosaicResiduals, SignAssignment, StatWeights,
};

/// Statistic of every one of the `2^M` sign assignments, each evaluated by
/// materializing the randomized residual matrix and calling the plain
/// statistic. Deliberately avoids the pair-product fast path.
pub fn enumerate_statistics(
    resid: &MosaicResiduals,
    invariance: &Invariance,
    weights: &StatWeights,
) -> Vec<f64> {
    let m = resid.clustering().n_clusters();
    assert!(m <= 16, "enumeration is exponential in the cluster count");
    (0..(1u32 << m))
        .map(|mask| {
            let bits = (0..m).map(|c| (mask >> c) & 1 == 1).collect();
            let signs = SignAssignment::from_bits(bits);
            let materialized = mosaic_randomize(resid, invariance, &signs).unwrap();
            quadratic_stat(&materialized, weights)
        })
        .collect()
}

/// Exact permutation p-value over the full sign group (identity included).
pub fn enumeration_p_value(observed: f64, all_statistics: &[f64]) -> f64 {
    let count = all_statistics.iter().filter(|&&s| observed <= s).count();
    count as f64 / all_statistics.len() as f64
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
#[allow(dead_code)]
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] <= x {
            i += 1;
        }
        while j < m && sb[j] <= x {
            j += 1;
        }
        let gap = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(gap);
    }
    let effective = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = effective * d;
    // Kolmogorov tail series.
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
