//! Stable JSON output schemas. Every artifact carries the fully resolved
//! configuration and seed so results can be re-derived exactly.

use serde::Serialize;

/// Configuration echoed into every output.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub input: Option<String>,
    pub invariance: String,
    pub statistic: Option<String>,
    pub weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "R")]
    pub r: usize,
    pub seed: u64,
    pub z_column: Option<String>,
    pub unit_fe: bool,
    pub time_fe: bool,
    pub merge_clusters: Option<usize>,
    pub n_units: usize,
    pub n_times: usize,
    pub n_clusters: usize,
    /// Resolved time order; pair-swap invariances depend on it.
    pub time_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct TestOutput {
    pub p_value: f64,
    pub statistic: f64,
    #[serde(rename = "R")]
    pub r: usize,
    pub seed: u64,
    pub config: ResolvedConfig,
}

#[derive(Debug, Serialize)]
pub struct CiOutput {
    pub beta_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub se: f64,
    pub alpha: f64,
    #[serde(rename = "R")]
    pub r: usize,
    pub seed: u64,
    pub degenerate_replicates: usize,
    pub config: ResolvedConfig,
}
