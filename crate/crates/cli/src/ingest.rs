//! Long-format CSV ingestion: pivot to the unit × time grid, attach the
//! clustering, and optionally expand fixed-effect dummies.
//!
//! Required columns: `unit`, `time`, `y`. Optional: one covariate-of-interest
//! column (default name `z`), any number of `x_*` control columns, and a
//! `cluster` column. Units, times, and cluster labels are ordered naturally:
//! numerically when every label parses as a number, lexicographically
//! otherwise.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use mosaic_core::panel::{naturally_ascending, Clustering, PanelData};
use nalgebra::DMatrix;

use crate::{CliError, CliResult};

/// How a file should be pivoted.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Column holding the covariate of interest; `None` means "use `z` if
    /// present". The column is pivoted into [`Ingested::z`] and excluded
    /// from the controls.
    pub z_column: Option<String>,
    /// Append one dummy covariate per unit (constant over time).
    pub unit_fe: bool,
    /// Append one dummy covariate per time period (constant across units).
    pub time_fe: bool,
    /// Greedily merge the smallest clusters until each has at least this
    /// many units.
    pub merge_min_units: Option<usize>,
}

/// A pivoted panel ready to hand to the library.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub y: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
    /// Control matrices: `x_*` columns in header order, then unit dummies,
    /// then time dummies.
    pub x: Vec<DMatrix<f64>>,
    pub x_names: Vec<String>,
    pub unit_ids: Vec<String>,
    pub time_ids: Vec<String>,
    pub clustering: Clustering,
    /// Label of each cluster index (unit label when no cluster column).
    pub cluster_labels: Vec<String>,
    /// Set when the file had no cluster column and unit-level clusters were
    /// assumed.
    pub cluster_warning: Option<String>,
}

impl Ingested {
    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.y.ncols()
    }

    /// Panel for the cluster-independence test: the covariate of interest
    /// (when present) is just another covariate.
    pub fn panel_for_test(&self) -> CliResult<PanelData> {
        let mut covariates = Vec::new();
        if let Some(z) = &self.z {
            covariates.push(z.clone());
        }
        covariates.extend(self.x.iter().cloned());
        Ok(PanelData::new(
            self.y.clone(),
            covariates,
            self.unit_ids.clone(),
            self.time_ids.clone(),
            self.clustering.clone(),
        )?)
    }
}

/// Natural sort: numeric when every label parses, lexicographic otherwise.
fn natural_sort(labels: &mut Vec<String>) {
    let all_numeric = labels.iter().all(|l| l.parse::<f64>().is_ok());
    if all_numeric {
        labels.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap()
                .then_with(|| a.cmp(b))
        });
    } else {
        labels.sort();
    }
    labels.dedup();
}

fn parse_value(raw: &str, column: &str, line: usize) -> CliResult<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        CliError::validation(format!(
            "line {line}: column '{column}' has non-numeric value '{raw}'"
        ))
    })
}

/// Read and pivot a long-format CSV file.
pub fn ingest(path: &Path, options: &IngestOptions) -> CliResult<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let unit_col = col("unit")
        .ok_or_else(|| CliError::validation("missing required column 'unit'"))?;
    let time_col = col("time")
        .ok_or_else(|| CliError::validation("missing required column 'time'"))?;
    let y_col = col("y").ok_or_else(|| CliError::validation("missing required column 'y'"))?;
    let cluster_col = col("cluster");

    let z_name = match &options.z_column {
        Some(name) => {
            col(name).ok_or_else(|| {
                CliError::validation(format!("covariate column '{name}' not found"))
            })?;
            Some(name.clone())
        }
        None => col("z").map(|_| "z".to_string()),
    };
    let z_col = z_name.as_deref().and_then(col);

    let x_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| {
            h.starts_with("x_")
                && Some(*i) != z_col
                && *i != unit_col
                && *i != time_col
                && *i != y_col
        })
        .map(|(i, h)| (i, h.clone()))
        .collect();

    struct Row {
        unit: String,
        time: String,
        y: f64,
        z: Option<f64>,
        x: Vec<f64>,
        cluster: Option<String>,
    }

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 2; // header is line 1
        let get = |c: usize| -> CliResult<&str> {
            record.get(c).ok_or_else(|| {
                CliError::validation(format!("line {line}: too few fields"))
            })
        };
        rows.push(Row {
            unit: get(unit_col)?.to_string(),
            time: get(time_col)?.to_string(),
            y: parse_value(get(y_col)?, "y", line)?,
            z: match z_col {
                Some(c) => Some(parse_value(get(c)?, z_name.as_deref().unwrap(), line)?),
                None => None,
            },
            x: x_cols
                .iter()
                .map(|(c, name)| parse_value(get(*c)?, name, line))
                .collect::<CliResult<Vec<f64>>>()?,
            cluster: match cluster_col {
                Some(c) => Some(get(c)?.to_string()),
                None => None,
            },
        });
    }
    if rows.is_empty() {
        return Err(CliError::validation("file contains no data rows"));
    }

    let mut unit_ids: Vec<String> = rows.iter().map(|r| r.unit.clone()).collect();
    natural_sort(&mut unit_ids);
    let mut time_ids: Vec<String> = rows.iter().map(|r| r.time.clone()).collect();
    natural_sort(&mut time_ids);
    if !naturally_ascending(&time_ids) {
        return Err(CliError::validation(
            "time labels do not admit a strict natural order",
        ));
    }

    let n = unit_ids.len();
    let t = time_ids.len();
    let unit_index: HashMap<&str, usize> = unit_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let time_index: HashMap<&str, usize> = time_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut y = DMatrix::zeros(n, t);
    let mut z = z_col.map(|_| DMatrix::zeros(n, t));
    let mut x: Vec<DMatrix<f64>> = x_cols.iter().map(|_| DMatrix::zeros(n, t)).collect();
    let mut seen = vec![false; n * t];
    let mut unit_cluster: Vec<Option<String>> = vec![None; n];

    for row in &rows {
        let i = unit_index[row.unit.as_str()];
        let j = time_index[row.time.as_str()];
        if seen[i * t + j] {
            return Err(CliError::validation(format!(
                "duplicate cell: unit '{}' at time '{}'",
                row.unit, row.time
            )));
        }
        seen[i * t + j] = true;
        y[(i, j)] = row.y;
        if let (Some(zm), Some(v)) = (z.as_mut(), row.z) {
            zm[(i, j)] = v;
        }
        for (d, v) in row.x.iter().enumerate() {
            x[d][(i, j)] = *v;
        }
        if let Some(c) = &row.cluster {
            match &unit_cluster[i] {
                None => unit_cluster[i] = Some(c.clone()),
                Some(existing) if existing != c => {
                    return Err(CliError::validation(format!(
                        "unit '{}' appears in clusters '{existing}' and '{c}'",
                        row.unit
                    )));
                }
                _ => {}
            }
        }
    }

    let missing: Vec<String> = (0..n)
        .flat_map(|i| (0..t).map(move |j| (i, j)))
        .filter(|&(i, j)| !seen[i * t + j])
        .map(|(i, j)| format!("({}, {})", unit_ids[i], time_ids[j]))
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
        let suffix = if missing.len() > 10 {
            format!(" and {} more", missing.len() - 10)
        } else {
            String::new()
        };
        return Err(CliError::validation(format!(
            "unbalanced panel: {} missing (unit, time) cells: {shown}{suffix}",
            missing.len()
        )));
    }

    // Clustering: explicit column, or unit-level clusters with a warning.
    let (assignment, cluster_labels, cluster_warning) = if cluster_col.is_some() {
        let mut labels: Vec<String> = unit_cluster
            .iter()
            .map(|c| c.clone().expect("every unit has a cluster after pivoting"))
            .collect();
        let mut unique = labels.clone();
        natural_sort(&mut unique);
        let index: BTreeMap<&str, usize> = unique
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let assignment: Vec<usize> = labels.drain(..).map(|l| index[l.as_str()]).collect();
        (assignment, unique, None)
    } else {
        (
            (0..n).collect(),
            unit_ids.clone(),
            Some(
                "no 'cluster' column: assuming unit-level clusters; residual degrees of \
                 freedom may require merging (--merge-clusters)"
                    .to_string(),
            ),
        )
    };
    let mut clustering = Clustering::new(assignment)?;
    let mut cluster_labels = cluster_labels;

    if let Some(min_units) = options.merge_min_units {
        let (merged, merged_labels) = merge_clusters(&clustering, &cluster_labels, min_units)?;
        clustering = merged;
        cluster_labels = merged_labels;
    }

    let mut x_names: Vec<String> = x_cols.iter().map(|(_, name)| name.clone()).collect();
    if options.unit_fe {
        for (i, u) in unit_ids.iter().enumerate() {
            x.push(DMatrix::from_fn(n, t, |r, _| if r == i { 1.0 } else { 0.0 }));
            x_names.push(format!("fe_unit_{u}"));
        }
    }
    if options.time_fe {
        for (j, s) in time_ids.iter().enumerate() {
            x.push(DMatrix::from_fn(n, t, |_, c| if c == j { 1.0 } else { 0.0 }));
            x_names.push(format!("fe_time_{s}"));
        }
    }

    Ok(Ingested {
        y,
        z,
        x,
        x_names,
        unit_ids,
        time_ids,
        clustering,
        cluster_labels,
        cluster_warning,
    })
}

/// Greedily merge the smallest clusters (ties broken by index) until every
/// cluster has at least `min_units` units. Stops early rather than merging
/// below two clusters.
pub fn merge_clusters(
    clustering: &Clustering,
    labels: &[String],
    min_units: usize,
) -> CliResult<(Clustering, Vec<String>)> {
    // Groups of original cluster indices, merged in place.
    let mut groups: Vec<Vec<usize>> = (0..clustering.n_clusters()).map(|c| vec![c]).collect();
    let sizes = clustering.sizes();
    let group_size =
        |g: &Vec<usize>| -> usize { g.iter().map(|&c| sizes[c]).sum() };

    loop {
        if groups.len() <= 2 {
            break;
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|&g| (group_size(&groups[g]), g));
        if group_size(&groups[order[0]]) >= min_units {
            break;
        }
        let (a, b) = (order[0].min(order[1]), order[0].max(order[1]));
        let moved = groups.remove(b);
        groups[a].extend(moved);
    }

    let mut assignment = vec![0usize; clustering.n_units()];
    let mut merged_labels = Vec::with_capacity(groups.len());
    for (new_c, group) in groups.iter().enumerate() {
        let mut parts: Vec<&str> = group.iter().map(|&c| labels[c].as_str()).collect();
        parts.sort_unstable();
        merged_labels.push(parts.join("+"));
        for &c in group {
            for &u in clustering.members(c) {
                assignment[u] = new_c;
            }
        }
    }
    Ok((Clustering::new(assignment)?, merged_labels))
}

/// Serialize the pivoted representation back to long CSV (sorted units
/// outermost, times innermost): the inverse of [`ingest`] up to column
/// selection.
pub fn export_long_csv(data: &Ingested) -> String {
    let mut header = String::from("unit,time,y");
    if data.z.is_some() {
        header.push_str(",z");
    }
    for name in &data.x_names {
        header.push(',');
        header.push_str(name);
    }
    header.push_str(",cluster\n");

    let mut out = header;
    for (i, u) in data.unit_ids.iter().enumerate() {
        let cluster = &data.cluster_labels[data.clustering.cluster_of(i)];
        for (j, s) in data.time_ids.iter().enumerate() {
            out.push_str(&format!("{u},{s},{}", data.y[(i, j)]));
            if let Some(z) = &data.z {
                out.push_str(&format!(",{}", z[(i, j)]));
            }
            for mat in &data.x {
                out.push_str(&format!(",{}", mat[(i, j)]));
            }
            out.push_str(&format!(",{cluster}\n"));
        }
    }
    out
}
