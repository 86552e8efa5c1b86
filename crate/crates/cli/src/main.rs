//! `mosaic` — permutation tests and confidence intervals for panel data.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mosaic_cli::ingest::{ingest, IngestOptions, Ingested};
use mosaic_cli::output::{CiOutput, ResolvedConfig, TestOutput};
use mosaic_cli::{CliError, CliResult};
use mosaic_core::diagnostics::{run_diagnostics, DiagMethod, DiagnosticsInputs};
use mosaic_core::inference::{mosaic_ci, CiInputs};
use mosaic_core::invariance::Invariance;
use mosaic_core::mosaic::{default_weights, mosaic_test, Statistic};
use mosaic_core::simlab::{
    run_null_calibration, run_randomization_vs_marginal, DgpFamily, DgpSpec,
};
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(
    name = "mosaic",
    version,
    about = "Mosaic permutation tests and confidence intervals for linear models of panel data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Test cluster independence on a long-format CSV panel.
    Test(TestArgs),
    /// Confidence interval for the coefficient on one covariate.
    Ci(CiArgs),
    /// Split-sample standard-error diagnostics across methods.
    Diagnose(DiagnoseArgs),
    /// Synthetic-panel experiments: calibration or randomization accuracy.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV: columns unit, time, y; optional z, x_*, cluster.
    data: PathBuf,
    /// Invariance: symmetry | time-reversal | local-exchangeability |
    /// custom:<path-to-TxT-csv>.
    #[arg(long, default_value = "local-exchangeability")]
    invariance: String,
    /// Randomization replicates.
    #[arg(long, default_value_t = 999)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append a dummy covariate per unit.
    #[arg(long)]
    unit_fe: bool,
    /// Append a dummy covariate per time period.
    #[arg(long)]
    time_fe: bool,
    /// Merge the smallest clusters until each has at least this many units.
    #[arg(long, value_name = "MIN_UNITS")]
    merge_clusters: Option<usize>,
    /// Also write the JSON result to this path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatisticMode {
    /// Reject for large positive dependence.
    Signed,
    /// Reject for large |S|.
    Absolute,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = StatisticMode::Signed)]
    statistic: StatisticMode,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Column holding the covariate of interest.
    #[arg(long, default_value = "z")]
    z: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Column holding the covariate of interest.
    #[arg(long, default_value = "z")]
    z: String,
    /// Number of random splits.
    #[arg(long, default_value_t = 200)]
    splits: usize,
    /// Comma-separated alpha levels.
    #[arg(long, default_value = "0.05,0.1", value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Comma-separated methods: ols-homoskedastic, ols-cluster-robust, mosaic.
    #[arg(
        long,
        default_value = "ols-homoskedastic,ols-cluster-robust,mosaic",
        value_delimiter = ','
    )]
    methods: Vec<String>,
    /// Directory for report.csv and summary.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimulateMode {
    /// P-value calibration over repeated synthetic panels.
    Calibration,
    /// Randomization distribution vs the marginal law of the statistic.
    Randomization,
}

#[derive(Args)]
struct SimulateArgs {
    /// Error family: robustness324 | locally-exchangeable |
    /// cluster-contaminated | iid-gaussian.
    #[arg(long, default_value = "robustness324")]
    family: String,
    #[arg(long = "N", default_value_t = 200)]
    n: usize,
    #[arg(long = "T", default_value_t = 10)]
    t: usize,
    #[arg(long = "M", default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1000)]
    sims: usize,
    #[arg(long, default_value_t = 199)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SimulateMode::Calibration)]
    mode: SimulateMode,
    /// Invariance for the test (see `test --invariance`; custom matrices are
    /// not supported here).
    #[arg(long, default_value = "local-exchangeability")]
    invariance: String,
    /// Comma-separated alpha grid for calibration.
    #[arg(long, default_value = "0.01,0.05,0.1,0.2", value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Directory for the CSV artifacts; omit to print only the JSON summary.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_invariance(name: &str, t: usize) -> CliResult<Invariance> {
    let inv = match name {
        "symmetry" => Invariance::symmetry(t)?,
        "time-reversal" => Invariance::time_reversal(t)?,
        "local-exchangeability" => Invariance::local_exchangeability(t)?,
        other => {
            let path = other.strip_prefix("custom:").ok_or_else(|| {
                CliError::validation(format!(
                    "unknown invariance '{other}'; expected symmetry, time-reversal, \
                     local-exchangeability, or custom:<path>"
                ))
            })?;
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| CliError::validation(format!("cannot read {path}: {e}")))?;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for record in reader.records() {
                let record = record?;
                rows.push(
                    record
                        .iter()
                        .map(|v| {
                            v.parse::<f64>().map_err(|_| {
                                CliError::validation(format!(
                                    "non-numeric entry '{v}' in custom invariance matrix"
                                ))
                            })
                        })
                        .collect::<CliResult<Vec<f64>>>()?,
                );
            }
            let size = rows.len();
            if size == 0 || rows.iter().any(|r| r.len() != size) {
                return Err(CliError::validation(
                    "custom invariance matrix must be square (T rows of T values)",
                ));
            }
            if size != t {
                return Err(CliError::validation(format!(
                    "custom invariance matrix is {size}x{size} but the panel has {t} time periods"
                )));
            }
            let matrix = DMatrix::from_fn(size, size, |i, j| rows[i][j]);
            Invariance::custom(matrix)?
        }
    };
    Ok(inv)
}

fn parse_family(name: &str) -> CliResult<DgpFamily> {
    Ok(match name {
        "robustness324" => DgpFamily::Robustness324,
        "locally-exchangeable" => DgpFamily::LocallyExchangeable,
        "cluster-contaminated" => DgpFamily::ClusterContaminated,
        "iid-gaussian" => DgpFamily::IidGaussian,
        other => {
            return Err(CliError::validation(format!(
                "unknown family '{other}'"
            )))
        }
    })
}

fn load(args: &DataArgs, z_column: Option<&str>) -> CliResult<Ingested> {
    let options = IngestOptions {
        z_column: z_column.map(str::to_string),
        unit_fe: args.unit_fe,
        time_fe: args.time_fe,
        merge_min_units: args.merge_clusters,
    };
    let data = ingest(&args.data, &options)?;
    if let Some(w) = &data.cluster_warning {
        eprintln!("warning: {w}");
    }
    Ok(data)
}

fn resolved_config(
    command: &str,
    args: &DataArgs,
    data: &Ingested,
    statistic: Option<&str>,
    alpha: Option<f64>,
    z_column: Option<&str>,
) -> ResolvedConfig {
    ResolvedConfig {
        command: command.into(),
        input: Some(args.data.display().to_string()),
        invariance: args.invariance.clone(),
        statistic: statistic.map(str::to_string),
        weights: Some("uniform".into()),
        alpha,
        r: args.reps,
        seed: args.seed,
        z_column: z_column.map(str::to_string),
        unit_fe: args.unit_fe,
        time_fe: args.time_fe,
        merge_clusters: args.merge_clusters,
        n_units: data.n_units(),
        n_times: data.n_times(),
        n_clusters: data.clustering.n_clusters(),
        time_ids: data.time_ids.clone(),
        warning: data.cluster_warning.clone(),
    }
}

fn emit(json: &str, output: Option<&PathBuf>) -> CliResult<()> {
    println!("{json}");
    if let Some(path) = output {
        fs::write(path, format!("{json}\n"))?;
    }
    Ok(())
}

fn cmd_test(args: &TestArgs) -> CliResult<()> {
    let data = load(&args.data, None)?;
    let panel = data.panel_for_test()?;
    let invariance = parse_invariance(&args.data.invariance, data.n_times())?;
    let weights = default_weights(panel.clustering());
    let statistic = match args.statistic {
        StatisticMode::Signed => Statistic::quadratic(weights),
        StatisticMode::Absolute => Statistic::quadratic_two_sided(weights),
    };
    let result = mosaic_test(&panel, &invariance, &statistic, args.data.reps, args.data.seed)?;
    let stat_name = match args.statistic {
        StatisticMode::Signed => "signed",
        StatisticMode::Absolute => "absolute",
    };
    let out = TestOutput {
        p_value: result.p_value,
        statistic: result.observed,
        r: result.r,
        seed: result.seed,
        config: resolved_config("test", &args.data, &data, Some(stat_name), None, None),
    };
    emit(&serde_json::to_string_pretty(&out).expect("serializable"), args.data.output.as_ref())
}

fn cmd_ci(args: &CiArgs) -> CliResult<()> {
    let data = load(&args.data, Some(args.z.as_str()))?;
    let z = data.z.clone().ok_or_else(|| {
        CliError::validation(format!("covariate column '{}' not found", args.z))
    })?;
    let invariance = parse_invariance(&args.data.invariance, data.n_times())?;
    let ci = mosaic_ci(&CiInputs {
        y: &data.y,
        z: &z,
        x: &data.x,
        clustering: &data.clustering,
        invariance: &invariance,
        alpha: args.alpha,
        r: args.data.reps,
        seed: args.data.seed,
    })?;
    let out = CiOutput {
        beta_hat: ci.beta_hat,
        lower: ci.lower,
        upper: ci.upper,
        se: ci.se,
        alpha: ci.alpha,
        r: ci.r,
        seed: ci.seed,
        degenerate_replicates: ci.degenerate_count,
        config: resolved_config(
            "ci",
            &args.data,
            &data,
            None,
            Some(args.alpha),
            Some(args.z.as_str()),
        ),
    };
    emit(&serde_json::to_string_pretty(&out).expect("serializable"), args.data.output.as_ref())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let data = load(&args.data, Some(args.z.as_str()))?;
    let z = data.z.clone().ok_or_else(|| {
        CliError::validation(format!("covariate column '{}' not found", args.z))
    })?;
    let invariance = parse_invariance(&args.data.invariance, data.n_times())?;
    let methods: Vec<DiagMethod> = args
        .methods
        .iter()
        .map(|name| {
            Ok(match name.as_str() {
                "ols-homoskedastic" => DiagMethod::OlsHomoskedastic,
                "ols-cluster-robust" => DiagMethod::OlsClusterRobust,
                "mosaic" => DiagMethod::Mosaic {
                    invariance: invariance.clone(),
                    r: args.data.reps,
                },
                other => {
                    return Err(CliError::validation(format!("unknown method '{other}'")))
                }
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let report = run_diagnostics(&DiagnosticsInputs {
        y: &data.y,
        z: &z,
        x: &data.x,
        clustering: &data.clustering,
        coords: None,
        methods: &methods,
        n_splits: args.splits,
        alphas: &args.alphas,
        seed: args.data.seed,
    })?;

    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("report.csv"), report.to_csv())?;

    #[derive(serde::Serialize)]
    struct Summary<'a> {
        aggregates: &'a [mosaic_core::diagnostics::AggregateRecord],
        n_splits: usize,
        seed: u64,
        config: ResolvedConfig,
    }
    let summary = Summary {
        aggregates: &report.aggregates,
        n_splits: report.n_splits,
        seed: report.seed,
        config: resolved_config(
            "diagnose",
            &args.data,
            &data,
            None,
            None,
            Some(args.z.as_str()),
        ),
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable");
    fs::write(args.out_dir.join("summary.json"), format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let family = parse_family(&args.family)?;
    let spec = DgpSpec::new(args.n, args.t, args.m, args.rho, family, args.seed)?;
    let invariance = parse_invariance(&args.invariance, args.t)?;
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir)?;
    }
    match args.mode {
        SimulateMode::Calibration => {
            let table =
                run_null_calibration(&spec, &invariance, args.reps, args.sims, &args.alphas)?;
            if let Some(dir) = &args.out_dir {
                fs::write(dir.join("p_values.csv"), table.to_csv())?;
            }
            #[derive(serde::Serialize)]
            struct Summary<'a> {
                mode: &'static str,
                spec: &'a DgpSpec,
                invariance: &'a str,
                sims: usize,
                #[serde(rename = "R")]
                r: usize,
                rows: &'a [mosaic_core::simlab::CalibrationRow],
                ks_distance: f64,
            }
            let json = serde_json::to_string_pretty(&Summary {
                mode: "calibration",
                spec: &spec,
                invariance: &args.invariance,
                sims: args.sims,
                r: args.reps,
                rows: &table.rows,
                ks_distance: table.ks_distance,
            })
            .expect("serializable");
            println!("{json}");
        }
        SimulateMode::Randomization => {
            let out = run_randomization_vs_marginal(&spec, &invariance, args.reps, args.sims)?;
            if let Some(dir) = &args.out_dir {
                fs::write(dir.join("draws.csv"), out.to_csv())?;
                fs::write(dir.join("histogram.csv"), out.histogram_csv(40))?;
            }
            #[derive(serde::Serialize)]
            struct Summary<'a> {
                mode: &'static str,
                spec: &'a DgpSpec,
                invariance: &'a str,
                sims: usize,
                #[serde(rename = "R")]
                r: usize,
                sigma: f64,
                marginal_moments: mosaic_core::simlab::Moments,
                randomization_moments: mosaic_core::simlab::Moments,
                randomization_moments_exact: mosaic_core::simlab::Moments,
                quantile_gaps: &'a [(f64, f64)],
            }
            let json = serde_json::to_string_pretty(&Summary {
                mode: "randomization",
                spec: &spec,
                invariance: &args.invariance,
                sims: args.sims,
                r: args.reps,
                sigma: out.sigma,
                marginal_moments: out.delta_moments,
                randomization_moments: out.randomization_moments,
                randomization_moments_exact: out.randomization_moments_exact,
                quantile_gaps: &out.quantile_gaps,
            })
            .expect("serializable");
            println!("{json}");
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Ci(args) => cmd_ci(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
