//! Command-line frontend: simulate, estimate, learn-graph, benchmark, and
//! plot-data subcommands over the estimation library.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use epigraph::baselines::{epiestim_estimate, ml_estimate, EpiEstimConfig};
use epigraph::bench::{
    grid_search, run_benchmark, BenchInstance, BenchProtocol, GridSpec, HyperParams, Method,
};
use epigraph::graph::gram;
use epigraph::io::dataset::{
    self, load_dataset, read_labeled_matrix, save_dataset, write_laplacian, write_repro_matrix,
    write_trace,
};
use epigraph::io::jhu::{ingest_jhu, IngestConfig};
use epigraph::io::manifest::{RunManifest, MANIFEST_FILE};
use epigraph::io::atomic_write;
use epigraph::joint::{estimate_fix_l, estimate_joint, JointConfig};
use epigraph::model::{infectiousness_with_history, ScaleParams};
use epigraph::prox::PdConfig;
use epigraph::qp::solve_laplacian_qp;
use epigraph::synthetic::{ClusterSpec, SyntheticDataset};
use epigraph::{CountMatrix, Error, Infectiousness, ReproMatrix, SerialInterval};

const R_HAT_FILE: &str = "r_hat.csv";
const L_HAT_FILE: &str = "l_hat.csv";
const TRACE_FILE: &str = "trace.csv";
const PLOT_FILE: &str = "plot.csv";

#[derive(Debug, Parser)]
#[command(
    name = "epigraph",
    version,
    about = "Joint estimation of reproduction numbers and inter-territory connectivity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic clustered epidemic dataset directory.
    Simulate(SimulateArgs),
    /// Estimate reproduction numbers from a dataset directory or a CSSE CSV.
    Estimate(EstimateArgs),
    /// Learn a connectivity Laplacian from a fixed reproduction-number CSV.
    LearnGraph(LearnGraphArgs),
    /// Run the multi-seed grid-search comparison of all estimators.
    Benchmark(BenchmarkArgs),
    /// Flatten estimate outputs into a tidy long-format CSV for plotting.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Parser, Serialize)]
struct SimulateArgs {
    /// Directory to create the dataset in.
    #[arg(long)]
    out_dir: PathBuf,
    /// Master seed for trajectories and count sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of days.
    #[arg(long, default_value_t = 300)]
    t: usize,
    /// Comma-separated cluster sizes, e.g. 3,3,3.
    #[arg(long, default_value = "3,3,3", value_delimiter = ',')]
    clusters: Vec<usize>,
    /// Initial daily count for every territory.
    #[arg(long, default_value_t = 1000.0)]
    z0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EstimateMethod {
    /// Closed-form ratio of counts to infectiousness.
    Ml,
    /// Bayesian posterior mean over a trailing window.
    Epiestim,
    /// Primal-dual solve with the graph held fixed.
    FixL,
    /// Alternating estimation of reproduction numbers and the graph.
    Joint,
}

#[derive(Debug, Parser, Serialize)]
struct EstimateArgs {
    /// Dataset directory (from simulate) or CSSE cumulative CSV.
    #[arg(long)]
    input: PathBuf,
    /// Countries to ingest (CSV input only).
    #[arg(long, value_delimiter = ',')]
    countries: Vec<String>,
    /// First day of the estimation window, YYYY-MM-DD (CSV input only).
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Last day of the estimation window, YYYY-MM-DD (CSV input only).
    #[arg(long)]
    end: Option<NaiveDate>,
    #[arg(long, value_enum)]
    method: EstimateMethod,
    /// Temporal piecewise-linearity penalty.
    #[arg(long)]
    lambda_t: Option<f64>,
    /// Spatial graph-smoothness penalty.
    #[arg(long)]
    lambda_s: Option<f64>,
    /// Graph Frobenius penalty (joint only).
    #[arg(long)]
    lambda_l: Option<f64>,
    /// Trailing window length for epiestim, odd.
    #[arg(long)]
    tau: Option<usize>,
    /// Convergence threshold for the primal-dual solver.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Iteration cap for the primal-dual solver.
    #[arg(long)]
    k_max: Option<usize>,
    /// Outer alternation cap for joint estimation.
    #[arg(long)]
    n_max: Option<usize>,
    /// Grid file for oracle hyperparameter search (dataset input only).
    /// Accepts a GridSpec JSON path or the builtin names "default"/"smoke".
    #[arg(long)]
    grid: Option<String>,
    /// Keep negative daily increments instead of clipping to zero.
    #[arg(long)]
    no_clip: bool,
    /// Apply a centered 7-day moving average to ingested series.
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Parser, Serialize)]
struct LearnGraphArgs {
    /// Reproduction-number CSV (an estimate's r_hat.csv).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lambda_s: f64,
    #[arg(long)]
    lambda_l: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Parser, Serialize)]
struct BenchmarkArgs {
    /// Number of independent dataset seeds (0..n).
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// GridSpec JSON path or the builtin names "default"/"smoke".
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Parser, Serialize)]
struct PlotDataArgs {
    /// An estimate/simulate output directory or a single labeled-matrix CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::LearnGraph(args) => cmd_learn_graph(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::PlotData(args) => cmd_plot_data(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn manifest_for<A: Serialize>(command: &str, args: &A) -> anyhow::Result<RunManifest> {
    let config = serde_json::to_value(args)?;
    Ok(RunManifest::new(
        command,
        std::env::args().collect(),
        config,
    ))
}

fn finish_manifest(
    mut manifest: RunManifest,
    out_dir: &Path,
    outputs: &[PathBuf],
) -> anyhow::Result<()> {
    for path in outputs {
        manifest.record_output(path)?;
    }
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut manifest = manifest_for("simulate", &args)?;
    manifest.seed = Some(args.seed);
    let spec = ClusterSpec::from_sizes(&args.clusters)?;
    let phi = SerialInterval::gamma(6.6, 3.5, 25)?;
    let z0 = vec![args.z0; spec.n_territories()];
    let ds = SyntheticDataset::generate(&spec, args.t, &z0, &phi, args.seed)?;
    save_dataset(&ds, &args.out_dir)?;
    let outputs: Vec<PathBuf> = [
        dataset::COUNTS_FILE,
        dataset::R_STAR_FILE,
        dataset::L_STAR_FILE,
        dataset::METADATA_FILE,
    ]
    .iter()
    .map(|f| args.out_dir.join(f))
    .collect();
    finish_manifest(manifest, &args.out_dir, &outputs)?;
    println!(
        "wrote {} territories x {} days to {}",
        ds.z.n_territories(),
        ds.z.n_days(),
        args.out_dir.display()
    );
    Ok(())
}

/// Everything an estimator needs, regardless of where the counts came from.
struct EstimationInput {
    z: CountMatrix,
    pressure: Infectiousness,
    scales: ScaleParams,
    r_init: ReproMatrix,
    /// Present only for simulated datasets.
    dataset: Option<SyntheticDataset>,
}

fn parse_grid(name_or_path: &str) -> anyhow::Result<GridSpec> {
    let grids = match name_or_path {
        "default" => GridSpec::table_default(),
        "smoke" => GridSpec::smoke(),
        path => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading grid file {path}"))?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing grid file {path}"))?
        }
    };
    grids.validate()?;
    Ok(grids)
}

const INIT_WINDOW: usize = 7;

fn load_estimation_input(
    args: &EstimateArgs,
    manifest: &mut RunManifest,
) -> anyhow::Result<EstimationInput> {
    let phi = SerialInterval::gamma(6.6, 3.5, 25)?;
    if args.input.is_dir() {
        let ds = load_dataset(&args.input)?;
        for f in [
            dataset::COUNTS_FILE,
            dataset::R_STAR_FILE,
            dataset::L_STAR_FILE,
            dataset::METADATA_FILE,
        ] {
            manifest.record_input(&args.input.join(f))?;
        }
        let inst = BenchInstance::from_dataset(ds, &BenchProtocol::default())?;
        return Ok(EstimationInput {
            z: inst.dataset.z.clone(),
            pressure: inst.pressure,
            scales: inst.scales,
            r_init: inst.r_init,
            dataset: Some(inst.dataset),
        });
    }

    let countries = &args.countries;
    if countries.is_empty() {
        bail!("CSV input needs --countries");
    }
    let (start, end) = match (args.start, args.end) {
        (Some(s), Some(e)) => (s, e),
        _ => bail!("CSV input needs --start and --end"),
    };
    manifest.record_input(&args.input)?;

    // Infectiousness on day t looks back over the serial-interval support,
    // so ingest a window padded backwards and use the pad as history.
    let pad = phi.truncation() as i64;
    let mut cfg = IngestConfig::new(
        args.input.clone(),
        countries.clone(),
        start - chrono::Duration::days(pad),
        end,
    )?;
    cfg.clip_negative = !args.no_clip;
    cfg.smooth = args.smooth;
    let (z, history) = match ingest_jhu(&cfg) {
        Ok(padded) => {
            let t_pad = pad as usize;
            let counts = padded.counts();
            let history = counts.slice(ndarray::s![.., ..t_pad]).to_owned();
            let window = counts.slice(ndarray::s![.., t_pad..]).to_owned();
            let dates = padded.dates()[t_pad..].to_vec();
            let z = CountMatrix::new(window, countries.clone(), dates)?;
            (z, Some(history))
        }
        Err(Error::DateRange(_)) => {
            eprintln!(
                "warning: file does not cover {pad} days before --start; \
                 early estimates will under-count infectiousness"
            );
            let mut cfg = IngestConfig::new(args.input.clone(), countries.clone(), start, end)?;
            cfg.clip_negative = !args.no_clip;
            cfg.smooth = args.smooth;
            (ingest_jhu(&cfg)?, None)
        }
        Err(e) => return Err(e.into()),
    };

    let pressure = infectiousness_with_history(&z, history.as_ref(), &phi);
    let scales = ScaleParams::heuristic_from_counts(&z);
    let r_init = epiestim_estimate(&z, &pressure, &EpiEstimConfig::with_window(INIT_WINDOW)?)?;
    Ok(EstimationInput {
        z,
        pressure,
        scales,
        r_init,
        dataset: None,
    })
}

/// Resolve hyperparameters either from explicit flags or by oracle grid
/// search against the ground truth of a simulated dataset.
fn resolve_params(
    args: &EstimateArgs,
    input: &EstimationInput,
) -> anyhow::Result<HyperParams> {
    if let Some(grid) = &args.grid {
        let Some(ds) = &input.dataset else {
            bail!(
                "--grid selects hyperparameters against ground truth, which only \
                 a simulated dataset directory provides; pass explicit --lambda-* \
                 values for ingested counts"
            );
        };
        let grids = parse_grid(grid)?;
        let method = match args.method {
            EstimateMethod::Ml => Method::Ml,
            EstimateMethod::Epiestim => Method::EpiEstim,
            EstimateMethod::FixL => Method::FixLTrue,
            EstimateMethod::Joint => Method::Joint,
        };
        let inst = BenchInstance::from_dataset(ds.clone(), &BenchProtocol::default())?;
        let outcome = grid_search(method, &inst, &grids);
        if !outcome.best_mrse.is_finite() {
            bail!("every grid point failed for method {method}");
        }
        println!(
            "grid search over {} points: best {} at {}",
            outcome.n_points, outcome.best_mrse, outcome.best_params
        );
        return Ok(outcome.best_params);
    }
    Ok(HyperParams {
        lambda_t: args.lambda_t,
        lambda_s: args.lambda_s,
        lambda_l: args.lambda_l,
        tau: args.tau,
    })
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let mut manifest = manifest_for("estimate", &args)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let input = load_estimation_input(&args, &mut manifest)?;
    let params = resolve_params(&args, &input)?;
    let ids = input.z.territory_ids().to_vec();
    let dates = input.z.dates().to_vec();
    let mut outputs = Vec::new();

    let r_hat_path = args.out_dir.join(R_HAT_FILE);
    match args.method {
        EstimateMethod::Ml => {
            let r_hat = ml_estimate(&input.z, &input.pressure);
            write_repro_matrix(&r_hat_path, &r_hat, &ids, &dates)?;
            outputs.push(r_hat_path);
        }
        EstimateMethod::Epiestim => {
            let cfg = EpiEstimConfig::with_window(params.tau.unwrap_or(7))?;
            let r_hat = epiestim_estimate(&input.z, &input.pressure, &cfg)?;
            write_repro_matrix(&r_hat_path, &r_hat, &ids, &dates)?;
            outputs.push(r_hat_path);
        }
        EstimateMethod::FixL => {
            let Some(lambda_t) = params.lambda_t else {
                bail!("fix-l needs --lambda-t (or --grid)");
            };
            let lambda_s = params.lambda_s.unwrap_or(0.0);
            let mut cfg = PdConfig::new(lambda_t, lambda_s)?;
            if let Some(eps) = args.epsilon {
                cfg = cfg.with_epsilon(eps);
            }
            if let Some(k) = args.k_max {
                cfg = cfg.with_k_max(k);
            }
            let graph = match (&input.dataset, lambda_s > 0.0) {
                (Some(ds), true) => Some(ds.l_star.clone()),
                (None, true) => bail!(
                    "fix-l with --lambda-s > 0 needs a graph; ingested counts carry \
                     none (use method=joint to learn one)"
                ),
                _ => None,
            };
            let sol = estimate_fix_l(
                &input.z,
                &input.pressure,
                &input.scales,
                graph.as_ref(),
                &cfg,
                &input.r_init,
            )?;
            write_repro_matrix(&r_hat_path, &sol.repro, &ids, &dates)?;
            outputs.push(r_hat_path);
            let trace_path = args.out_dir.join(TRACE_FILE);
            write_trace(&trace_path, &[sol.objective])?;
            outputs.push(trace_path);
        }
        EstimateMethod::Joint => {
            let (Some(lt), Some(ls), Some(ll)) =
                (params.lambda_t, params.lambda_s, params.lambda_l)
            else {
                bail!("joint needs --lambda-t, --lambda-s, and --lambda-l (or --grid)");
            };
            let mut cfg = JointConfig::new(lt, ls, ll)?;
            if let Some(eps) = args.epsilon {
                cfg.pd = cfg.pd.with_epsilon(eps);
            }
            if let Some(k) = args.k_max {
                cfg.pd = cfg.pd.with_k_max(k);
            }
            if let Some(n) = args.n_max {
                cfg.n_max = n;
            }
            let result = estimate_joint(
                &input.z,
                &input.pressure,
                &input.scales,
                &cfg,
                &input.r_init,
            )?;
            write_repro_matrix(&r_hat_path, &result.r_hat, &ids, &dates)?;
            outputs.push(r_hat_path);
            let l_hat_path = args.out_dir.join(L_HAT_FILE);
            write_laplacian(&l_hat_path, result.l_hat.matrix(), &ids)?;
            outputs.push(l_hat_path);
            let trace_path = args.out_dir.join(TRACE_FILE);
            write_trace(&trace_path, &result.objective_trace)?;
            outputs.push(trace_path);
        }
    }

    finish_manifest(manifest, &args.out_dir, &outputs)?;
    println!("wrote estimate to {}", args.out_dir.display());
    Ok(())
}

fn cmd_learn_graph(args: LearnGraphArgs) -> anyhow::Result<()> {
    let mut manifest = manifest_for("learn-graph", &args)?;
    std::fs::create_dir_all(&args.out_dir)?;
    manifest.record_input(&args.input)?;
    let (ids, _, r) = read_labeled_matrix(&args.input)?;
    let r = ReproMatrix::new(r)?;
    let (l_hat, _) = solve_laplacian_qp(&gram(&r), args.lambda_s, args.lambda_l, None)?;
    let l_hat_path = args.out_dir.join(L_HAT_FILE);
    write_laplacian(&l_hat_path, l_hat.matrix(), &ids)?;
    finish_manifest(manifest, &args.out_dir, &[l_hat_path])?;
    println!("wrote learned graph to {}", args.out_dir.display());
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let manifest = manifest_for("benchmark", &args)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let grids = parse_grid(&args.grid)?;
    let report = run_benchmark(
        args.seeds,
        &BenchProtocol::default(),
        &grids,
        Some(&args.out_dir),
    )?;
    let outputs = vec![
        args.out_dir.join("report.json"),
        args.out_dir.join("table.txt"),
    ];
    finish_manifest(manifest, &args.out_dir, &outputs)?;
    println!("{}", report.text_table());
    Ok(())
}

/// Series whose columns are days flatten to (territory, date, value, series)
/// rows; square graph matrices are skipped.
fn cmd_plot_data(args: PlotDataArgs) -> anyhow::Result<()> {
    let mut manifest = manifest_for("plot-data", &args)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let candidates: Vec<PathBuf> = if args.input.is_dir() {
        [
            dataset::COUNTS_FILE,
            dataset::R_STAR_FILE,
            R_HAT_FILE,
        ]
        .iter()
        .map(|f| args.input.join(f))
        .filter(|p| p.exists())
        .collect()
    } else {
        vec![args.input.clone()]
    };
    if candidates.is_empty() {
        bail!(
            "no time-series CSVs found in {}; expected counts.csv, r_star.csv, or r_hat.csv",
            args.input.display()
        );
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["territory", "date", "value", "series"])?;
    for path in &candidates {
        manifest.record_input(path)?;
        let series = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "series".into());
        let (rows, cols, m) = read_labeled_matrix(path)?;
        for (i, territory) in rows.iter().enumerate() {
            for (j, date) in cols.iter().enumerate() {
                w.write_record([
                    territory.as_str(),
                    date.as_str(),
                    &dataset::format_value(m[[i, j]]),
                    series.as_str(),
                ])?;
            }
        }
    }
    let plot_path = args.out_dir.join(PLOT_FILE);
    atomic_write(&plot_path, &w.into_inner()?)?;
    println!("wrote {}", plot_path.display());
    finish_manifest(manifest, &args.out_dir, &[plot_path])?;
    Ok(())
}
