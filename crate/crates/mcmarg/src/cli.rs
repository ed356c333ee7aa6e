//! Command-line workflows: generate labeled synthetic data, fit a mixture,
//! assign clusters, evaluate against truth (optionally vs the k-means
//! baseline), and sweep the reference-pool size.
//!
//! Every command takes a single `--seed` and derives all internal streams
//! from it, writes its artifacts into `--out`, and drops a `manifest.txt`
//! recording the exact invocation next to them. Data artifacts are
//! byte-deterministic per seed; the manifest additionally records wall time,
//! which is the one intentionally non-reproducible field.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::assign::{assign, AssignConfig, AssignMode};
use crate::data::{
    self, gen_synthetic, load_labels, load_vectors, save_labels, save_vectors, Dataset,
    SyntheticSpec, VectorFormat,
};
use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig};
use crate::gmm::{load_model, save_model, GmmParams};
use crate::kmeans;
use crate::metrics;

/// Cluster high-dimensional vectors with a projection-fitted Gaussian
/// mixture and resample-and-vote assignment.
#[derive(Debug, Parser)]
#[command(name = "mcmarg", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic mixture dataset.
    Gen(GenArgs),
    /// Fit mixture parameters to a vector file.
    Fit(FitArgs),
    /// Label a vector file with a fitted model.
    Assign(AssignArgs),
    /// Score predicted labels against truth labels.
    Eval(EvalArgs),
    /// Sweep the reference-pool size and report ARI per size.
    BenchSamples(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of mixture components.
    #[arg(long)]
    pub k: usize,
    /// Dimensionality of each vector.
    #[arg(long)]
    pub dim: usize,
    /// Number of points.
    #[arg(long)]
    pub n: usize,
    /// Minimum distance between component centers.
    #[arg(long, default_value_t = 10.0)]
    pub sep: f64,
    /// Per-dimension standard deviation of every component.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input vector file (.csv parsed as CSV, anything else as binary).
    #[arg(long)]
    pub vectors: PathBuf,
    /// Number of mixture components.
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Projection directions per step.
    #[arg(long, default_value_t = 32)]
    pub units: usize,
    /// Points projected per step (capped at the dataset size).
    #[arg(long, default_value_t = 4096)]
    pub batch: usize,
    /// Histogram resolution of the projected-marginal grids.
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standardize dimensions before fitting; the saved model is mapped
    /// back to the original coordinates.
    #[arg(long)]
    pub standardize: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Fitted model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Vector file to label.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Reference-pool size (vote mode).
    #[arg(long, default_value_t = 60_000)]
    pub samples: usize,
    /// Neighbors consulted per query (vote mode).
    #[arg(long, default_value_t = 50)]
    pub knn: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Vote)]
    pub mode: ModeArg,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth label file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted label file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Also fit and score a baseline on the same vectors.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Vector file (required with --baseline).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Cluster count for the baseline (required with --baseline).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional output directory for the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Fitted model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Vector file to label.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Ground-truth label file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Reference-pool sizes to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1000, 5000, 10_000, 60_000, 600_000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub knn: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

/// Query-labeling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Majority vote among nearest reference samples.
    Vote,
    /// Highest per-component log-density.
    Argmax,
}

impl From<ModeArg> for AssignMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Vote => AssignMode::KnnVote,
            ModeArg::Argmax => AssignMode::LogDensityArgmax,
        }
    }
}

/// Baseline clusterer for `eval --baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Kmeans,
}

/// Key=value run record written next to every command's outputs.
struct Manifest {
    lines: Vec<String>,
    started: Instant,
}

impl Manifest {
    fn new(command: &str) -> Self {
        let mut m = Manifest { lines: Vec::new(), started: Instant::now() };
        m.add("command", command);
        m.add("version", env!("CARGO_PKG_VERSION"));
        m
    }

    fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    fn write(mut self, dir: &Path) -> Result<()> {
        let wall = self.started.elapsed().as_millis();
        self.add("wall_time_ms", wall);
        let path = dir.join("manifest.txt");
        fs::write(&path, self.lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn detect_format(path: &Path) -> VectorFormat {
    match path.extension() {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => VectorFormat::Csv,
        _ => VectorFormat::Binary,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Assign(args) => cmd_assign(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BenchSamples(args) => cmd_bench_samples(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut manifest = Manifest::new("gen");
    manifest.add("k", args.k);
    manifest.add("dim", args.dim);
    manifest.add("n", args.n);
    manifest.add("sep", args.sep);
    manifest.add("sigma", args.sigma);
    manifest.add("seed", args.seed);
    manifest.add("out", args.out.display());

    let spec = SyntheticSpec {
        k: args.k,
        d: args.dim,
        n: args.n,
        separation: args.sep,
        sigma: args.sigma,
        seed: args.seed,
    };
    let (dataset, labels, truth) = gen_synthetic(&spec)?;
    ensure_dir(&args.out)?;
    let vectors_path = args.out.join("vectors.bin");
    let labels_path = args.out.join("labels.txt");
    let model_path = args.out.join("model.json");
    save_vectors(&dataset, &vectors_path, VectorFormat::Binary)?;
    save_labels(&labels, &labels_path)?;
    save_model(&truth, &model_path)?;
    manifest.add("output_vectors", vectors_path.display());
    manifest.add("output_labels", labels_path.display());
    manifest.add("output_model", model_path.display());
    manifest.write(&args.out)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut manifest = Manifest::new("fit");
    manifest.add("vectors", args.vectors.display());
    manifest.add("k", args.k);
    manifest.add("steps", args.steps);
    manifest.add("lr", args.lr);
    manifest.add("units", args.units);
    manifest.add("batch", args.batch);
    manifest.add("bins", args.bins);
    manifest.add("seed", args.seed);
    manifest.add("standardize", args.standardize);
    manifest.add("out", args.out.display());

    let raw = load_vectors(&args.vectors, detect_format(&args.vectors))?;
    let config = FitConfig {
        steps: args.steps,
        lr: args.lr,
        units_per_step: args.units,
        batch: args.batch,
        bins: args.bins,
        seed: args.seed,
        ..FitConfig::default()
    };

    let (params, trace) = if args.standardize {
        let (scaled, stats) = data::standardize(&raw)?;
        let (fitted, trace) = fit(&scaled, args.k, &config)?;
        (unstandardize_params(fitted, &stats), trace)
    } else {
        fit(&raw, args.k, &config)?
    };

    ensure_dir(&args.out)?;
    let model_path = args.out.join("model.json");
    let trace_path = args.out.join("trace.csv");
    save_model(&params, &model_path)?;
    trace.write_csv(&trace_path)?;
    manifest.add("output_model", model_path.display());
    manifest.add("output_trace", trace_path.display());
    manifest.add("fit_wall_time_ms", trace.wall_time.as_millis());
    manifest.write(&args.out)
}

/// Map parameters fitted in standardized coordinates back to the original
/// data space: means stretch and shift, spreads stretch, weights carry over.
fn unstandardize_params(fitted: GmmParams, stats: &data::Standardization) -> GmmParams {
    let mut params = fitted;
    let d = params.d;
    for c in 0..params.k {
        for i in 0..d {
            params.means[c * d + i] = params.means[c * d + i] * stats.scale[i] + stats.mean[i];
            params.log_stds[c * d + i] += stats.scale[i].ln();
        }
    }
    params.clamp_log_stds();
    params
}

fn cmd_assign(args: AssignArgs) -> Result<()> {
    let mut manifest = Manifest::new("assign");
    manifest.add("model", args.model.display());
    manifest.add("vectors", args.vectors.display());
    manifest.add("samples", args.samples);
    manifest.add("knn", args.knn);
    manifest.add("seed", args.seed);
    manifest.add("mode", format!("{:?}", args.mode).to_lowercase());
    manifest.add("out", args.out.display());

    let params = load_model(&args.model)?;
    let queries = load_vectors(&args.vectors, detect_format(&args.vectors))?;
    let config = AssignConfig {
        total_samples: args.samples,
        k_neighbors: args.knn,
        seed: args.seed,
        mode: args.mode.into(),
    };
    let labels = assign(&params, &queries, &config)?;

    ensure_dir(&args.out)?;
    let labels_path = args.out.join("labels.txt");
    save_labels(&labels, &labels_path)?;
    manifest.add("output_labels", labels_path.display());
    manifest.write(&args.out)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut manifest = Manifest::new("eval");
    manifest.add("truth", args.truth.display());
    manifest.add("pred", args.pred.display());
    manifest.add("seed", args.seed);

    let truth = load_labels(&args.truth)?;
    let pred = load_labels(&args.pred)?;
    let score = metrics::ari(&truth, &pred)?;
    println!("ari={score:.6}");
    manifest.add("ari", format!("{score:.6}"));

    if let Some(BaselineArg::Kmeans) = args.baseline {
        let vectors = args.vectors.as_ref().ok_or_else(|| {
            Error::InvalidParameter("--baseline requires --vectors".into())
        })?;
        let k = args
            .k
            .ok_or_else(|| Error::InvalidParameter("--baseline requires --k".into()))?;
        manifest.add("baseline", "kmeans");
        manifest.add("vectors", vectors.display());
        manifest.add("k", k);
        let data = load_vectors(vectors, detect_format(vectors))?;
        let km = kmeans::kmeans_fit(
            &data,
            k,
            kmeans::DEFAULT_MAX_ITERS,
            kmeans::DEFAULT_TOL,
            args.seed,
        )?;
        let km_score = metrics::ari(&truth, &km.labels)?;
        manifest.add("kmeans_ari", format!("{km_score:.6}"));
        println!("method,ari");
        println!("mcmarg,{score:.6}");
        println!("kmeans,{km_score:.6}");
        println!("mini-batch-kmeans,n/a");
        println!("agglomerative,n/a");
        println!("birch,n/a");
    }

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        manifest.add("out", out.display());
        manifest.write(out)?;
    }
    Ok(())
}

fn cmd_bench_samples(args: BenchArgs) -> Result<()> {
    let mut manifest = Manifest::new("bench-samples");
    manifest.add("model", args.model.display());
    manifest.add("vectors", args.vectors.display());
    manifest.add("truth", args.truth.display());
    manifest.add(
        "sizes",
        args.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    );
    manifest.add("knn", args.knn);
    manifest.add("seed", args.seed);
    manifest.add("out", args.out.display());

    if args.sizes.is_empty() {
        return Err(Error::InvalidParameter("--sizes must list at least one pool size".into()));
    }
    let params = load_model(&args.model)?;
    let queries: Dataset = load_vectors(&args.vectors, detect_format(&args.vectors))?;
    let truth = load_labels(&args.truth)?;
    if truth.len() != queries.n {
        return Err(Error::InvalidParameter(format!(
            "{} truth labels for {} vectors",
            truth.len(),
            queries.n
        )));
    }

    let mut rows = String::from("pool_size,ari\n");
    for &size in &args.sizes {
        let config = AssignConfig {
            total_samples: size,
            k_neighbors: args.knn,
            seed: args.seed,
            mode: AssignMode::KnnVote,
        };
        let labels = assign(&params, &queries, &config)?;
        let score = metrics::ari(&truth, &labels)?;
        rows.push_str(&format!("{size},{score}\n"));
    }

    ensure_dir(&args.out)?;
    let bench_path = args.out.join("bench.csv");
    fs::write(&bench_path, rows).map_err(|e| Error::io(&bench_path, e))?;
    manifest.add("output_bench", bench_path.display());
    manifest.write(&args.out)
}
