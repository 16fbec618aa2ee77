//! Command-line front end. The binary only parses arguments and maps errors to
//! exit codes; every command is callable from here.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    kmeans, sp_kernel, spectral_clustering, wl_kernel, GramMatrix, KMEANS_RESTARTS, WL_ITERATIONS,
};
use crate::graph::{parse_tudataset, GraphDataset};
use crate::metrics::{accuracy, ari, nmi};
use crate::tensor::Tensor;
use crate::trainer::{
    sweep, train_model, write_embeddings_csv, Mode, RunResult, SweepGrid, SweepRow, TrainConfig,
    TrainError,
};

pub const DEFAULT_URL_TEMPLATE: &str = "https://www.chrsmrrs.com/graphkerneldatasets/{name}.zip";
const DOWNLOAD_LIMIT: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "dglc", version, about = "Deep graph-level clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download and extract a TUDataset archive.
    Fetch(FetchArgs),
    /// Train a model and write metrics, checkpoint and embeddings.
    Train(TrainArgs),
    /// Run a graph-kernel baseline.
    Baseline(BaselineArgs),
    /// Train over a hyperparameter grid.
    Sweep(SweepArgs),
    /// Summarize sweep or metrics JSON files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FetchArgs {
    /// Dataset name, e.g. MUTAG.
    pub name: String,
    /// URL template; `{name}` is replaced by the dataset name.
    #[arg(long)]
    pub url: Option<String>,
    /// Extract this local zip instead of downloading.
    #[arg(long)]
    pub from_file: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    pub dest: PathBuf,
}

/// Flags shared by `train` and `sweep`. Every field overrides the config
/// file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub z_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum Method {
    #[value(name = "wl+sc")]
    #[serde(rename = "wl+sc")]
    WlSc,
    #[value(name = "sp+sc")]
    #[serde(rename = "sp+sc")]
    SpSc,
    #[value(name = "wl+km")]
    #[serde(rename = "wl+km")]
    WlKm,
    #[value(name = "sp+km")]
    #[serde(rename = "sp+km")]
    SpKm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::WlSc => "wl+sc",
            Method::SpSc => "sp+sc",
            Method::WlKm => "wl+km",
            Method::SpKm => "sp+km",
        }
    }

    fn kernel(self) -> &'static str {
        match self {
            Method::WlSc | Method::WlKm => "wl",
            Method::SpSc | Method::SpKm => "sp",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON grid, e.g. '{"d_z":[10,20]}'. Axes: d_h, d_z, k.
    #[arg(long)]
    pub grid: String,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Sweep or metrics JSON files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

/// JSON config file. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seeds: Option<usize>,
    pub baseline: Option<Method>,
    pub mode: Option<Mode>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub z_dim: Option<usize>,
    pub clusters: Option<usize>,
    pub seed: Option<u64>,
    pub pretrain_epochs: Option<usize>,
    pub cluster_weight: Option<f64>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings for `train` and `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub seeds: usize,
    pub train: TrainConfig,
}

impl Resolved {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64)
            .map(|i| self.train.seed + i)
            .collect()
    }
}

/// Applies defaults, then the config file, then flags.
pub fn resolve(args: &ModelArgs) -> Result<Resolved, CliError> {
    let file = match &args.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let d = TrainConfig::default();
    let train = TrainConfig {
        mode: args.mode.or(file.mode).unwrap_or(d.mode),
        epochs: args.epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        learning_rate: args.lr.or(file.learning_rate).unwrap_or(d.learning_rate),
        layers: args.layers.or(file.layers).unwrap_or(d.layers),
        hidden_dim: args.hidden_dim.or(file.hidden_dim).unwrap_or(d.hidden_dim),
        z_dim: args.z_dim.or(file.z_dim).unwrap_or(d.z_dim),
        clusters: file.clusters.or(d.clusters),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        pretrain_epochs: file.pretrain_epochs.unwrap_or(d.pretrain_epochs),
        cluster_weight: file.cluster_weight.unwrap_or(d.cluster_weight),
    };
    train.validate()?;
    let dataset = args
        .dataset
        .clone()
        .or(file.dataset)
        .ok_or_else(|| CliError::Usage("no dataset given (--dataset or config)".into()))?;
    let seeds = args.seeds.or(file.seeds).unwrap_or(1);
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    Ok(Resolved {
        dataset,
        data_dir: args
            .data_dir
            .clone()
            .or(file.data_dir)
            .unwrap_or_else(|| "data".into()),
        out: args
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| "runs".into()),
        seeds,
        train,
    })
}

pub fn load_dataset(data_dir: &Path, name: &str) -> Result<GraphDataset, CliError> {
    parse_tudataset(data_dir.join(name), name).map_err(runtime)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Downloads (or reads) a dataset zip and extracts it under `dest`. Returns
/// the dataset directory.
pub fn cmd_fetch(args: &FetchArgs) -> Result<PathBuf, CliError> {
    let bytes = match &args.from_file {
        Some(p) => fs::read(p)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?,
        None => {
            let template = args.url.as_deref().unwrap_or(DEFAULT_URL_TEMPLATE);
            let url = template.replace("{name}", &args.name);
            let mut resp = ureq::get(&url)
                .call()
                .map_err(|e| CliError::Runtime(format!("download {url}: {e}")))?;
            resp.body_mut()
                .with_config()
                .limit(DOWNLOAD_LIMIT)
                .read_to_vec()
                .map_err(|e| CliError::Runtime(format!("download {url}: {e}")))?
        }
    };
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| CliError::Runtime(format!("malformed archive: {e}")))?;
    fs::create_dir_all(&args.dest)?;
    archive
        .extract(&args.dest)
        .map_err(|e| CliError::Runtime(format!("extracting archive: {e}")))?;
    let dir = args.dest.join(&args.name);
    let ds = load_dataset(&args.dest, &args.name)?;
    eprintln!(
        "{}: {} graphs, {} classes",
        ds.name,
        ds.len(),
        ds.num_classes
    );
    Ok(dir)
}

fn run_stem(dataset: &str, mode: Mode, seed: u64) -> String {
    format!("{dataset}_{mode}_seed{seed}")
}

/// Trains once per seed and writes `<stem>.json`, `<stem>.ckpt` and
/// `<stem>_z.csv` for each. Returns the run results in seed order.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<RunResult>, CliError> {
    let r = resolve(&args.model)?;
    let ds = load_dataset(&r.data_dir, &r.dataset)?;
    fs::create_dir_all(&r.out)?;
    let mut results = Vec::with_capacity(r.seeds);
    for seed in r.seed_list() {
        let config = TrainConfig {
            seed,
            ..r.train.clone()
        };
        let out = train_model(&ds, &config)?;
        let stem = run_stem(&ds.name, config.mode, seed);
        write_json(&r.out.join(format!("{stem}.json")), &out.result)?;
        out.model
            .save_checkpoint(r.out.join(format!("{stem}.ckpt")))
            .map_err(runtime)?;
        let mut csv = fs::File::create(r.out.join(format!("{stem}_z.csv")))?;
        write_embeddings_csv(&mut csv, &ds.name, seed, &out.embeddings)?;
        eprintln!(
            "{stem}: acc {:.4} nmi {:.4} ari {:.4} ({:.1}s)",
            out.result.acc, out.result.nmi, out.result.ari, out.result.seconds
        );
        results.push(out.result);
    }
    if results.len() > 1 {
        let summary = Summary::from_runs(&ds.name, r.train.mode.as_str(), &results);
        write_json(
            &r.out
                .join(format!("{}_{}_summary.json", ds.name, r.train.mode)),
            &summary,
        )?;
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub mode: String,
    pub seeds: Vec<u64>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
    pub ari_mean: f64,
    pub ari_std: f64,
}

impl Summary {
    pub fn from_runs(dataset: &str, mode: &str, runs: &[RunResult]) -> Self {
        let col = |f: fn(&RunResult) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (acc_mean, acc_std) = col(|r| r.acc);
        let (nmi_mean, nmi_std) = col(|r| r.nmi);
        let (ari_mean, ari_std) = col(|r| r.ari);
        Self {
            dataset: dataset.into(),
            mode: mode.into(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            acc_mean,
            acc_std,
            nmi_mean,
            nmi_std,
            ari_mean,
            ari_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub dataset: String,
    pub method: Method,
    pub seed: u64,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub seconds: f64,
    pub labels: Vec<usize>,
}

/// Gram matrix of the method's kernel over `dataset`.
pub fn baseline_gram(dataset: &GraphDataset, method: Method) -> GramMatrix {
    match method.kernel() {
        "wl" => wl_kernel(&dataset.graphs, WL_ITERATIONS),
        _ => sp_kernel(&dataset.graphs),
    }
}

/// Clusters `dataset` with a kernel baseline and scores the labels.
pub fn run_baseline(
    dataset: &GraphDataset,
    method: Method,
    seed: u64,
) -> Result<(BaselineResult, GramMatrix), CliError> {
    let start = Instant::now();
    let gram = baseline_gram(dataset, method);
    let c = dataset.num_classes;
    let labels = match method {
        Method::WlSc | Method::SpSc => spectral_clustering(&gram, c, seed).map_err(runtime)?,
        Method::WlKm | Method::SpKm => {
            // Gram rows serve as feature vectors.
            let rows =
                Tensor::matrix(gram.len(), gram.len(), gram.values().to_vec()).map_err(runtime)?;
            kmeans(&rows, c, seed, KMEANS_RESTARTS)
                .map_err(runtime)?
                .labels
        }
    };
    let truth = &dataset.graph_labels;
    let result = BaselineResult {
        dataset: dataset.name.clone(),
        method,
        seed,
        acc: accuracy(truth, &labels).map_err(runtime)?,
        nmi: nmi(truth, &labels).map_err(runtime)?,
        ari: ari(truth, &labels).map_err(runtime)?,
        seconds: start.elapsed().as_secs_f64(),
        labels,
    };
    Ok((result, gram))
}

pub fn cmd_baseline(args: &BaselineArgs) -> Result<BaselineResult, CliError> {
    let ds = load_dataset(&args.data_dir, &args.dataset)?;
    let (result, gram) = run_baseline(&ds, args.method, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let stem = format!("{}_{}_seed{}", ds.name, args.method.kernel(), args.seed);
    write_json(
        &args.out.join(format!(
            "{}_{}_seed{}.json",
            ds.name,
            args.method.as_str().replace('+', "-"),
            args.seed
        )),
        &result,
    )?;
    let csv = fs::File::create(args.out.join(format!("{stem}_gram.csv")))?;
    gram.write_csv(io::BufWriter::new(csv))?;
    eprintln!(
        "{} {}: acc {:.4} nmi {:.4} ari {:.4}",
        ds.name,
        args.method.as_str(),
        result.acc,
        result.nmi,
        result.ari
    );
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub grid: SweepGrid,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

pub fn parse_grid(text: &str) -> Result<SweepGrid, CliError> {
    let grid: SweepGrid =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad grid: {e}")))?;
    if grid.points(&TrainConfig::default()).is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    Ok(grid)
}

/// Runs the grid and writes `<dataset>_sweep.json`.
pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepReport, CliError> {
    let grid = parse_grid(&args.grid)?;
    let r = resolve(&args.model)?;
    let ds = load_dataset(&r.data_dir, &r.dataset)?;
    let seeds = r.seed_list();
    let rows = sweep(&ds, &r.train, &grid, &seeds)?;
    let report = SweepReport {
        dataset: ds.name.clone(),
        grid,
        seeds,
        rows,
    };
    fs::create_dir_all(&r.out)?;
    write_json(&r.out.join(format!("{}_sweep.json", ds.name)), &report)?;
    Ok(report)
}

/// Plain-text table of every sweep row or run found in `inputs`.
pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let mut table = String::new();
    writeln!(
        table,
        "{:<28} {:>8} {:>8} {:>8}",
        "run", "acc", "nmi", "ari"
    )
    .unwrap();
    for path in &args.inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if let Ok(report) = serde_json::from_str::<SweepReport>(&text) {
            for row in &report.rows {
                writeln!(
                    table,
                    "{:<28} {:>8.4} {:>8.4} {:>8.4}",
                    format!("{} {}", report.dataset, row.key),
                    row.mean_acc,
                    row.mean_nmi,
                    row.mean_ari
                )
                .unwrap();
            }
        } else if let Ok(run) = serde_json::from_str::<RunResult>(&text) {
            writeln!(
                table,
                "{:<28} {:>8.4} {:>8.4} {:>8.4}",
                run_stem(&run.dataset, run.mode, run.seed),
                run.acc,
                run.nmi,
                run.ari
            )
            .unwrap();
        } else if let Ok(b) = serde_json::from_str::<BaselineResult>(&text) {
            writeln!(
                table,
                "{:<28} {:>8.4} {:>8.4} {:>8.4}",
                format!("{} {} seed{}", b.dataset, b.method.as_str(), b.seed),
                b.acc,
                b.nmi,
                b.ari
            )
            .unwrap();
        } else if let Ok(s) = serde_json::from_str::<Summary>(&text) {
            writeln!(
                table,
                "{:<28} {:>8.4} {:>8.4} {:>8.4}",
                format!("{} {} mean of {}", s.dataset, s.mode, s.seeds.len()),
                s.acc_mean,
                s.nmi_mean,
                s.ari_mean
            )
            .unwrap();
        } else {
            return Err(CliError::Runtime(format!(
                "{}: not a sweep, run, summary or baseline file",
                path.display()
            )));
        }
    }
    Ok(table)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Command::Fetch(a) => cmd_fetch(a).map(|d| println!("{}", d.display())),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Baseline(a) => cmd_baseline(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|r| println!("{} grid points", r.rows.len())),
        Command::Report(a) => cmd_report(a).map(|t| print!("{t}")),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"dataset": "MUTAG", "epochs": 7, "z_dim": 12}"#).unwrap();
        let args = ModelArgs {
            config: Some(cfg),
            z_dim: Some(20),
            ..ModelArgs::default()
        };
        let r = resolve(&args).unwrap();
        assert_eq!(r.dataset, "MUTAG");
        assert_eq!(r.train.epochs, 7);
        assert_eq!(r.train.z_dim, 20);
        assert_eq!(r.train.batch_size, 128);
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"dataset": "MUTAG", "epoch": 7}"#).unwrap();
        let args = ModelArgs {
            config: Some(cfg),
            ..ModelArgs::default()
        };
        assert_eq!(resolve(&args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn bad_learning_rate_is_a_usage_error() {
        let args = ModelArgs {
            dataset: Some("X".into()),
            lr: Some(0.1),
            ..ModelArgs::default()
        };
        assert_eq!(resolve(&args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn grid_parsing() {
        assert!(parse_grid(r#"{"d_z":[10,20]}"#).is_ok());
        assert_eq!(parse_grid("{}").unwrap_err().exit_code(), 2);
        assert_eq!(parse_grid(r#"{"d_z":[]}"#).unwrap_err().exit_code(), 2);
        assert_eq!(parse_grid("not json").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(
            run([
                "dglc",
                "baseline",
                "--dataset",
                "MUTAG",
                "--method",
                "rw+sc"
            ]),
            2
        );
        assert_eq!(run(["dglc", "frobnicate"]), 2);
        assert_eq!(run(["dglc", "train", "--dataset", "X", "--mode", "d9"]), 2);
    }

    #[test]
    fn missing_dataset_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run([
            "dglc".to_string(),
            "baseline".into(),
            "--dataset".into(),
            "NOPE".into(),
            "--method".into(),
            "wl+sc".into(),
            "--data-dir".into(),
            dir.path().display().to_string(),
        ]);
        assert_eq!(code, 1);
    }
}
