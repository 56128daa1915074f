//! The `hsbnn` command line: train, eval, inspect, experiment and gen-data.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data or file format,
//! 3 numerical failure during training.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use hsbnn::checkpoint::Checkpoint;
use hsbnn::data::{
    cubic_grid, gen_cubic, gen_planted_network, read_csv_classification, read_csv_regression, read_mnist_idx, Dataset,
    Standardization, TargetColumn, Targets,
};
use hsbnn::diagnostics::{sparsity_report, SparsityReport, DEFAULT_ACTIVE_FRACTION};
use hsbnn::experiments::{
    find_mnist_file, predict_table, run_experiment, Bundle, ExperimentName, ExperimentOptions, Metrics, PredictionTable,
};
use hsbnn::inference::{HistoryRecord, TimingRecord, TrainConfig, Trainer};
use hsbnn::model::{BayesNet, Likelihood, NetworkConfig, PriorConfig};
use hsbnn::Error;

pub const CHECKPOINT_FILE: &str = "checkpoint.hsbnn";

#[derive(Debug, Parser)]
#[command(name = "hsbnn", version, about = "Horseshoe-prior Bayesian neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint, history and sparsity report.
    Train(TrainArgs),
    /// Predict a dataset with a checkpoint and write metrics and predictions.
    Eval(EvalArgs),
    /// Write the node-sparsity report of a checkpoint.
    Inspect(InspectArgs),
    /// Run an experiment recipe.
    Experiment(ExperimentArgs),
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// CSV file, or a directory holding MNIST IDX files.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Active threshold as a fraction of the largest unit norm.
    #[arg(long, default_value_t = DEFAULT_ACTIVE_FRACTION)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV file, or a directory holding MNIST IDX files (the test split is used).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Forward passes averaged per prediction.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target column of a CSV, by index or header name.
    #[arg(long, default_value = "last")]
    pub target: String,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Only this layer (0-based); every hidden layer by default.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ACTIVE_FRACTION)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// cubic-robustness, planted-pruning, uci or mnist-subset.
    pub name: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON overrides of the recipe defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding UCI CSVs or MNIST IDX files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    /// Noisy cubic on uniform inputs.
    Cubic,
    /// Noisy cubic on an even grid.
    CubicGrid,
    /// Labels from a fixed two-unit network.
    Planted,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    pub kind: GenKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Contract(_) | Error::Domain(_) => 1,
                Error::Dimension(_)
                | Error::Format { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Json(_) => 2,
                Error::NonFinite { .. } => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Inspect(a) => inspect(&a),
        Command::Experiment(a) => experiment(&a),
        Command::GenData(a) => gen_data(&a),
    }
}

/// Flat run configuration. Keys mirror the fields of the network, prior and
/// training configs, plus `target_column` and `standardize`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub prior: PriorConfig,
    pub train: TrainConfig,
    /// CSV target column; the last column by default.
    pub target_column: TargetColumn,
    /// Z-score features and targets of regression data. Defaults to true for
    /// regression and must be false for classification.
    pub standardize: bool,
}

const NETWORK_KEYS: &[&str] = &["widths", "nonlinearity", "likelihood"];
const PRIOR_KEYS: &[&str] = &["mode", "b0", "bg", "bkappa", "forward", "output_scale"];
const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "samples",
    "seed",
    "fixed_point_every",
    "grad_clip",
    "log_every",
];
const DATA_KEYS: &[&str] = &["target_column", "standardize"];

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(CliError::Usage("config must be a JSON object".into()));
        };
        let mut parts: [Map<String, Value>; 4] = Default::default();
        for (k, v) in map {
            let slot = [NETWORK_KEYS, PRIOR_KEYS, TRAIN_KEYS, DATA_KEYS]
                .iter()
                .position(|keys| keys.contains(&k.as_str()))
                .ok_or_else(|| CliError::Usage(format!("unknown config key `{k}`")))?;
            parts[slot].insert(k, v);
        }
        let [net, prior, train, data] = parts;
        let bad = |what: &str, e: serde_json::Error| CliError::Usage(format!("config {what}: {e}"));
        let network: NetworkConfig = serde_json::from_value(Value::Object(net)).map_err(|e| bad("network", e))?;
        let prior: PriorConfig = serde_json::from_value(Value::Object(prior)).map_err(|e| bad("prior", e))?;
        let train: TrainConfig = serde_json::from_value(Value::Object(train)).map_err(|e| bad("training", e))?;
        let target_column = match data.get("target_column") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| bad("target_column", e))?,
            None => TargetColumn::default(),
        };
        let regression = network.likelihood == Likelihood::GaussianRegression;
        let standardize = match data.get("standardize") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| bad("standardize", e))?,
            None => regression,
        };
        if standardize && !regression {
            return Err(CliError::Usage(
                "standardize applies only to gaussian-regression data".into(),
            ));
        }
        network.validate()?;
        prior.validate()?;
        train.validate()?;
        Ok(Self {
            network,
            prior,
            train,
            target_column,
            standardize,
        })
    }

    /// The flat form accepted by [`RunConfig::from_json`].
    pub fn to_flat_json(&self) -> CliResult<Value> {
        let mut out = Map::new();
        for part in [
            serde_json::to_value(&self.network),
            serde_json::to_value(&self.prior),
            serde_json::to_value(&self.train),
        ] {
            if let Value::Object(m) = part.map_err(Error::from)? {
                out.extend(m);
            }
        }
        out.insert(
            "target_column".into(),
            serde_json::to_value(&self.target_column).map_err(Error::from)?,
        );
        out.insert("standardize".into(), Value::Bool(self.standardize));
        Ok(Value::Object(out))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn parse_target(s: &str) -> TargetColumn {
    s.parse()
        .map(TargetColumn::Index)
        .unwrap_or_else(|_| TargetColumn::Name(s.into()))
}

/// Read `path` as a CSV file, or as an MNIST directory whose `split`
/// ("train" or "test") files are used.
pub fn load_dataset(path: &Path, likelihood: Likelihood, target: &TargetColumn, split: &str) -> CliResult<Dataset> {
    if path.is_dir() {
        if likelihood != Likelihood::Categorical {
            return Err(CliError::Usage(format!(
                "{} is a directory; IDX data needs the categorical likelihood",
                path.display()
            )));
        }
        let images = find_mnist_file(path, split, "images").map_err(as_data_error)?;
        let labels = find_mnist_file(path, split, "labels").map_err(as_data_error)?;
        return Ok(read_mnist_idx(images, labels)?);
    }
    Ok(match likelihood {
        Likelihood::GaussianRegression => read_csv_regression(path, target)?,
        Likelihood::Categorical => read_csv_classification(path, target)?,
    })
}

fn as_data_error(e: Error) -> CliError {
    match e {
        Error::Config(m) => CliError::Core(Error::Format {
            path: PathBuf::new(),
            message: m,
        }),
        e => CliError::Core(e),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(Error::from)?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Core(Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let raw = load_dataset(&a.data, cfg.network.likelihood, &cfg.target_column, "train")?;
    if raw.dim() != cfg.network.widths[0] {
        return Err(CliError::Usage(format!(
            "widths[0] is {} but {} has {} features",
            cfg.network.widths[0],
            a.data.display(),
            raw.dim()
        )));
    }
    let (data, standardization) = if cfg.standardize {
        let stats = Standardization::fit(&raw)?;
        (stats.apply(&raw)?, Some(stats))
    } else {
        (raw, None)
    };
    let mut model = BayesNet::init_seeded(&cfg.network, &cfg.prior, cfg.train.seed)?;
    let mut trainer = Trainer::new(&model, cfg.train.clone())?;
    let outcome = trainer.run(&mut model, &data, &mut |_| {})?;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg.to_flat_json()?)?;
    let ckpt = Checkpoint {
        model,
        train: cfg.train.clone(),
        state: Some(trainer.state),
        history: outcome.history.clone(),
        standardization,
    };
    ckpt.save(a.out.join(CHECKPOINT_FILE))?;
    write_jsonl(&a.out.join("history.jsonl"), &outcome.history)?;
    write_jsonl::<TimingRecord>(&a.out.join("timing.jsonl"), &outcome.timing)?;
    let report = sparsity_report(&ckpt.model, None, a.threshold)?;
    write_json(&a.out.join("sparsity.json"), &report)?;
    let last = outcome.history.last();
    println!(
        "trained {} steps; final ELBO {}; wrote {}",
        ckpt.state.as_ref().map_or(0, |s| s.step),
        last.map_or("n/a".into(), |h| format!("{:.4}", h.elbo)),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Serialize)]
struct RegressionRow {
    index: usize,
    target: f64,
    mean: f64,
    variance: f64,
    log_density: f64,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = &ckpt.model;
    let raw = load_dataset(&a.data, model.network.likelihood, &parse_target(&a.target), "test")?;
    if raw.dim() != model.network.widths[0] {
        return Err(CliError::Core(Error::Dimension(format!(
            "checkpoint expects {} features, {} has {}",
            model.network.widths[0],
            a.data.display(),
            raw.dim()
        ))));
    }
    if let Some(c) = raw.classes() {
        let out = *model.network.widths.last().expect("validated widths");
        if c > out {
            return Err(CliError::Core(Error::Dimension(format!(
                "data has labels up to {}, checkpoint predicts {out} classes",
                c - 1
            ))));
        }
    }
    let data = match &ckpt.standardization {
        Some(st) => st.apply(&raw)?,
        None => raw,
    };
    let table = predict_table(model, &data, ckpt.standardization.as_ref(), a.samples, a.seed)?;
    let report = EvalReport {
        n: data.len(),
        samples: a.samples,
        seed: a.seed,
        metrics: table.metrics(),
    };
    create_dir(&a.out)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    let pred_path = a.out.join("predictions.csv");
    match &table {
        PredictionTable::Regression {
            target,
            mean,
            variance,
            log_density,
        } => write_csv(
            &pred_path,
            (0..target.len()).map(|i| RegressionRow {
                index: i,
                target: target[i],
                mean: mean[i],
                variance: variance[i],
                log_density: log_density[i],
            }),
        )?,
        PredictionTable::Classification {
            target,
            predicted,
            probs,
        } => {
            let c = probs.cols();
            let mut header = vec!["index".to_string(), "target".into(), "predicted".into()];
            header.extend((0..c).map(|k| format!("p{k}")));
            let mut w = csv::Writer::from_path(&pred_path).map_err(|e| csv_error(&pred_path, e))?;
            w.write_record(&header).map_err(|e| csv_error(&pred_path, e))?;
            for (i, row) in probs.data().chunks(c).enumerate() {
                let mut rec = vec![i.to_string(), target[i].to_string(), predicted[i].to_string()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec).map_err(|e| csv_error(&pred_path, e))?;
            }
            w.flush().map_err(|e| io_error(&pred_path, e))?;
        }
    }
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}

#[derive(Serialize)]
struct NormRow {
    layer: usize,
    rank: usize,
    unit: usize,
    norm: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    layer: usize,
    unit: usize,
    bin_low: f64,
    bin_high: f64,
    count: usize,
}

fn write_sparsity(dir: &Path, report: &SparsityReport) -> CliResult<()> {
    write_json(&dir.join("sparsity.json"), report)?;
    write_csv(
        &dir.join("norms.csv"),
        report.layers.iter().flat_map(|l| {
            l.sorted_norms
                .iter()
                .zip(&l.order)
                .enumerate()
                .map(|(rank, (&norm, &unit))| NormRow {
                    layer: l.layer,
                    rank,
                    unit,
                    norm,
                })
        }),
    )?;
    write_csv(
        &dir.join("histogram.csv"),
        report.layers.iter().flat_map(|l| {
            let h = &l.smallest_histogram;
            h.counts.iter().enumerate().map(|(i, &count)| HistogramRow {
                layer: l.layer,
                unit: l.smallest_unit,
                bin_low: h.edges[i],
                bin_high: h.edges[i + 1],
                count,
            })
        }),
    )
}

pub fn inspect(a: &InspectArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let report = sparsity_report(&ckpt.model, a.layer, a.threshold)?;
    create_dir(&a.out)?;
    write_sparsity(&a.out, &report)?;
    for l in &report.layers {
        println!(
            "layer {}: {} active, {} inactive (threshold {:.6})",
            l.layer, l.active, l.inactive, l.threshold
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    dataset: &'a str,
    width: usize,
    mode: String,
    runs: usize,
    mean_test_ll: Option<f64>,
    sd_test_ll: Option<f64>,
    mean_rmse: Option<f64>,
    sd_rmse: Option<f64>,
    mean_error_rate: Option<f64>,
    mean_active: f64,
}

#[derive(Serialize)]
struct RunNormRow<'a> {
    id: &'a str,
    layer: usize,
    rank: usize,
    norm: f64,
}

fn mode_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

/// Write `results.json`, `summary.csv`, `norms.csv` and one history file per
/// run under `histories/`.
pub fn write_bundle(dir: &Path, bundle: &Bundle) -> CliResult<()> {
    create_dir(dir)?;
    write_json(&dir.join("results.json"), bundle)?;
    write_csv(
        &dir.join("summary.csv"),
        bundle.summary.iter().map(|s| SummaryCsvRow {
            dataset: &s.dataset,
            width: s.width,
            mode: mode_name(&s.mode),
            runs: s.runs,
            mean_test_ll: s.mean_test_ll,
            sd_test_ll: s.sd_test_ll,
            mean_rmse: s.mean_rmse,
            sd_rmse: s.sd_rmse,
            mean_error_rate: s.mean_error_rate,
            mean_active: s.mean_active,
        }),
    )?;
    write_csv(
        &dir.join("norms.csv"),
        bundle.runs.iter().flat_map(|r| {
            r.layers.iter().flat_map(move |l| {
                l.sorted_norms.iter().enumerate().map(move |(rank, &norm)| RunNormRow {
                    id: &r.id,
                    layer: l.layer,
                    rank,
                    norm,
                })
            })
        }),
    )?;
    let hist_dir = dir.join("histories");
    create_dir(&hist_dir)?;
    for r in &bundle.runs {
        write_jsonl::<HistoryRecord>(&hist_dir.join(format!("{}.jsonl", r.id)), &r.history)?;
    }
    Ok(())
}

pub fn experiment(a: &ExperimentArgs) -> CliResult<()> {
    let name = ExperimentName::parse(&a.name)?;
    let mut opts: ExperimentOptions = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("experiment config: {e}")))?
        }
        None => ExperimentOptions::default(),
    };
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    if a.data.is_some() {
        opts.data_dir = a.data.clone();
    }
    if a.threshold.is_some() {
        opts.threshold = a.threshold;
    }
    if a.samples.is_some() {
        opts.samples = a.samples;
    }
    let bundle = run_experiment(name, &opts)?;
    write_bundle(&a.out, &bundle)?;
    let mut stdout = std::io::stdout().lock();
    for s in &bundle.skipped {
        let _ = writeln!(stdout, "skipped: {s}");
    }
    for s in &bundle.summary {
        let _ = writeln!(
            stdout,
            "{} width {} {}: runs {} ll {} rmse {} err {} active {:.1}",
            s.dataset,
            s.width,
            mode_name(&s.mode),
            s.runs,
            fmt_opt(s.mean_test_ll),
            fmt_opt(s.mean_rmse),
            fmt_opt(s.mean_error_rate),
            s.mean_active
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let data = match a.kind {
        GenKind::Cubic => gen_cubic(a.n, a.seed)?,
        GenKind::CubicGrid => cubic_grid(a.n, a.seed)?,
        GenKind::Planted => gen_planted_network(a.n, a.seed)?,
    };
    write_dataset_csv(&a.out, &data)
}

/// Features `x0..`, then the target as `y` or `label`.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> CliResult<()> {
    let d = data.dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push(match data.targets {
        Targets::Real(_) => "y".into(),
        Targets::Labels { .. } => "label".into(),
    });
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, row) in data.features.data().chunks(d).enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(match &data.targets {
            Targets::Real(y) => y[i].to_string(),
            Targets::Labels { labels, .. } => labels[i].to_string(),
        });
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}
