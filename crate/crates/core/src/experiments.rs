//! Experiment recipes. Each recipe fixes datasets, widths, prior modes and
//! training settings, runs every replicate in order, and returns raw
//! per-run results alongside a summary.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    cubic_grid, derive_seed, gen_cubic, gen_planted_network, protocol_splits, read_csv_regression, read_mnist_idx,
    standardize, Dataset, SplitProtocol, Standardization, TargetColumn, Targets,
};
use crate::diagnostics::{layer_sparsity, DEFAULT_ACTIVE_FRACTION};
use crate::distributions::NoiseStream;
use crate::error::{Error, Result};
use crate::inference::{fit, HistoryRecord, TrainConfig};
use crate::model::{BayesNet, ForwardVariant, Likelihood, NetworkConfig, PriorConfig, PriorMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    CubicRobustness,
    PlantedPruning,
    Uci,
    MnistSubset,
}

impl ExperimentName {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
            Error::Config(format!(
                "unknown experiment `{s}`; expected cubic-robustness, planted-pruning, uci or mnist-subset"
            ))
        })
    }
}

/// Overrides for a recipe's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentOptions {
    pub seed: u64,
    pub replicates: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub modes: Option<Vec<PriorMode>>,
    pub forward: Option<ForwardVariant>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    /// Training-set size (mnist-subset) or generated points (synthetic).
    pub train_size: Option<usize>,
    /// Directory holding UCI CSVs or MNIST IDX files.
    pub data_dir: Option<PathBuf>,
    /// UCI dataset names to run (file stems in `data_dir`).
    pub datasets: Option<Vec<String>>,
    /// Predictive samples for evaluation.
    pub samples: Option<usize>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean test log predictive density, in original target units.
    pub test_ll: Option<f64>,
    pub rmse: Option<f64>,
    pub error_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub active: usize,
    pub inactive: usize,
    pub sorted_norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Unique within a bundle, e.g. `r0-w15-hs-noncentered`.
    pub id: String,
    pub dataset: String,
    pub replicate: usize,
    pub widths: Vec<usize>,
    pub mode: PriorMode,
    pub forward: ForwardVariant,
    pub train: TrainConfig,
    pub metrics: Metrics,
    pub layers: Vec<LayerSummary>,
    pub final_elbo: Option<f64>,
    #[serde(skip)]
    pub history: Vec<HistoryRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub width: usize,
    pub mode: PriorMode,
    pub runs: usize,
    pub mean_test_ll: Option<f64>,
    pub sd_test_ll: Option<f64>,
    pub mean_rmse: Option<f64>,
    pub sd_rmse: Option<f64>,
    pub mean_error_rate: Option<f64>,
    /// Mean active units in the first hidden layer.
    pub mean_active: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub experiment: ExperimentName,
    pub options: ExperimentOptions,
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    /// Datasets that were requested or expected but not found.
    pub skipped: Vec<String>,
}

/// Per-point predictions in original target units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionTable {
    Regression {
        target: Vec<f64>,
        mean: Vec<f64>,
        variance: Vec<f64>,
        log_density: Vec<f64>,
    },
    Classification {
        target: Vec<usize>,
        predicted: Vec<usize>,
        /// `[N x C]` averaged class probabilities.
        probs: crate::tensor::Tensor,
    },
}

impl PredictionTable {
    pub fn metrics(&self) -> Metrics {
        match self {
            PredictionTable::Regression {
                target,
                mean,
                log_density,
                ..
            } => {
                let n = target.len() as f64;
                let mse = mean.iter().zip(target).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / n;
                Metrics {
                    test_ll: Some(log_density.iter().sum::<f64>() / n),
                    rmse: Some(mse.sqrt()),
                    error_rate: None,
                }
            }
            PredictionTable::Classification { target, predicted, .. } => {
                let wrong = predicted.iter().zip(target).filter(|(a, b)| a != b).count();
                Metrics {
                    test_ll: None,
                    rmse: None,
                    error_rate: Some(wrong as f64 / target.len() as f64),
                }
            }
        }
    }
}

/// Predict `test` with `samples` forward passes. Regression targets are in
/// standardized units when `stats` is given; the table is in original units.
pub fn predict_table(
    model: &BayesNet,
    test: &Dataset,
    stats: Option<&Standardization>,
    samples: usize,
    seed: u64,
) -> Result<PredictionTable> {
    let mut noise = NoiseStream::new(seed);
    let pred = model.sample_predictive(&test.features, samples, &mut noise)?;
    match &test.targets {
        Targets::Real(y) => {
            let s = pred.regression(Some(y))?;
            let log_density = s.log_density.expect("targets given");
            Ok(match stats {
                None => PredictionTable::Regression {
                    target: y.clone(),
                    mean: s.mean,
                    variance: s.variance,
                    log_density,
                },
                Some(st) => PredictionTable::Regression {
                    target: y.iter().map(|&v| st.unstandardize_target(v)).collect(),
                    mean: s.mean.iter().map(|&v| st.unstandardize_target(v)).collect(),
                    variance: s.variance.iter().map(|v| v * st.target_std * st.target_std).collect(),
                    log_density: log_density.iter().map(|v| v + st.log_density_offset()).collect(),
                },
            })
        }
        Targets::Labels { labels, .. } => {
            let c = pred.classification()?;
            Ok(PredictionTable::Classification {
                target: labels.clone(),
                predicted: c.labels,
                probs: c.probs,
            })
        }
    }
}

/// Predictive metrics on `test`; see [`predict_table`].
pub fn evaluate(
    model: &BayesNet,
    test: &Dataset,
    stats: Option<&Standardization>,
    samples: usize,
    seed: u64,
) -> Result<Metrics> {
    Ok(predict_table(model, test, stats, samples, seed)?.metrics())
}

struct RunSpec<'a> {
    dataset: &'a str,
    replicate: usize,
    widths: Vec<usize>,
    likelihood: Likelihood,
    mode: PriorMode,
    forward: ForwardVariant,
    train: TrainConfig,
    threshold: f64,
    samples: usize,
}

fn run_one(spec: RunSpec, train: &Dataset, test: &Dataset, stats: Option<&Standardization>) -> Result<RunResult> {
    let network = NetworkConfig::new(spec.widths.clone(), spec.likelihood);
    let prior = PriorConfig::new(spec.mode).with_forward(spec.forward);
    let mut model = BayesNet::init_seeded(&network, &prior, spec.train.seed)?;
    let outcome = fit(&mut model, train, &spec.train, &mut |_| {})?;
    let metrics = evaluate(&model, test, stats, spec.samples, spec.train.seed ^ 0x5eed)?;
    let layers = (0..model.layers.len() - 1)
        .map(|l| {
            layer_sparsity(&model, l, spec.threshold).map(|r| LayerSummary {
                layer: l,
                active: r.active,
                inactive: r.inactive,
                sorted_norms: r.sorted_norms,
            })
        })
        .collect::<Result<_>>()?;
    let hidden: Vec<String> = spec.widths[1..spec.widths.len() - 1]
        .iter()
        .map(|w| w.to_string())
        .collect();
    Ok(RunResult {
        id: format!(
            "{}-r{}-w{}-{}",
            spec.dataset,
            spec.replicate,
            hidden.join("x"),
            mode_name(spec.mode)
        ),
        dataset: spec.dataset.to_owned(),
        replicate: spec.replicate,
        widths: spec.widths,
        mode: spec.mode,
        forward: spec.forward,
        train: spec.train,
        metrics,
        layers,
        final_elbo: outcome.history.last().map(|h| h.elbo),
        history: outcome.history,
    })
}

pub fn mode_name(mode: PriorMode) -> &'static str {
    match mode {
        PriorMode::HsNoncentered => "hs-noncentered",
        PriorMode::HsCentered => "hs-centered",
        PriorMode::GaussianBaseline => "gaussian-baseline",
    }
}

fn summarize(runs: &[RunResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize, PriorMode)> = Vec::new();
    for r in runs {
        let k = (r.dataset.clone(), r.widths[1], r.mode);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, width, mode)| {
            let group: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.dataset == dataset && r.widths[1] == width && r.mode == mode)
                .collect();
            let stat = |f: &dyn Fn(&Metrics) -> Option<f64>| -> (Option<f64>, Option<f64>) {
                let v: Vec<f64> = group.iter().filter_map(|r| f(&r.metrics)).collect();
                if v.is_empty() {
                    return (None, None);
                }
                let n = v.len() as f64;
                let m = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
                (Some(m), Some(sd))
            };
            let (mean_test_ll, sd_test_ll) = stat(&|m| m.test_ll);
            let (mean_rmse, sd_rmse) = stat(&|m| m.rmse);
            let (mean_error_rate, _) = stat(&|m| m.error_rate);
            let mean_active = group
                .iter()
                .map(|r| r.layers.first().map_or(0, |l| l.active) as f64)
                .sum::<f64>()
                / group.len() as f64;
            SummaryRow {
                dataset,
                width,
                mode,
                runs: group.len(),
                mean_test_ll,
                sd_test_ll,
                mean_rmse,
                sd_rmse,
                mean_error_rate,
                mean_active,
            }
        })
        .collect()
}

/// Run a recipe end to end.
pub fn run_experiment(name: ExperimentName, opts: &ExperimentOptions) -> Result<Bundle> {
    let (runs, skipped) = match name {
        ExperimentName::CubicRobustness => (cubic_robustness(opts)?, Vec::new()),
        ExperimentName::PlantedPruning => (planted_pruning(opts)?, Vec::new()),
        ExperimentName::Uci => uci(opts)?,
        ExperimentName::MnistSubset => (mnist_subset(opts)?, Vec::new()),
    };
    Ok(Bundle {
        experiment: name,
        options: opts.clone(),
        summary: summarize(&runs),
        runs,
        skipped,
    })
}

/// Single-hidden-layer regression on 20 noisy cubic points, evaluated on a
/// 100-point grid over `[-4, 4]`. Defaults: widths 50/100/1000, Gaussian
/// baseline vs non-centered horseshoe, 1000 full-batch steps.
pub fn cubic_robustness(opts: &ExperimentOptions) -> Result<Vec<RunResult>> {
    let widths = opts.widths.clone().unwrap_or(vec![50, 100, 1000]);
    let modes = opts
        .modes
        .clone()
        .unwrap_or(vec![PriorMode::GaussianBaseline, PriorMode::HsNoncentered]);
    let mut runs = Vec::new();
    for r in 0..opts.replicates.unwrap_or(5) {
        let data_seed = derive_seed(opts.seed, 2 * r as u64);
        let train = gen_cubic(opts.train_size.unwrap_or(20), data_seed)?;
        let test = cubic_grid(100, derive_seed(opts.seed, 2 * r as u64 + 1))?;
        let (train, rest, stats) = standardize(&train, &[&test])?;
        for &w in &widths {
            for &mode in &modes {
                let spec = RunSpec {
                    dataset: "cubic",
                    replicate: r,
                    widths: vec![1, w, 1],
                    likelihood: Likelihood::GaussianRegression,
                    mode,
                    forward: opts.forward.unwrap_or(ForwardVariant::ExpectedScales),
                    train: TrainConfig {
                        epochs: opts.epochs.unwrap_or(1000),
                        learning_rate: opts.learning_rate.unwrap_or(0.005),
                        seed: data_seed,
                        ..TrainConfig::default()
                    },
                    threshold: opts.threshold.unwrap_or(DEFAULT_ACTIVE_FRACTION),
                    samples: opts.samples.unwrap_or(100),
                };
                runs.push(run_one(spec, &train, &rest[0], Some(&stats))?);
            }
        }
    }
    Ok(runs)
}

/// Classification of 500 points labelled by the planted 2-2-1 network.
/// Defaults: widths 15/100, all three prior modes, scale-sampled
/// pre-activations, 4000 full-batch steps at learning rate 0.01.
pub fn planted_pruning(opts: &ExperimentOptions) -> Result<Vec<RunResult>> {
    let widths = opts.widths.clone().unwrap_or(vec![15, 100]);
    let modes = opts.modes.clone().unwrap_or(vec![
        PriorMode::HsNoncentered,
        PriorMode::HsCentered,
        PriorMode::GaussianBaseline,
    ]);
    let mut runs = Vec::new();
    for r in 0..opts.replicates.unwrap_or(5) {
        let data_seed = derive_seed(opts.seed, 2 * r as u64);
        let train = gen_planted_network(opts.train_size.unwrap_or(500), data_seed)?;
        let test = gen_planted_network(1000, derive_seed(opts.seed, 2 * r as u64 + 1))?;
        for &w in &widths {
            for &mode in &modes {
                let spec = RunSpec {
                    dataset: "planted",
                    replicate: r,
                    widths: vec![2, w, 2],
                    likelihood: Likelihood::Categorical,
                    mode,
                    forward: opts.forward.unwrap_or(ForwardVariant::SampledScales),
                    train: TrainConfig {
                        epochs: opts.epochs.unwrap_or(4000),
                        learning_rate: opts.learning_rate.unwrap_or(0.01),
                        seed: data_seed,
                        ..TrainConfig::default()
                    },
                    threshold: opts.threshold.unwrap_or(DEFAULT_ACTIVE_FRACTION),
                    samples: opts.samples.unwrap_or(20),
                };
                runs.push(run_one(spec, &train, &test, None)?);
            }
        }
    }
    Ok(runs)
}

pub const UCI_DATASETS: [&str; 9] = [
    "boston", "concrete", "energy", "kin8nm", "naval", "power", "protein", "wine", "yacht",
];

/// Random 90/10 splits of each UCI CSV found in `data_dir` (`<name>.csv`,
/// target in the last column). 50 hidden units, 100 and five splits for
/// protein, twenty splits otherwise.
pub fn uci(opts: &ExperimentOptions) -> Result<(Vec<RunResult>, Vec<String>)> {
    let dir = opts
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("uci experiment needs a data directory".into()))?;
    let names: Vec<String> = match &opts.datasets {
        Some(d) => d.clone(),
        None => UCI_DATASETS.iter().map(|s| s.to_string()).collect(),
    };
    let modes = opts.modes.clone().unwrap_or(vec![PriorMode::HsNoncentered]);
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for name in &names {
        let path = dir.join(format!("{name}.csv"));
        if !path.exists() {
            if opts.datasets.is_some() {
                return Err(Error::Config(format!(
                    "dataset `{name}` not found at {}",
                    path.display()
                )));
            }
            skipped.push(name.clone());
            continue;
        }
        let data = read_csv_regression(&path, &TargetColumn::default())?;
        let (protocol, width) = if name == "protein" {
            (SplitProtocol::Protein, 100)
        } else {
            (SplitProtocol::UciSmall, 50)
        };
        let splits = protocol_splits(&data, protocol, opts.seed)?;
        let n_splits = opts.replicates.unwrap_or(splits.len()).min(splits.len());
        for (r, (train, test)) in splits.into_iter().take(n_splits).enumerate() {
            let (train, rest, stats) = standardize(&train, &[&test])?;
            let width = opts.widths.as_ref().and_then(|w| w.first().copied()).unwrap_or(width);
            for &mode in &modes {
                let spec = RunSpec {
                    dataset: name,
                    replicate: r,
                    widths: vec![data.dim(), width, 1],
                    likelihood: Likelihood::GaussianRegression,
                    mode,
                    forward: opts.forward.unwrap_or(ForwardVariant::ExpectedScales),
                    train: TrainConfig {
                        epochs: opts.epochs.unwrap_or(UCI_EPOCHS),
                        learning_rate: opts.learning_rate.unwrap_or(0.005),
                        seed: derive_seed(opts.seed, r as u64),
                        ..TrainConfig::default()
                    },
                    threshold: opts.threshold.unwrap_or(DEFAULT_ACTIVE_FRACTION),
                    samples: opts.samples.unwrap_or(100),
                };
                runs.push(run_one(spec, &train, &rest[0], Some(&stats))?);
            }
        }
    }
    Ok((runs, skipped))
}

pub const UCI_EPOCHS: usize = 2000;

/// Locate an IDX file under a few common names.
pub fn find_mnist_file(dir: &Path, split: &str, kind: &str) -> Result<PathBuf> {
    let idx = if kind == "images" { "idx3" } else { "idx1" };
    let candidates = [
        format!("{split}-{kind}.idx"),
        format!("{split}-{kind}-{idx}-ubyte"),
        format!("{}-{kind}-{idx}-ubyte", if split == "test" { "t10k" } else { split }),
    ];
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.exists())
        .ok_or_else(|| {
            Error::Config(format!(
                "no MNIST {split} {kind} file in {} (tried {})",
                dir.display(),
                candidates.join(", ")
            ))
        })
}

pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_mnist_idx(
        find_mnist_file(dir, "train", "images")?,
        find_mnist_file(dir, "train", "labels")?,
    )?;
    let test = read_mnist_idx(
        find_mnist_file(dir, "test", "images")?,
        find_mnist_file(dir, "test", "labels")?,
    )?;
    Ok((train, test))
}

/// Two-hidden-layer classifiers on a subsample of the MNIST training set.
/// Defaults: widths 400/800/1200 under the non-centered horseshoe plus a
/// Gaussian baseline at the first width, 10k training images (or all that
/// are available), batch 512, learning rate 0.005.
pub fn mnist_subset(opts: &ExperimentOptions) -> Result<Vec<RunResult>> {
    let dir = opts
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("mnist-subset needs a data directory".into()))?;
    let (full, test) = load_mnist(dir)?;
    let n = opts.train_size.unwrap_or(10_000).min(full.len());
    let train = if n < full.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0));
        let mut idx: Vec<usize> = (0..full.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        full.subset(&idx)?
    } else {
        full
    };
    let widths = opts.widths.clone().unwrap_or(vec![400, 800, 1200]);
    let mut plan: Vec<(usize, PriorMode)> = Vec::new();
    match &opts.modes {
        Some(modes) => {
            for &w in &widths {
                for &m in modes {
                    plan.push((w, m));
                }
            }
        }
        None => {
            plan.push((widths[0], PriorMode::GaussianBaseline));
            plan.extend(widths.iter().map(|&w| (w, PriorMode::HsNoncentered)));
        }
    }
    let seed = derive_seed(opts.seed, 1);
    plan.into_iter()
        .map(|(w, mode)| {
            let spec = RunSpec {
                dataset: "mnist",
                replicate: 0,
                widths: vec![train.dim(), w, w, 10],
                likelihood: Likelihood::Categorical,
                mode,
                forward: opts.forward.unwrap_or(ForwardVariant::SampledScales),
                train: TrainConfig {
                    epochs: opts.epochs.unwrap_or(MNIST_EPOCHS),
                    learning_rate: opts.learning_rate.unwrap_or(0.005),
                    seed,
                    ..TrainConfig::default()
                },
                threshold: opts.threshold.unwrap_or(DEFAULT_ACTIVE_FRACTION),
                samples: opts.samples.unwrap_or(10),
            };
            run_one(spec, &train, &test, None)
        })
        .collect()
}

pub const MNIST_EPOCHS: usize = 80;
