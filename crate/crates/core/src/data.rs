//! Datasets: synthetic generators, CSV and IDX readers, standardization and
//! train/test split protocols.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// MNIST pixels are divided by this value, not by 255.
pub const MNIST_PIXEL_DIVISOR: f64 = 126.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Labels { labels: Vec<usize>, classes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Regression,
    Classification,
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(y) => y.len(),
            Targets::Labels { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            Targets::Real(_) => DatasetKind::Regression,
            Targets::Labels { .. } => DatasetKind::Classification,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Real(y) => Targets::Real(indices.iter().map(|&i| y[i]).collect()),
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        }
    }
}

/// Per-feature and target z-scoring statistics, computed on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    /// 1.0 for zero-variance features, which are only centered.
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Standardization {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let Targets::Real(y) = &train.targets else {
            return Err(Error::Contract("standardization needs a regression dataset".into()));
        };
        let (n, d) = train.features.expect_matrix()?;
        let x = train.features.data();
        let mut feature_mean = vec![0.0; d];
        let mut feature_std = vec![0.0; d];
        for j in 0..d {
            let (m, s) = mean_std((0..n).map(|i| x[i * d + j]));
            feature_mean[j] = m;
            feature_std[j] = if s > 0.0 { s } else { 1.0 };
        }
        let (target_mean, s) = mean_std(y.iter().copied());
        Ok(Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std: if s > 0.0 { s } else { 1.0 },
        })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let (n, d) = data.features.expect_matrix()?;
        if d != self.feature_mean.len() {
            return Err(Error::dim(format!(
                "dataset has {d} features, standardization expects {}",
                self.feature_mean.len()
            )));
        }
        let mut x = data.features.data().to_vec();
        for row in x.chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.feature_mean[j]) / self.feature_std[j];
            }
        }
        let targets = match &data.targets {
            Targets::Real(y) => Targets::Real(y.iter().map(|&v| self.standardize_target(v)).collect()),
            Targets::Labels { .. } => return Err(Error::Contract("standardization needs a regression dataset".into())),
        };
        Ok(Dataset {
            features: Tensor::matrix(n, d, x)?,
            targets,
            standardization: Some(self.clone()),
        })
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn unstandardize_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }

    /// Change-of-variables correction: `ln p(y) = ln p(ỹ) + log_density_offset()`.
    pub fn log_density_offset(&self) -> f64 {
        -self.target_std.ln()
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `[N x D]`
    pub features: Tensor,
    pub targets: Targets,
    /// Set when features and targets are in standardized units.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Targets) -> Result<Self> {
        let (n, _) = features.expect_matrix()?;
        if n != targets.len() {
            return Err(Error::dim(format!("{n} feature rows but {} targets", targets.len())));
        }
        if !features.is_finite() {
            return Err(Error::domain("non-finite feature value"));
        }
        match &targets {
            Targets::Real(y) if y.iter().any(|v| !v.is_finite()) => {
                return Err(Error::domain("non-finite target value"))
            }
            Targets::Labels { labels, classes } => {
                if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::domain(format!("label {bad} outside [0, {classes})")));
                }
            }
            _ => {}
        }
        Ok(Self {
            features,
            targets,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn kind(&self) -> DatasetKind {
        self.targets.kind()
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { classes, .. } => Some(*classes),
            Targets::Real(_) => None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            targets: self.targets.select(indices),
            standardization: self.standardization.clone(),
        })
    }
}

/// Regression data `y = x³ + ε` with `x ~ U[-4, 4]` and `ε ~ N(0, 9)`.
pub fn gen_cubic(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Contract("gen_cubic needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ux = Uniform::new_inclusive(-4.0, 4.0).expect("valid range");
    let noise = Normal::new(0.0, 3.0).expect("valid sd");
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = ux.sample(&mut rng);
        x.push(xi);
        y.push(xi.powi(3) + noise.sample(&mut rng));
    }
    Dataset::new(Tensor::matrix(n, 1, x)?, Targets::Real(y))
}

/// Noise-free cubic targets on an evenly spaced grid over `[-4, 4]`, plus
/// `N(0, 9)` noise drawn from `seed`.
pub fn cubic_grid(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Contract("cubic_grid needs n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 3.0).expect("valid sd");
    let x: Vec<f64> = (0..n).map(|i| -4.0 + 8.0 * i as f64 / (n - 1) as f64).collect();
    let y = x.iter().map(|v| v.powi(3) + noise.sample(&mut rng)).collect();
    Dataset::new(Tensor::matrix(n, 1, x)?, Targets::Real(y))
}

/// Frozen 2-2-1 ReLU network used to label [`gen_planted_network`] data.
///
/// `h = relu(x W1 + b1)`, `out = h · w2 + b2`, label 1 iff `out > 0`.
pub mod planted {
    /// Rows are inputs, columns hidden units.
    pub const W1: [[f64; 2]; 2] = [[1.0, -0.6], [0.5, 1.0]];
    pub const B1: [f64; 2] = [0.3, 0.2];
    pub const W2: [f64; 2] = [1.2, -1.0];
    pub const B2: f64 = -0.25;

    pub fn output(x: [f64; 2]) -> f64 {
        let mut out = B2;
        for k in 0..2 {
            let pre = x[0] * W1[0][k] + x[1] * W1[1][k] + B1[k];
            out += W2[k] * pre.max(0.0);
        }
        out
    }

    pub fn label(x: [f64; 2]) -> usize {
        usize::from(output(x) > 0.0)
    }
}

/// Binary classification data on `[-1, 1]²` labelled by [`planted`].
pub fn gen_planted_network(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Contract("gen_planted_network needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p = [u.sample(&mut rng), u.sample(&mut rng)];
        x.extend_from_slice(&p);
        labels.push(planted::label(p));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if n >= 100 && (ones == 0 || ones == n) {
        return Err(Error::Contract(format!(
            "planted labels degenerate: {ones} of {n} positive"
        )));
    }
    Dataset::new(Tensor::matrix(n, 2, x)?, Targets::Labels { labels, classes: 2 })
}

/// Which CSV column holds the target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetColumn {
    Index(usize),
    Name(String),
}

impl Default for TargetColumn {
    fn default() -> Self {
        TargetColumn::Name("last".into())
    }
}

/// Read a numeric CSV table. The first row is treated as a header when any of
/// its cells fails to parse as a number. Every other cell must be a finite
/// number; the first offending cell is reported by line and column.
pub fn read_csv_regression(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    let (x, y) = read_csv_table(path.as_ref(), target)?;
    Dataset::new(x, Targets::Real(y))
}

/// As [`read_csv_regression`], with the target column holding integer class
/// labels `0..C`.
pub fn read_csv_classification(path: impl AsRef<Path>, target: &TargetColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let (x, y) = read_csv_table(path, target)?;
    let mut labels = Vec::with_capacity(y.len());
    for (row, v) in y.iter().enumerate() {
        if v.fract() != 0.0 || *v < 0.0 {
            return Err(Error::domain(format!(
                "{}: target in data row {row} is {v}, not a class label",
                path.display()
            )));
        }
        labels.push(*v as usize);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(x, Targets::Labels { labels, classes })
}

fn read_csv_table(path: &Path, target: &TargetColumn) -> Result<(Tensor, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && record.iter().any(|c| c.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_owned).collect());
            width = Some(record.len());
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line,
                    column: record.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", record.len()),
                });
            }
        }
        width = Some(record.len());
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line,
                column: j + 1,
                message,
            };
            if cell.is_empty() {
                return Err(parse_err(format!("missing value (data row {})", rows.len())));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value `{cell}`")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    let Some(width) = width else {
        return Err(Error::format(path, "empty file"));
    };
    if rows.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    if width < 2 {
        return Err(Error::format(path, "need at least one feature and one target column"));
    }
    let t = match target {
        TargetColumn::Index(j) if *j < width => *j,
        TargetColumn::Index(j) => {
            return Err(Error::Config(format!(
                "target column {j} out of range for {width} columns"
            )))
        }
        TargetColumn::Name(name) if name == "last" => width - 1,
        TargetColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Config(format!("no target column named `{name}`")))?,
    };
    let n = rows.len();
    let mut x = Vec::with_capacity(n * (width - 1));
    let mut y = Vec::with_capacity(n);
    for row in rows {
        for (j, v) in row.into_iter().enumerate() {
            if j == t {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    Ok((Tensor::matrix(n, width - 1, x)?, y))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            path: path.to_owned(),
            line,
            column: (len.min(expected_len) + 1) as usize,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            path: path.to_owned(),
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Read an MNIST-style IDX image/label pair. Pixels are divided by
/// [`MNIST_PIXEL_DIVISOR`].
pub fn read_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;

    let header = |bytes: &[u8], path: &Path, words: usize| -> Result<Vec<u32>> {
        if bytes.len() < 4 * words {
            return Err(Error::format(
                path,
                format!("truncated header: {} bytes, need {}", bytes.len(), 4 * words),
            ));
        }
        Ok(bytes[..4 * words]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };

    let ih = header(&ib, ip, 4)?;
    if ih[0] != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            ip,
            format!("bad magic {:#010x}, expected {IDX_IMAGES_MAGIC:#010x}", ih[0]),
        ));
    }
    let lh = header(&lb, lp, 2)?;
    if lh[0] != IDX_LABELS_MAGIC {
        return Err(Error::format(
            lp,
            format!("bad magic {:#010x}, expected {IDX_LABELS_MAGIC:#010x}", lh[0]),
        ));
    }
    let (n, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    if lh[1] as usize != n {
        return Err(Error::format(
            lp,
            format!("label count {} does not match image count {n}", lh[1]),
        ));
    }
    if n == 0 || rows * cols == 0 {
        return Err(Error::format(ip, "empty image set"));
    }
    let pixels = n * rows * cols;
    let body = &ib[16..];
    if body.len() != pixels {
        return Err(Error::format(
            ip,
            format!("expected {pixels} pixel bytes, found {}", body.len()),
        ));
    }
    let lbody = &lb[8..];
    if lbody.len() != n {
        return Err(Error::format(
            lp,
            format!("expected {n} label bytes, found {}", lbody.len()),
        ));
    }
    let labels: Vec<usize> = lbody.iter().map(|&b| b as usize).collect();
    if let Some((i, bad)) = labels.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(Error::domain(format!(
            "{}: label {bad} at index {i} outside 0..=9",
            lp.display()
        )));
    }
    let x = body.iter().map(|&p| p as f64 / MNIST_PIXEL_DIVISOR).collect();
    Dataset::new(
        Tensor::matrix(n, rows * cols, x)?,
        Targets::Labels { labels, classes: 10 },
    )
}

/// Serialize a dataset to IDX bytes (pixels multiplied back by the divisor and
/// rounded). Used to build fixtures.
pub fn write_mnist_idx(data: &Dataset, side: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    let Targets::Labels { labels, .. } = &data.targets else {
        return Err(Error::Contract("IDX export needs labels".into()));
    };
    let n = data.len();
    let mut images = Vec::with_capacity(16 + n * side * side);
    for w in [IDX_IMAGES_MAGIC, n as u32, side as u32, side as u32] {
        images.extend_from_slice(&w.to_be_bytes());
    }
    images.extend(
        data.features
            .data()
            .iter()
            .map(|v| (v * MNIST_PIXEL_DIVISOR).round().clamp(0.0, 255.0) as u8),
    );
    let mut lbl = Vec::with_capacity(8 + n);
    for w in [IDX_LABELS_MAGIC, n as u32] {
        lbl.extend_from_slice(&w.to_be_bytes());
    }
    lbl.extend(labels.iter().map(|&l| l as u8));
    Ok((images, lbl))
}

/// Standardize `train` and apply its statistics to `others`.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardization)> {
    let stats = Standardization::fit(train)?;
    let tr = stats.apply(train)?;
    let rest = others.iter().map(|d| stats.apply(d)).collect::<Result<_>>()?;
    Ok((tr, rest, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitProtocol {
    /// 20 random 90/10 splits.
    UciSmall,
    /// 5 random 90/10 splits.
    Protein,
    /// One random 90/10 split.
    Single,
}

impl SplitProtocol {
    pub fn replicates(self) -> usize {
        match self {
            SplitProtocol::UciSmall => 20,
            SplitProtocol::Protein => 5,
            SplitProtocol::Single => 1,
        }
    }
}

/// Random 90/10 train/test splits. Replicate `r` draws its permutation from
/// stream `r` of a generator seeded with `seed`.
pub fn protocol_splits(data: &Dataset, protocol: SplitProtocol, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let n = data.len();
    let n_test = ((n as f64) * 0.1).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Contract(format!(
            "{n} rows cannot give a non-empty 10% test split"
        )));
    }
    (0..protocol.replicates())
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (test, train) = idx.split_at(n_test);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Ok((data.subset(&train)?, data.subset(&test)?))
        })
        .collect()
}

/// Independent generator for replicate `r` under a base seed.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r + 1);
    rng
}

/// Deterministic derived seed for replicate `r`.
pub fn derive_seed(seed: u64, r: u64) -> u64 {
    replicate_rng(seed, r).random()
}
