//! Node-level sparsity diagnostics on expected weight vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BayesNet, Layer};

pub const DEFAULT_ACTIVE_FRACTION: f64 = 0.1;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    /// `‖E[w_k]‖₂` per unit, sorted descending.
    pub sorted_norms: Vec<f64>,
    /// Unit index behind each entry of `sorted_norms`.
    pub order: Vec<usize>,
    pub threshold: f64,
    pub active: usize,
    /// Units at or below the threshold.
    pub inactive: usize,
    /// Weights of the unit with the smallest norm.
    pub smallest_unit: usize,
    pub smallest_histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Active threshold as a fraction of each layer's largest norm.
    pub active_fraction: f64,
    pub layers: Vec<LayerSparsity>,
}

/// Column 2-norms of a `[fan_in x units]` weight matrix.
pub fn unit_norms(layer: &Layer) -> Vec<f64> {
    let w = layer.expected_node_weights();
    let k = w.cols();
    let mut out = vec![0.0; k];
    for row in w.data().chunks(k) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v * v;
        }
    }
    out.into_iter().map(f64::sqrt).collect()
}

pub fn layer_sparsity(model: &BayesNet, layer: usize, active_fraction: f64) -> Result<LayerSparsity> {
    let l = model.layers.get(layer).ok_or_else(|| {
        Error::Config(format!(
            "layer {layer} out of range; model has {} layers",
            model.layers.len()
        ))
    })?;
    if !(active_fraction >= 0.0 && active_fraction.is_finite()) {
        return Err(Error::Config(format!(
            "threshold fraction must be non-negative, got {active_fraction}"
        )));
    }
    let norms = unit_norms(l);
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let sorted_norms: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let threshold = active_fraction * sorted_norms[0];
    let active = sorted_norms.iter().filter(|&&n| n > threshold).count();
    let smallest_unit = *order.last().expect("at least one unit");
    let w = l.expected_node_weights();
    let column = w.column(smallest_unit)?;
    Ok(LayerSparsity {
        layer,
        sorted_norms,
        order,
        threshold,
        active,
        inactive: l.units() - active,
        smallest_unit,
        smallest_histogram: Histogram::new(&column, HISTOGRAM_BINS),
    })
}

/// Reports for every hidden layer (or only `layer` when given).
pub fn sparsity_report(model: &BayesNet, layer: Option<usize>, active_fraction: f64) -> Result<SparsityReport> {
    let layers = match layer {
        Some(l) => vec![layer_sparsity(model, l, active_fraction)?],
        None => (0..model.layers.len().saturating_sub(1).max(1))
            .map(|l| layer_sparsity(model, l, active_fraction))
            .collect::<Result<_>>()?,
    };
    Ok(SparsityReport {
        active_fraction,
        layers,
    })
}
