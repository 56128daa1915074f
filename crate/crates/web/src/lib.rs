//! WebAssembly bindings for a static demo page. Each export trains or
//! samples in the page's thread and hands back a JSON string for plotting.
//!
//! Training runs step by step through [`Trainer::step`] rather than
//! [`Trainer::run`], which reads the wall clock (unavailable on
//! `wasm32-unknown-unknown`).

use hsbnn::data::{cubic_grid, gen_cubic, gen_planted_network, standardize, Dataset};
use hsbnn::diagnostics::layer_sparsity;
use hsbnn::distributions::sample_inv_gamma;
use hsbnn::experiments::{predict_table, PredictionTable};
use hsbnn::inference::{TrainConfig, Trainer};
use hsbnn::model::{BayesNet, ForwardVariant, Likelihood, NetworkConfig, PriorConfig, PriorMode};
use hsbnn::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub fn parse_mode(mode: &str) -> Result<PriorMode> {
    serde_json::from_value(serde_json::Value::String(mode.into()))
        .map_err(|_| Error::Config(format!("unknown prior mode `{mode}`")))
}

fn train_full_batch(model: &mut BayesNet, data: &Dataset, steps: usize, learning_rate: f64, seed: u64) -> Result<()> {
    let cfg = TrainConfig {
        learning_rate,
        batch_size: data.len(),
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, cfg)?;
    for _ in 0..steps {
        trainer.step(model, data, data.len())?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CubicFit {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub grid_x: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// Predictive mean ± 2 sd.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub test_ll: f64,
}

/// One-hidden-layer regression on 20 noisy cubic points.
pub fn cubic_fit(width: usize, mode: PriorMode, steps: usize, seed: u64) -> Result<CubicFit> {
    let train_raw = gen_cubic(20, seed)?;
    let grid = cubic_grid(100, seed.wrapping_add(1))?;
    let (train, rest, stats) = standardize(&train_raw, &[&grid])?;
    let net = NetworkConfig::new(vec![1, width, 1], Likelihood::GaussianRegression);
    let mut model = BayesNet::init_seeded(&net, &PriorConfig::new(mode), seed)?;
    train_full_batch(&mut model, &train, steps, 0.005, seed)?;
    let PredictionTable::Regression {
        mean,
        variance,
        log_density,
        ..
    } = predict_table(&model, &rest[0], Some(&stats), 100, seed)?
    else {
        return Err(Error::Contract("regression model gave class predictions".into()));
    };
    let grid_x = grid.features.data().to_vec();
    let sd: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
    Ok(CubicFit {
        train_x: train_raw.features.data().to_vec(),
        train_y: match &train_raw.targets {
            hsbnn::data::Targets::Real(y) => y.clone(),
            _ => Vec::new(),
        },
        truth: grid_x.iter().map(|x| x.powi(3)).collect(),
        lower: mean.iter().zip(&sd).map(|(m, s)| m - 2.0 * s).collect(),
        upper: mean.iter().zip(&sd).map(|(m, s)| m + 2.0 * s).collect(),
        test_ll: log_density.iter().sum::<f64>() / log_density.len() as f64,
        grid_x,
        mean,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Pruning {
    pub sorted_norms: Vec<f64>,
    pub threshold: f64,
    pub active: usize,
    pub accuracy: f64,
}

/// Fit the planted 2-2-1 classification problem and report the hidden-unit
/// norms.
pub fn planted_pruning(width: usize, mode: PriorMode, steps: usize, seed: u64) -> Result<Pruning> {
    let train = gen_planted_network(500, seed)?;
    let test = gen_planted_network(1000, seed.wrapping_add(1))?;
    let net = NetworkConfig::new(vec![2, width, 2], Likelihood::Categorical);
    let prior = PriorConfig::new(mode).with_forward(ForwardVariant::SampledScales);
    let mut model = BayesNet::init_seeded(&net, &prior, seed)?;
    train_full_batch(&mut model, &train, steps, 0.01, seed)?;
    let s = layer_sparsity(&model, 0, 0.1)?;
    let error = predict_table(&model, &test, None, 20, seed)?
        .metrics()
        .error_rate
        .unwrap_or(1.0);
    Ok(Pruning {
        sorted_norms: s.sorted_norms,
        threshold: s.threshold,
        active: s.active,
        accuracy: 1.0 - error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PriorHistogram {
    /// Bin edges in `log10 |w|`.
    pub edges: Vec<f64>,
    pub horseshoe: Vec<usize>,
    pub gaussian: Vec<usize>,
}

/// `n` prior draws of a single weight, `w = scale · β` with the scale from
/// the inverse-Gamma hierarchy at hyper-scale `b`, against `N(0, 1)`.
pub fn prior_draws(b: f64, n: usize, seed: u64) -> Result<PriorHistogram> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("hyper-scale must be positive, got {b}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi, bins) = (-6.0, 4.0, 50);
    let edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
    let bin = |w: f64| {
        let v = w.abs().log10();
        ((v - lo) / (hi - lo) * bins as f64)
            .floor()
            .clamp(0.0, bins as f64 - 1.0) as usize
    };
    let mut horseshoe = vec![0; bins];
    let mut gaussian = vec![0; bins];
    for _ in 0..n {
        let lambda = sample_inv_gamma(&mut rng, 0.5, 1.0 / (b * b));
        let scale = sample_inv_gamma(&mut rng, 0.5, 1.0 / lambda);
        let beta: f64 = rng.sample(StandardNormal);
        horseshoe[bin(scale * beta)] += 1;
        let g: f64 = rng.sample(StandardNormal);
        gaussian[bin(g)] += 1;
    }
    Ok(PriorHistogram {
        edges,
        horseshoe,
        gaussian,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(Error::from))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = cubicFit)]
pub fn cubic_fit_js(width: usize, mode: &str, steps: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(parse_mode(mode).and_then(|m| cubic_fit(width, m, steps, seed.into())))
}

#[wasm_bindgen(js_name = plantedPruning)]
pub fn planted_pruning_js(width: usize, mode: &str, steps: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(parse_mode(mode).and_then(|m| planted_pruning(width, m, steps, seed.into())))
}

#[wasm_bindgen(js_name = priorDraws)]
pub fn prior_draws_js(b: f64, n: usize, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(prior_draws(b, n, seed.into()))
}
