//! Training: Adam on reparameterization gradients interleaved with
//! closed-form fixed-point updates of the auxiliary posteriors.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distributions::{InvGammaQ, LogNormalQ, NoiseStream};
use crate::error::{Error, Result};
use crate::grad::Graph;
use crate::model::{fixed_point_aux, BayesNet, ElboOptions, ElboTerms, Likelihood, NoiseModel};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Monte-Carlo samples per ELBO estimate.
    pub samples: usize,
    pub seed: u64,
    /// Steps between fixed-point sweeps over the auxiliary posteriors.
    pub fixed_point_every: usize,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Steps between history records.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 512,
            epochs: 1,
            samples: 1,
            seed: 0,
            fixed_point_every: 1,
            grad_clip: None,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate), ("adam_eps", self.adam_eps)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("samples", self.samples),
            ("fixed_point_every", self.fixed_point_every),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// First and second moment accumulators, one per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One Adam ascent step: `θ ← θ + lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        p.expect_same_shape(g)?;
        if state.m[i].shape() != g.shape() {
            return Err(Error::dim(format!("optimizer slot {i} has the wrong shape")));
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((theta, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *theta += cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Optimal `q(λ)` given `q(τ)`: `c = 1`, `d = E[1/τ] + 1/b²`.
pub fn fixed_point_update(scale: &LogNormalQ, b: f64) -> InvGammaQ {
    fixed_point_aux(scale, b)
}

/// Apply [`fixed_point_update`] to every scale/auxiliary pair of the model.
pub fn fixed_point_sweep(model: &mut BayesNet) {
    for layer in &mut model.layers {
        for group in &mut layer.scales {
            for k in 0..group.len() {
                group.aux[k] = fixed_point_update(&group.posterior(k), group.b);
            }
        }
    }
}

/// Adam step on the unconstrained shape and rate of `q(γ)`.
pub fn update_noise_model(
    model: &mut BayesNet,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if model.network.likelihood != Likelihood::GaussianRegression {
        return Err(Error::Contract(
            "noise model updates need the gaussian-regression likelihood".into(),
        ));
    }
    let noise: &mut NoiseModel = model
        .noise
        .as_mut()
        .ok_or_else(|| Error::Contract("model has no noise posterior".into()))?;
    adam_step(&mut [&mut noise.alpha_raw, &mut noise.beta_raw], grads, state, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub epoch: u64,
    /// Minibatch ELBO estimate before the step's update.
    pub elbo: f64,
    pub likelihood: f64,
    pub log_prior: f64,
    pub entropy: f64,
}

/// Wall-clock time per history record; kept apart from the history so the
/// history itself is reproducible byte for byte.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub step: u64,
    pub wall_ms: u64,
}

/// Everything the training loop carries between steps besides the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub adam: AdamState,
    pub noise_adam: Option<AdamState>,
    pub shuffle_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: u64,
}

impl TrainState {
    pub fn new(model: &BayesNet, seed: u64) -> Self {
        let params = model.params();
        let n_noise = if model.noise.is_some() { 2 } else { 0 };
        let split = params.len() - n_noise;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
        shuffle_rng.set_stream(1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(2);
        Self {
            adam: AdamState::new(params[..split].iter().copied()),
            noise_adam: (n_noise > 0).then(|| AdamState::new(params[split..].iter().copied())),
            shuffle_rng,
            noise_rng,
            step: 0,
            epoch: 0,
        }
    }
}

/// What a callback sees after each step.
pub struct StepInfo<'a> {
    pub step: u64,
    pub epoch: u64,
    pub terms: ElboTerms,
    pub model: &'a BayesNet,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<HistoryRecord>,
    pub timing: Vec<TimingRecord>,
}

/// Drives training of one model. Holds all optimizer and RNG state so a run
/// can be checkpointed and resumed.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(model: &BayesNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            state: TrainState::new(model, cfg.seed),
            cfg,
        })
    }

    pub fn resume(cfg: TrainConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, state })
    }

    /// One gradient step on `batch` followed, on schedule, by a fixed-point
    /// sweep. Returns the ELBO terms estimated before the update.
    pub fn step(&mut self, model: &mut BayesNet, batch: &Dataset, n_total: usize) -> Result<ElboTerms> {
        let step = self.state.step;
        let mut g = Graph::new();
        let vars = model.register(&mut g, true)?;
        let mut noise = NoiseStream::from_rng(self.state.noise_rng.clone());
        let elbo = model.elbo(
            &mut g,
            &vars,
            batch,
            n_total,
            self.cfg.samples,
            &mut noise,
            ElboOptions::default(),
        )?;
        self.state.noise_rng = noise.rng().clone();
        let terms = elbo.evaluate(&g);
        if !terms.total.is_finite() {
            let term = elbo.non_finite_term(&g).unwrap_or("total").to_owned();
            return Err(Error::NonFinite { step, term });
        }
        let mut grads = g.backward(elbo.total)?.take(&vars.all)?;
        let names = model.param_names();
        if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                step,
                term: format!("gradient of {}", names[i]),
            });
        }
        if let Some(limit) = self.cfg.grad_clip {
            let norm = grads.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
            if norm > limit {
                let s = limit / norm;
                for t in &mut grads {
                    t.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }

        let noise_grads = match &self.state.noise_adam {
            Some(_) => grads.split_off(grads.len() - 2),
            None => Vec::new(),
        };
        {
            let mut params = model.params_mut();
            let n = params.len() - noise_grads.len();
            adam_step(&mut params[..n], &grads, &mut self.state.adam, &self.cfg)?;
        }
        if let Some(state) = self.state.noise_adam.as_mut() {
            update_noise_model(model, &noise_grads, state, &self.cfg)?;
        }
        if let Some(i) = model.params().iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                step,
                term: format!("parameter {} after update", names[i]),
            });
        }
        self.state.step += 1;
        if self.state.step.is_multiple_of(self.cfg.fixed_point_every as u64) {
            fixed_point_sweep(model);
        }
        Ok(terms)
    }

    /// One pass over `data` in shuffled minibatches; the last ragged batch is
    /// kept.
    pub fn epoch(
        &mut self,
        model: &mut BayesNet,
        data: &Dataset,
        outcome: &mut FitOutcome,
        start: Instant,
        callback: &mut dyn FnMut(&StepInfo),
    ) -> Result<()> {
        let n = data.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.state.shuffle_rng);
        for idx in order.chunks(self.cfg.batch_size) {
            let batch = data.subset(idx)?;
            let step = self.state.step;
            let terms = self.step(model, &batch, n)?;
            if step.is_multiple_of(self.cfg.log_every as u64) {
                outcome.history.push(HistoryRecord {
                    step,
                    epoch: self.state.epoch,
                    elbo: terms.total,
                    likelihood: terms.likelihood,
                    log_prior: terms.log_prior,
                    entropy: terms.entropy,
                });
                outcome.timing.push(TimingRecord {
                    step,
                    wall_ms: start.elapsed().as_millis() as u64,
                });
            }
            callback(&StepInfo {
                step,
                epoch: self.state.epoch,
                terms,
                model,
            });
        }
        self.state.epoch += 1;
        Ok(())
    }

    /// Run `cfg.epochs` epochs.
    pub fn run(
        &mut self,
        model: &mut BayesNet,
        data: &Dataset,
        callback: &mut dyn FnMut(&StepInfo),
    ) -> Result<FitOutcome> {
        check_data(model, data)?;
        let mut outcome = FitOutcome::default();
        let start = Instant::now();
        for _ in 0..self.cfg.epochs {
            self.epoch(model, data, &mut outcome, start, callback)?;
        }
        Ok(outcome)
    }
}

fn check_data(model: &BayesNet, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Contract("training data is empty".into()));
    }
    if data.dim() != model.network.widths[0] {
        return Err(Error::dim(format!(
            "model expects {} features, data has {}",
            model.network.widths[0],
            data.dim()
        )));
    }
    match (model.network.likelihood, data.classes()) {
        (Likelihood::GaussianRegression, None) => Ok(()),
        (Likelihood::Categorical, Some(c)) if c <= *model.network.widths.last().unwrap() => Ok(()),
        (lik, classes) => Err(Error::Config(format!(
            "{lik:?} likelihood does not fit data with classes {classes:?}"
        ))),
    }
}

/// Train `model` on `data` from a fresh optimizer state.
pub fn fit(
    model: &mut BayesNet,
    data: &Dataset,
    cfg: &TrainConfig,
    callback: &mut dyn FnMut(&StepInfo),
) -> Result<FitOutcome> {
    Trainer::new(model, cfg.clone())?.run(model, data, callback)
}
