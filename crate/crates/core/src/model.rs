//! Bayesian network definition: configuration, variational parameters,
//! locally reparameterized forward passes and the ELBO.
//!
//! Every constrained quantity is stored unconstrained: weight standard
//! deviations and log-scale standard deviations as `softplus(raw)`, the noise
//! posterior's shape and rate likewise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::distributions::{self, sample_gamma, tape, InvGammaQ, LogNormalQ, NoiseStream};
use crate::error::{Error, Result};
use crate::grad::{softplus, softplus_inv, Graph, Reduction, Var};
use crate::tensor::Tensor;

pub const NOISE_PRIOR_SHAPE: f64 = 6.0;
pub const NOISE_PRIOR_RATE: f64 = 6.0;
pub const INIT_WEIGHT_VAR: f64 = 1e-4;
pub const INIT_SCALE_VAR: f64 = 1e-2;
pub const INIT_HIDDEN_SCALE_MU: f64 = -3.0;
pub const INIT_OUTPUT_SCALE_MU: f64 = 0.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    #[default]
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Likelihood {
    GaussianRegression,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `K_0 .. K_L`: input dimension, hidden widths, output dimension.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    pub likelihood: Likelihood,
}

impl NetworkConfig {
    pub fn new(widths: Vec<usize>, likelihood: Likelihood) -> Self {
        Self {
            widths,
            nonlinearity: Nonlinearity::Relu,
            likelihood,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(
                "widths needs at least an input and an output size".into(),
            ));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("widths[{i}] is zero")));
        }
        let out = *self.widths.last().expect("checked length");
        match self.likelihood {
            Likelihood::GaussianRegression if out != 1 => Err(Error::Config(format!(
                "gaussian-regression needs output width 1, got {out}"
            ))),
            Likelihood::Categorical if out < 2 => Err(Error::Config(format!(
                "categorical needs at least 2 outputs, got {out}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    HsNoncentered,
    HsCentered,
    GaussianBaseline,
}

/// How non-centered layers turn the scale posteriors into pre-activations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardVariant {
    /// `u ~ N(a·μβ, E[τ]E[υ] · a²·σ²β)`: scales enter only through their first
    /// moments, and only in the variance.
    #[default]
    ExpectedScales,
    /// Per-example draws of `ln τ`, `ln υ`, then
    /// `u ~ N(τυ · a·μβ, τ²υ² · a²·σ²β)`.
    SampledScales,
}

/// Whether the output-scale `κ` is the prior's standard deviation
/// (`w ~ N(0, κ²)`) or its variance (`w ~ N(0, κ)`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputScale {
    #[default]
    StdDev,
    Variance,
}

impl OutputScale {
    /// Power `p` such that the weight scale is `κ^p`.
    pub fn power(self) -> f64 {
        match self {
            OutputScale::StdDev => 1.0,
            OutputScale::Variance => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub mode: PriorMode,
    #[serde(default = "one")]
    pub b0: f64,
    #[serde(default = "one")]
    pub bg: f64,
    #[serde(default = "five")]
    pub bkappa: f64,
    #[serde(default)]
    pub forward: ForwardVariant,
    #[serde(default)]
    pub output_scale: OutputScale,
}

fn one() -> f64 {
    1.0
}

fn five() -> f64 {
    5.0
}

impl PriorConfig {
    pub fn new(mode: PriorMode) -> Self {
        Self {
            mode,
            b0: 1.0,
            bg: 1.0,
            bkappa: 5.0,
            forward: ForwardVariant::ExpectedScales,
            output_scale: OutputScale::StdDev,
        }
    }

    pub fn with_forward(mut self, forward: ForwardVariant) -> Self {
        self.forward = forward;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("b0", self.b0), ("bg", self.bg), ("bkappa", self.bkappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// `w = scale · β` with `β ~ N(0, I)`; the posterior is over `β`.
    NonCentered,
    /// `w ~ N(0, scale² I)`; the posterior is over `w`.
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleRole {
    /// `τ_kl`, one per unit, with auxiliary `λ_kl`.
    Unit,
    /// `υ_l`, shared by a layer, with auxiliary `ϑ_l`.
    Layer,
    /// `κ`, shared by a layer, with auxiliary `ρ_κ`.
    Output,
}

impl ScaleRole {
    fn name(self) -> &'static str {
        match self {
            ScaleRole::Unit => "tau",
            ScaleRole::Layer => "upsilon",
            ScaleRole::Output => "kappa",
        }
    }
}

/// Half-Cauchy scales with log-Normal posteriors and their inverse-Gamma
/// auxiliaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleGroup {
    pub role: ScaleRole,
    /// `[1 x n]` means of `ln scale`.
    pub mu: Tensor,
    /// `[1 x n]`; standard deviation of `ln scale` is `softplus(rho)`.
    pub rho: Tensor,
    pub aux: Vec<InvGammaQ>,
    /// Half-Cauchy hyper-scale.
    pub b: f64,
    /// Weights scale with `scale^power`.
    pub power: f64,
}

impl ScaleGroup {
    pub fn new(role: ScaleRole, n: usize, mu: f64, sigma2: f64, b: f64, power: f64) -> Self {
        let mut g = Self {
            role,
            mu: Tensor::full(&[1, n], mu),
            rho: Tensor::full(&[1, n], softplus_inv(sigma2.sqrt())),
            aux: Vec::new(),
            b,
            power,
        };
        g.aux = (0..n).map(|k| fixed_point_aux(&g.posterior(k), b)).collect();
        g
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn posterior(&self, k: usize) -> LogNormalQ {
        let sd = softplus(self.rho.data()[k]);
        LogNormalQ {
            mu: self.mu.data()[k],
            sigma2: sd * sd,
        }
    }

    pub fn posteriors(&self) -> Vec<LogNormalQ> {
        (0..self.len()).map(|k| self.posterior(k)).collect()
    }
}

/// Optimal auxiliary posterior given a scale posterior: `IG(1, E[1/s] + 1/b²)`.
pub fn fixed_point_aux(q: &LogNormalQ, b: f64) -> InvGammaQ {
    InvGammaQ {
        c: 1.0,
        d: (-q.mu + 0.5 * q.sigma2).exp() + 1.0 / (b * b),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub parameterization: Parameterization,
    /// `[(K_in + 1) x K_out]` means of `β` (non-centered) or `w` (centered);
    /// the last row holds the bias.
    pub mu: Tensor,
    /// Same shape; standard deviation is `softplus(rho)`.
    pub rho: Tensor,
    pub scales: Vec<ScaleGroup>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.mu.rows()
    }

    pub fn units(&self) -> usize {
        self.mu.cols()
    }

    pub fn sigma2(&self) -> Tensor {
        self.rho.map(|r| {
            let s = softplus(r);
            s * s
        })
    }

    /// Product over scale groups of `E[scale^power]`, per unit.
    pub fn expected_unit_scale(&self) -> Vec<f64> {
        let mut out = vec![1.0; self.units()];
        for g in &self.scales {
            for (k, o) in out.iter_mut().enumerate() {
                let q = g.posterior(if g.len() == 1 { 0 } else { k });
                *o *= q.mean_pow(g.power);
            }
        }
        out
    }

    /// `E[w]` under the factorized posterior.
    pub fn expected_node_weights(&self) -> Tensor {
        match self.parameterization {
            Parameterization::Centered => self.mu.clone(),
            Parameterization::NonCentered => {
                let s = self.expected_unit_scale();
                let k = self.units();
                let mut w = self.mu.clone();
                for (i, v) in w.data_mut().iter_mut().enumerate() {
                    *v *= s[i % k];
                }
                w
            }
        }
    }
}

/// Posterior `q(γ) = Gamma(softplus(alpha_raw), softplus(beta_raw))` over the
/// Gaussian noise precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub alpha_raw: Tensor,
    pub beta_raw: Tensor,
}

impl NoiseModel {
    pub fn at_prior() -> Self {
        Self::new(NOISE_PRIOR_SHAPE, NOISE_PRIOR_RATE)
    }

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha_raw: Tensor::scalar(softplus_inv(alpha)),
            beta_raw: Tensor::scalar(softplus_inv(beta)),
        }
    }

    pub fn posterior(&self) -> distributions::GammaQ {
        distributions::GammaQ {
            alpha: softplus(self.alpha_raw.item()),
            beta: softplus(self.beta_raw.item()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    pub network: NetworkConfig,
    pub prior: PriorConfig,
    pub layers: Vec<Layer>,
    /// Present exactly under the Gaussian likelihood.
    pub noise: Option<NoiseModel>,
}

/// Which groups of ELBO terms to include (ablations and tests).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElboOptions {
    pub likelihood: bool,
    pub prior: bool,
    pub entropy: bool,
}

impl Default for ElboOptions {
    fn default() -> Self {
        Self {
            likelihood: true,
            prior: true,
            entropy: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    /// Minibatch-rescaled expected log-likelihood.
    pub likelihood: f64,
    pub log_prior: f64,
    pub entropy: f64,
    pub total: f64,
}

/// ELBO built on a graph: the scalar root plus every named contribution.
#[derive(Clone, Debug)]
pub struct ElboGraph {
    pub total: Var,
    pub terms: Vec<(String, TermKind, Var)>,
    /// Entropy of the auxiliary posteriors (constant given the scales).
    pub aux_entropy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    Likelihood,
    Prior,
    Entropy,
}

impl ElboGraph {
    pub fn evaluate(&self, g: &Graph) -> ElboTerms {
        let mut t = ElboTerms {
            likelihood: 0.0,
            log_prior: 0.0,
            entropy: self.aux_entropy,
            total: g.value(self.total).item(),
        };
        for (_, kind, v) in &self.terms {
            let x = g.value(*v).item();
            match kind {
                TermKind::Likelihood => t.likelihood += x,
                TermKind::Prior => t.log_prior += x,
                TermKind::Entropy => t.entropy += x,
            }
        }
        t
    }

    /// Name of the first non-finite contribution, if any.
    pub fn non_finite_term(&self, g: &Graph) -> Option<&str> {
        self.terms
            .iter()
            .find(|(_, _, v)| !g.value(*v).is_finite())
            .map(|(n, _, _)| n.as_str())
    }
}

/// Graph nodes for one registration of the network's parameters.
#[derive(Clone, Debug)]
pub struct ParamVars {
    /// Every parameter in [`BayesNet::params`] order.
    pub all: Vec<Var>,
    layers: Vec<LayerNodes>,
    noise: Option<NoiseNodes>,
}

#[derive(Clone, Debug)]
struct LayerNodes {
    mu: Var,
    sigma: Var,
    sigma2: Var,
    scales: Vec<ScaleNodes>,
}

#[derive(Clone, Copy, Debug)]
struct ScaleNodes {
    mu: Var,
    sd: Var,
    var: Var,
}

#[derive(Clone, Copy, Debug)]
struct NoiseNodes {
    alpha: Var,
    beta: Var,
}

impl BayesNet {
    /// Initialize variational parameters for `network` under `prior`.
    pub fn init<R: Rng + ?Sized>(network: &NetworkConfig, prior: &PriorConfig, rng: &mut R) -> Result<Self> {
        network.validate()?;
        prior.validate()?;
        let p = prior.output_scale.power();
        let n_layers = network.widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let fan_in = network.widths[l] + 1;
            let units = network.widths[l + 1];
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive sd");
            let mu = Tensor::from_fn(&[fan_in, units], |_| normal.sample(rng));
            let rho = Tensor::full(&[fan_in, units], softplus_inv(INIT_WEIGHT_VAR.sqrt()));
            let output = l + 1 == n_layers;
            let hs_hidden = || {
                vec![
                    ScaleGroup::new(
                        ScaleRole::Unit,
                        units,
                        INIT_HIDDEN_SCALE_MU,
                        INIT_SCALE_VAR,
                        prior.b0,
                        1.0,
                    ),
                    ScaleGroup::new(ScaleRole::Layer, 1, INIT_HIDDEN_SCALE_MU, INIT_SCALE_VAR, prior.bg, 1.0),
                ]
            };
            let kappa = || {
                vec![ScaleGroup::new(
                    ScaleRole::Output,
                    1,
                    INIT_OUTPUT_SCALE_MU,
                    INIT_SCALE_VAR,
                    prior.bkappa,
                    p,
                )]
            };
            let (parameterization, scales) = match (prior.mode, output) {
                (PriorMode::HsNoncentered, false) => (Parameterization::NonCentered, hs_hidden()),
                (PriorMode::HsNoncentered, true) => (Parameterization::NonCentered, kappa()),
                (PriorMode::HsCentered, false) => (Parameterization::Centered, hs_hidden()),
                (PriorMode::HsCentered, true) => (Parameterization::Centered, kappa()),
                (PriorMode::GaussianBaseline, _) => (Parameterization::Centered, kappa()),
            };
            layers.push(Layer {
                parameterization,
                mu,
                rho,
                scales,
            });
        }
        let noise = match network.likelihood {
            Likelihood::GaussianRegression => Some(NoiseModel::at_prior()),
            Likelihood::Categorical => None,
        };
        Ok(Self {
            network: network.clone(),
            prior: prior.clone(),
            layers,
            noise,
        })
    }

    /// [`BayesNet::init`] with a generator seeded from `seed`.
    pub fn init_seeded(network: &NetworkConfig, prior: &PriorConfig, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::init(network, prior, &mut rng)
    }

    /// Every trainable tensor in a fixed order: per layer the weight mean and
    /// raw spread, then each scale group's mean and raw spread; finally the
    /// noise posterior's raw shape and rate.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.mu);
            out.push(&layer.rho);
            for g in &layer.scales {
                out.push(&g.mu);
                out.push(&g.rho);
            }
        }
        if let Some(n) = &self.noise {
            out.push(&n.alpha_raw);
            out.push(&n.beta_raw);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.mu);
            out.push(&mut layer.rho);
            for g in &mut layer.scales {
                out.push(&mut g.mu);
                out.push(&mut g.rho);
            }
        }
        if let Some(n) = &mut self.noise {
            out.push(&mut n.alpha_raw);
            out.push(&mut n.beta_raw);
        }
        out
    }

    /// Human-readable names matching [`BayesNet::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = match layer.parameterization {
                Parameterization::NonCentered => "beta",
                Parameterization::Centered => "w",
            };
            out.push(format!("layer{l}.{w}.mean"));
            out.push(format!("layer{l}.{w}.raw_sd"));
            for g in &layer.scales {
                out.push(format!("layer{l}.{}.mean_log", g.role.name()));
                out.push(format!("layer{l}.{}.raw_sd_log", g.role.name()));
            }
        }
        if self.noise.is_some() {
            out.push("noise.raw_shape".into());
            out.push("noise.raw_rate".into());
        }
        out
    }

    /// Put every parameter on `g`, as trainable leaves or as constants.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Result<ParamVars> {
        let leaf = |g: &mut Graph, t: &Tensor, all: &mut Vec<Var>| {
            let v = if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            all.push(v);
            v
        };
        let mut all = Vec::new();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mu = leaf(g, &layer.mu, &mut all);
            let rho = leaf(g, &layer.rho, &mut all);
            let sigma = g.softplus(rho);
            let sigma2 = g.square(sigma);
            let mut scales = Vec::with_capacity(layer.scales.len());
            for s in &layer.scales {
                let mu = leaf(g, &s.mu, &mut all);
                let rho = leaf(g, &s.rho, &mut all);
                let sd = g.softplus(rho);
                let var = g.square(sd);
                scales.push(ScaleNodes { mu, sd, var });
            }
            layers.push(LayerNodes {
                mu,
                sigma,
                sigma2,
                scales,
            });
        }
        let noise = match &self.noise {
            Some(n) => {
                let a = leaf(g, &n.alpha_raw, &mut all);
                let b = leaf(g, &n.beta_raw, &mut all);
                Some(NoiseNodes {
                    alpha: g.softplus(a),
                    beta: g.softplus(b),
                })
            }
            None => None,
        };
        Ok(ParamVars { all, layers, noise })
    }

    /// One stochastic pass through layer `l` given its input `a` (bias column
    /// already appended) and `a²`.
    pub fn forward_layer(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        l: usize,
        a: Var,
        a2: Var,
        noise: &mut NoiseStream,
    ) -> Result<Var> {
        let layer = &self.layers[l];
        let nodes = &vars.layers[l];
        let (batch, cols) = g.value(a).expect_matrix()?;
        if cols != layer.fan_in() {
            return Err(Error::dim(format!(
                "layer {l} expects {} inputs with bias, got {cols}",
                layer.fan_in()
            )));
        }
        let units = layer.units();
        let mean = g.matmul(a, nodes.mu)?;
        let var = g.matmul(a2, nodes.sigma2)?;
        match (layer.parameterization, self.prior.forward) {
            (Parameterization::Centered, _) => gaussian_draw(g, mean, var, noise),
            (Parameterization::NonCentered, ForwardVariant::ExpectedScales) => {
                let mut factor: Option<Var> = None;
                for (group, s) in layer.scales.iter().zip(&nodes.scales) {
                    let m = tape::lognormal_mean_pow(g, s.mu, s.var, group.power)?;
                    factor = Some(match factor {
                        None => m,
                        Some(f) => g.mul(f, m)?,
                    });
                }
                let var = match factor {
                    Some(f) => g.mul(var, f)?,
                    None => var,
                };
                gaussian_draw(g, mean, var, noise)
            }
            (Parameterization::NonCentered, ForwardVariant::SampledScales) => {
                let mut log_scale: Option<Var> = None;
                for (group, s) in layer.scales.iter().zip(&nodes.scales) {
                    let eps = noise.standard_normal(&[batch, group.len()])?;
                    let eps = if group.len() == units {
                        eps
                    } else {
                        repeat_columns(&eps, units)?
                    };
                    let e = g.constant(eps);
                    let spread = g.mul(s.sd, e)?;
                    let draw = g.add(s.mu, spread)?;
                    let draw = g.scale(draw, group.power);
                    log_scale = Some(match log_scale {
                        None => draw,
                        Some(acc) => g.add(acc, draw)?,
                    });
                }
                let inner = gaussian_draw(g, mean, var, noise)?;
                match log_scale {
                    Some(ls) => {
                        let s = g.exp(ls);
                        g.mul(s, inner)
                    }
                    None => Ok(inner),
                }
            }
        }
    }

    /// Network output `f` (regression means or class logits) for inputs `x`.
    pub fn forward(&self, g: &mut Graph, vars: &ParamVars, x: Var, noise: &mut NoiseStream) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers.len() {
            let a = g.append_ones(h)?;
            let a2 = g.square(a);
            let u = self.forward_layer(g, vars, l, a, a2, noise)?;
            h = if l + 1 < self.layers.len() {
                match self.network.nonlinearity {
                    Nonlinearity::Relu => g.relu(u),
                }
            } else {
                u
            };
        }
        Ok(h)
    }

    /// `Σ_n E[ln p(y_n | f_n)]` for one forward sample.
    pub fn expected_log_likelihood(&self, g: &mut Graph, vars: &ParamVars, f: Var, targets: &Targets) -> Result<Var> {
        let (batch, k) = g.value(f).expect_matrix()?;
        if batch != targets.len() {
            return Err(Error::dim(format!("{batch} outputs for {} targets", targets.len())));
        }
        match (self.network.likelihood, targets) {
            (Likelihood::GaussianRegression, Targets::Real(y)) => {
                let nodes = vars
                    .noise
                    .ok_or_else(|| Error::Contract("gaussian likelihood without noise model".into()))?;
                let (mean, mean_log) = tape::gamma_expectations(g, nodes.alpha, nodes.beta)?;
                gaussian_log_likelihood(g, f, y, mean, mean_log)
            }
            (Likelihood::Categorical, Targets::Labels { labels, .. }) => {
                if let Some(bad) = labels.iter().find(|&&c| c >= k) {
                    return Err(Error::domain(format!("label {bad} outside [0, {k})")));
                }
                categorical_log_likelihood(g, f, labels)
            }
            (lik, t) => Err(Error::Contract(format!(
                "{lik:?} likelihood with {:?} targets",
                t.kind()
            ))),
        }
    }

    /// ELBO estimate on a minibatch: likelihood rescaled by `n_total/|batch|`
    /// and averaged over `samples` forward passes; prior and entropy terms in
    /// closed form once.
    #[allow(clippy::too_many_arguments)]
    pub fn elbo(
        &self,
        g: &mut Graph,
        vars: &ParamVars,
        batch: &Dataset,
        n_total: usize,
        samples: usize,
        noise: &mut NoiseStream,
        opts: ElboOptions,
    ) -> Result<ElboGraph> {
        if samples == 0 {
            return Err(Error::Contract("ELBO needs at least one sample".into()));
        }
        if batch.is_empty() {
            return Err(Error::Contract("ELBO needs a non-empty minibatch".into()));
        }
        let mut terms: Vec<(String, TermKind, Var)> = Vec::new();

        if opts.likelihood {
            let x = g.constant(batch.features.clone());
            let mut acc: Option<Var> = None;
            for _ in 0..samples {
                let f = self.forward(g, vars, x, noise)?;
                let ll = self.expected_log_likelihood(g, vars, f, &batch.targets)?;
                acc = Some(match acc {
                    None => ll,
                    Some(a) => g.add(a, ll)?,
                });
            }
            let scale = n_total as f64 / (batch.len() as f64 * samples as f64);
            let ll = g.scale(acc.expect("samples >= 1"), scale);
            terms.push(("expected log-likelihood".into(), TermKind::Likelihood, ll));
        }

        for (l, (layer, nodes)) in self.layers.iter().zip(&vars.layers).enumerate() {
            if opts.prior {
                let t = self.weight_prior(g, layer, nodes)?;
                let w = match layer.parameterization {
                    Parameterization::NonCentered => "beta",
                    Parameterization::Centered => "w",
                };
                terms.push((format!("layer{l} {w} prior"), TermKind::Prior, t));
                for (group, s) in layer.scales.iter().zip(&nodes.scales) {
                    let t = tape::expected_log_hs_scale_terms(g, s.mu, s.var, &group.aux, group.b)?;
                    terms.push((format!("layer{l} {} prior", group.role.name()), TermKind::Prior, t));
                }
            }
            if opts.entropy {
                let log_sigma = g.log(nodes.sigma)?;
                let t = tape::gaussian_entropy(g, log_sigma);
                terms.push((format!("layer{l} weight entropy"), TermKind::Entropy, t));
                for (group, s) in layer.scales.iter().zip(&nodes.scales) {
                    let log_sd = g.log(s.sd)?;
                    let t = tape::lognormal_entropy(g, s.mu, log_sd)?;
                    terms.push((format!("layer{l} {} entropy", group.role.name()), TermKind::Entropy, t));
                }
            }
        }

        if let Some(nodes) = vars.noise {
            if opts.prior {
                let (mean, mean_log) = tape::gamma_expectations(g, nodes.alpha, nodes.beta)?;
                let t = tape::expected_log_gamma_prior(g, mean, mean_log, NOISE_PRIOR_SHAPE, NOISE_PRIOR_RATE);
                terms.push(("noise precision prior".into(), TermKind::Prior, t));
            }
            if opts.entropy {
                let t = tape::gamma_entropy(g, nodes.alpha, nodes.beta)?;
                terms.push(("noise precision entropy".into(), TermKind::Entropy, t));
            }
        }

        let aux_entropy = if opts.entropy {
            self.layers
                .iter()
                .flat_map(|l| &l.scales)
                .flat_map(|s| &s.aux)
                .map(InvGammaQ::entropy)
                .sum()
        } else {
            0.0
        };
        let vars_only: Vec<Var> = terms.iter().map(|t| t.2).collect();
        let total = match vars_only.is_empty() {
            true => g.scalar(0.0),
            false => g.sum_all(&vars_only)?,
        };
        let total = g.shift(total, aux_entropy);
        Ok(ElboGraph {
            total,
            terms,
            aux_entropy,
        })
    }

    /// `E[ln p(weights | scales)]` for one layer.
    fn weight_prior(&self, g: &mut Graph, layer: &Layer, nodes: &LayerNodes) -> Result<Var> {
        let mu2 = g.square(nodes.mu);
        let second = g.add(mu2, nodes.sigma2)?;
        let n_in = layer.fan_in() as f64;
        let units = layer.units() as f64;
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        match layer.parameterization {
            Parameterization::NonCentered => {
                let s = g.sum(second);
                let s = g.scale(s, -0.5);
                Ok(g.shift(s, -n_in * units * half_ln_2pi))
            }
            Parameterization::Centered => {
                let col = g.reduce(Reduction::Sum, second, Some(0))?;
                let mut weighted = col;
                let mut log_terms = Vec::new();
                for (group, s) in layer.scales.iter().zip(&nodes.scales) {
                    let p = group.power;
                    let inv = tape::lognormal_mean_pow(g, s.mu, s.var, -2.0 * p)?;
                    weighted = g.mul(weighted, inv)?;
                    let m = g.sum(s.mu);
                    let repeat = units / group.len() as f64;
                    log_terms.push(g.scale(m, -n_in * p * repeat));
                }
                let q = g.sum(weighted);
                let q = g.scale(q, -0.5);
                log_terms.push(q);
                let s = g.sum_all(&log_terms)?;
                Ok(g.shift(s, -n_in * units * half_ln_2pi))
            }
        }
    }

    /// Convenience: ELBO terms on a fresh graph with constant parameters.
    pub fn elbo_value(
        &self,
        batch: &Dataset,
        n_total: usize,
        samples: usize,
        noise: &mut NoiseStream,
        opts: ElboOptions,
    ) -> Result<ElboTerms> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false)?;
        let e = self.elbo(&mut g, &vars, batch, n_total, samples, noise, opts)?;
        Ok(e.evaluate(&g))
    }

    /// `M` stochastic forward passes over `x`, each paired with a noise
    /// precision drawn from `q(γ)` under the Gaussian likelihood.
    pub fn sample_predictive(&self, x: &Tensor, m: usize, noise: &mut NoiseStream) -> Result<PredictiveSamples> {
        if m == 0 {
            return Err(Error::Contract("predict needs at least one sample".into()));
        }
        let (n, d) = x.expect_matrix()?;
        if d != self.network.widths[0] {
            return Err(Error::dim(format!(
                "model expects {} features, data has {d}",
                self.network.widths[0]
            )));
        }
        const CHUNK: usize = 2048;
        let mut outputs = Vec::with_capacity(m);
        let mut precisions = Vec::with_capacity(m);
        for _ in 0..m {
            let mut data = Vec::with_capacity(n * self.network.widths.last().copied().unwrap_or(1));
            let mut start = 0;
            while start < n {
                let end = (start + CHUNK).min(n);
                let idx: Vec<usize> = (start..end).collect();
                let mut g = Graph::new();
                let vars = self.register(&mut g, false)?;
                let xv = g.constant(x.select_rows(&idx)?);
                let f = self.forward(&mut g, &vars, xv, noise)?;
                data.extend_from_slice(g.value(f).data());
                start = end;
            }
            let k = data.len() / n;
            outputs.push(Tensor::matrix(n, k, data)?);
            if let Some(nm) = &self.noise {
                let q = nm.posterior();
                precisions.push(sample_gamma(noise.rng_mut(), q.alpha, q.beta));
            }
        }
        Ok(PredictiveSamples { outputs, precisions })
    }
}

fn gaussian_draw(g: &mut Graph, mean: Var, var: Var, noise: &mut NoiseStream) -> Result<Var> {
    let sd = g.sqrt(var)?;
    let shape = g.value(mean).shape().to_vec();
    let eps = g.constant(noise.standard_normal(&shape)?);
    let spread = g.mul(sd, eps)?;
    g.add(mean, spread)
}

fn repeat_columns(t: &Tensor, k: usize) -> Result<Tensor> {
    let (rows, cols) = t.expect_matrix()?;
    if cols != 1 {
        return Err(Error::dim(format!("can only repeat a single column, got {cols}")));
    }
    Tensor::matrix(
        rows,
        k,
        t.data().iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect(),
    )
}

fn gaussian_log_likelihood(g: &mut Graph, f: Var, y: &[f64], mean: Var, mean_log: Var) -> Result<Var> {
    let n = y.len() as f64;
    let yt = g.constant(Tensor::matrix(y.len(), 1, y.to_vec())?);
    let r = g.sub(f, yt)?;
    let r2 = g.square(r);
    let ss = g.sum(r2);
    let fit = g.mul(mean, ss)?;
    let fit = g.scale(fit, -0.5);
    let norm = g.affine(mean_log, 0.5 * n, -0.5 * n * (2.0 * PI).ln());
    g.add(norm, fit)
}

fn categorical_log_likelihood(g: &mut Graph, f: Var, labels: &[usize]) -> Result<Var> {
    let (n, k) = g.value(f).expect_matrix()?;
    let mut onehot = vec![0.0; n * k];
    for (i, &c) in labels.iter().enumerate() {
        onehot[i * k + c] = 1.0;
    }
    let mask = g.constant(Tensor::matrix(n, k, onehot)?);
    let picked = g.mul(f, mask)?;
    let picked = g.sum(picked);
    let lse = g.reduce(Reduction::LogSumExp, f, Some(1))?;
    let lse = g.sum(lse);
    g.sub(picked, lse)
}

/// Raw draws from the predictive distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSamples {
    /// One `[N x K_L]` output per sample.
    pub outputs: Vec<Tensor>,
    /// Noise precision per sample (Gaussian likelihood only).
    pub precisions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub mean: Vec<f64>,
    /// Spread of the sampled means plus the expected noise variance.
    pub variance: Vec<f64>,
    /// `ln (1/M) Σ_m N(y_n | f_mn, 1/γ_m)` per point, when targets are given.
    pub log_density: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    /// `[N x C]` sample-averaged softmax probabilities.
    pub probs: Tensor,
    pub labels: Vec<usize>,
}

impl PredictiveSamples {
    pub fn regression(&self, y: Option<&[f64]>) -> Result<RegressionSummary> {
        if self.precisions.len() != self.outputs.len() {
            return Err(Error::Contract("regression summary needs noise precisions".into()));
        }
        let m = self.outputs.len() as f64;
        let n = self.outputs[0].rows();
        if let Some(y) = y {
            if y.len() != n {
                return Err(Error::dim(format!("{} targets for {n} predictions", y.len())));
            }
        }
        let noise_var: f64 = self.precisions.iter().map(|g| 1.0 / g).sum::<f64>() / m;
        let mut mean = vec![0.0; n];
        let mut variance = vec![0.0; n];
        let mut log_density = y.map(|_| vec![0.0; n]);
        let mut per_sample = vec![0.0; self.outputs.len()];
        for i in 0..n {
            let fs: Vec<f64> = self.outputs.iter().map(|o| o.data()[i]).collect();
            let mu = fs.iter().sum::<f64>() / m;
            mean[i] = mu;
            variance[i] = fs.iter().map(|f| (f - mu) * (f - mu)).sum::<f64>() / m + noise_var;
            if let (Some(y), Some(ld)) = (y, log_density.as_mut()) {
                for ((p, f), gam) in per_sample.iter_mut().zip(&fs).zip(&self.precisions) {
                    *p = distributions::normal_logpdf(y[i], *f, 1.0 / gam);
                }
                ld[i] = log_mean_exp(&per_sample);
            }
        }
        Ok(RegressionSummary {
            mean,
            variance,
            log_density,
        })
    }

    pub fn classification(&self) -> Result<ClassSummary> {
        let (n, k) = self.outputs[0].expect_matrix()?;
        let m = self.outputs.len() as f64;
        let mut probs = vec![0.0; n * k];
        for o in &self.outputs {
            for (row, acc) in o.data().chunks(k).zip(probs.chunks_mut(k)) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += (v - mx).exp() / z / m;
                }
            }
        }
        let labels = probs
            .chunks(k)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (j, &p)| if p > best.1 { (j, p) } else { best },
                    )
                    .0
            })
            .collect();
        Ok(ClassSummary {
            probs: Tensor::matrix(n, k, probs)?,
            labels,
        })
    }
}

/// `ln((1/n) Σ exp(x_i))`, computed stably.
pub fn log_mean_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (x.iter().map(|v| (v - m).exp()).sum::<f64>() / x.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(widths: Vec<usize>, lik: Likelihood, mode: PriorMode, seed: u64) -> BayesNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BayesNet::init(&NetworkConfig::new(widths, lik), &PriorConfig::new(mode), &mut rng).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_valid() {
        for mode in [
            PriorMode::HsNoncentered,
            PriorMode::HsCentered,
            PriorMode::GaussianBaseline,
        ] {
            let a = net(vec![3, 4, 2], Likelihood::Categorical, mode, 7);
            assert_eq!(a, net(vec![3, 4, 2], Likelihood::Categorical, mode, 7));
            for layer in &a.layers {
                assert!(layer.sigma2().data().iter().all(|&v| (v - 1e-4).abs() < 1e-12));
                for g in &layer.scales {
                    for (k, q) in g.posteriors().iter().enumerate() {
                        assert!((q.sigma2 - 1e-2).abs() < 1e-12);
                        assert_eq!(g.aux[k], fixed_point_aux(q, g.b));
                    }
                }
            }
        }
    }

    #[test]
    fn init_scale_means_by_role() {
        let a = net(
            vec![2, 5, 1],
            Likelihood::GaussianRegression,
            PriorMode::HsNoncentered,
            0,
        );
        assert_eq!(a.layers[0].scales[0].role, ScaleRole::Unit);
        assert_eq!(a.layers[0].scales[0].len(), 5);
        assert!(a.layers[0]
            .scales
            .iter()
            .all(|g| g.mu.data().iter().all(|&m| m == -3.0)));
        assert_eq!(a.layers[1].scales[0].role, ScaleRole::Output);
        assert_eq!(a.layers[1].scales[0].mu.item(), 0.0);
        assert_eq!(a.noise.as_ref().unwrap().posterior().alpha, 6.0);
        let b = net(
            vec![2, 5, 1],
            Likelihood::GaussianRegression,
            PriorMode::GaussianBaseline,
            0,
        );
        assert!(b
            .layers
            .iter()
            .all(|l| l.scales.len() == 1 && l.scales[0].role == ScaleRole::Output));
    }

    #[test]
    fn fan_in_variance_at_width_1000() {
        let a = net(
            vec![999, 1000, 1],
            Likelihood::GaussianRegression,
            PriorMode::HsNoncentered,
            3,
        );
        let w = a.layers[0].mu.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var * 1000.0 - 1.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn config_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = PriorConfig::new(PriorMode::HsNoncentered);
        for widths in [vec![2], vec![2, 0, 1], vec![2, 3, 2]] {
            let c = NetworkConfig::new(widths, Likelihood::GaussianRegression);
            assert!(matches!(BayesNet::init(&c, &prior, &mut rng), Err(Error::Config(_))));
        }
        let mut bad = prior.clone();
        bad.b0 = 0.0;
        let c = NetworkConfig::new(vec![1, 1], Likelihood::GaussianRegression);
        assert!(matches!(BayesNet::init(&c, &bad, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn config_json_names() {
        let p: PriorConfig =
            serde_json::from_str(r#"{"mode":"hs-noncentered","forward":"sampled-scales","output_scale":"variance"}"#)
                .unwrap();
        assert_eq!(p.bkappa, 5.0);
        assert_eq!(p.forward, ForwardVariant::SampledScales);
        assert_eq!(p.output_scale.power(), 0.5);
        assert!(serde_json::from_str::<PriorConfig>(r#"{"mode":"hs-noncentered","b9":1}"#).is_err());
        let n: NetworkConfig =
            serde_json::from_str(r#"{"widths":[2,3,1],"likelihood":"gaussian-regression"}"#).unwrap();
        assert_eq!(n.nonlinearity, Nonlinearity::Relu);
    }

    #[test]
    fn zero_means_give_zero_pre_activation_mean() {
        for forward in [ForwardVariant::ExpectedScales, ForwardVariant::SampledScales] {
            let mut m = net(
                vec![3, 4, 1],
                Likelihood::GaussianRegression,
                PriorMode::HsNoncentered,
                1,
            );
            m.prior.forward = forward;
            for l in &mut m.layers {
                l.mu = l.mu.zeros_like();
                l.rho = l.rho.map(|_| softplus_inv(1e-8));
            }
            let x = Tensor::from_fn(&[10, 3], |i| (i as f64).sin());
            let mut g = Graph::new();
            let vars = m.register(&mut g, false).unwrap();
            let xv = g.constant(x);
            let f = m.forward(&mut g, &vars, xv, &mut NoiseStream::new(2)).unwrap();
            assert!(g.value(f).data().iter().all(|v| v.abs() <= 1e-2));
        }
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let m = net(vec![2, 6, 3], Likelihood::Categorical, PriorMode::HsCentered, 4);
        let x = Tensor::from_fn(&[5, 2], |i| i as f64 * 0.1);
        let run = |seed| {
            let mut g = Graph::new();
            let vars = m.register(&mut g, false).unwrap();
            let xv = g.constant(x.clone());
            let f = m.forward(&mut g, &vars, xv, &mut NoiseStream::new(seed)).unwrap();
            g.value(f).clone()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn variants_agree_on_mean_with_unit_point_mass_scales() {
        let mut m = net(
            vec![2, 3, 1],
            Likelihood::GaussianRegression,
            PriorMode::HsNoncentered,
            5,
        );
        for l in &mut m.layers {
            l.rho = l.rho.map(|_| softplus_inv(1e-9));
            for g in &mut l.scales {
                g.mu = g.mu.zeros_like();
                g.rho = g.rho.map(|_| softplus_inv(1e-9));
            }
        }
        let x = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.7).cos());
        let out = |forward| {
            let mut m = m.clone();
            m.prior.forward = forward;
            let mut g = Graph::new();
            let vars = m.register(&mut g, false).unwrap();
            let xv = g.constant(x.clone());
            let f = m.forward(&mut g, &vars, xv, &mut NoiseStream::new(0)).unwrap();
            g.value(f).clone()
        };
        let a = out(ForwardVariant::ExpectedScales);
        let b = out(ForwardVariant::SampledScales);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn categorical_uniform_logits() {
        let m = net(vec![1, 3], Likelihood::Categorical, PriorMode::HsNoncentered, 0);
        let mut g = Graph::new();
        let vars = m.register(&mut g, false).unwrap();
        let f = g.constant(Tensor::zeros(&[4, 3]));
        let t = Targets::Labels {
            labels: vec![0, 1, 2, 1],
            classes: 3,
        };
        let ll = m.expected_log_likelihood(&mut g, &vars, f, &t).unwrap();
        assert!((g.value(ll).item() + 4.0 * 3f64.ln()).abs() < 1e-12);
        let bad = Targets::Labels {
            labels: vec![0, 1, 2, 3],
            classes: 4,
        };
        assert!(matches!(
            m.expected_log_likelihood(&mut g, &vars, f, &bad),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gaussian_residual_free_likelihood() {
        // E[γ] = 1 and E[ln γ] = 0 need ψ(α) = ln α; solve for α.
        let mut alpha = 1.0;
        for _ in 0..100 {
            let f = crate::special::digamma(alpha) - alpha.ln();
            let df = crate::special::trigamma(alpha) - 1.0 / alpha;
            alpha -= f / df;
        }
        let mut m = net(vec![1, 1], Likelihood::GaussianRegression, PriorMode::HsNoncentered, 0);
        m.noise = Some(NoiseModel::new(alpha, alpha));
        let mut g = Graph::new();
        let vars = m.register(&mut g, false).unwrap();
        let f = g.constant(Tensor::matrix(3, 1, vec![0.5, 1.0, -2.0]).unwrap());
        let ll = m
            .expected_log_likelihood(&mut g, &vars, f, &Targets::Real(vec![0.5, 1.0, -2.0]))
            .unwrap();
        assert!((g.value(ll).item() / 3.0 + 0.918_938_533_204_672_7).abs() < 1e-9);
    }

    #[test]
    fn entropy_only_elbo() {
        let m = net(
            vec![2, 3, 1],
            Likelihood::GaussianRegression,
            PriorMode::HsNoncentered,
            2,
        );
        let data = crate::data::gen_cubic(4, 0).unwrap();
        let data = Dataset::new(Tensor::from_fn(&[4, 2], |i| i as f64), data.targets).unwrap();
        let opts = ElboOptions {
            likelihood: false,
            prior: false,
            entropy: true,
        };
        let e = m.elbo_value(&data, 4, 1, &mut NoiseStream::new(0), opts).unwrap();
        let mut want = 0.0;
        for l in &m.layers {
            for s2 in l.sigma2().data() {
                want += distributions::entropy(distributions::Family::Gaussian { sigma2: *s2 }).unwrap();
            }
            for g in &l.scales {
                want += g.posteriors().iter().map(LogNormalQ::entropy).sum::<f64>();
                want += g.aux.iter().map(InvGammaQ::entropy).sum::<f64>();
            }
        }
        want += m.noise.as_ref().unwrap().posterior().entropy();
        assert!(
            (e.total - want).abs() < 1e-9 * want.abs().max(1.0),
            "{} vs {want}",
            e.total
        );
        assert_eq!(e.total, e.entropy);
    }

    #[test]
    fn expected_node_weights_cases() {
        let mut m = net(
            vec![2, 3, 1],
            Likelihood::GaussianRegression,
            PriorMode::HsNoncentered,
            2,
        );
        let l = &mut m.layers[0];
        for g in &mut l.scales {
            g.mu = g.mu.zeros_like();
            g.rho = g.rho.map(|_| softplus_inv(1e-12));
        }
        let w = l.expected_node_weights();
        for (a, b) in w.data().iter().zip(l.mu.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        l.mu = l.mu.zeros_like();
        assert!(l.expected_node_weights().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_probabilities_sum_to_one() {
        let m = net(vec![2, 4, 3], Likelihood::Categorical, PriorMode::HsNoncentered, 3);
        let x = Tensor::from_fn(&[7, 2], |i| (i as f64).sin() * 3.0);
        let p = m.sample_predictive(&x, 5, &mut NoiseStream::new(1)).unwrap();
        let c = p.classification().unwrap();
        for row in c.probs.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(c.labels.len(), 7);
    }

    #[test]
    fn log_density_bounded_by_best_sample() {
        let m = net(
            vec![1, 3, 1],
            Likelihood::GaussianRegression,
            PriorMode::HsNoncentered,
            3,
        );
        let x = Tensor::from_fn(&[6, 1], |i| i as f64 - 3.0);
        let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
        let p = m.sample_predictive(&x, 20, &mut NoiseStream::new(1)).unwrap();
        let s = p.regression(Some(&y)).unwrap();
        for (i, ld) in s.log_density.unwrap().iter().enumerate() {
            let best = p
                .outputs
                .iter()
                .zip(&p.precisions)
                .map(|(o, g)| distributions::normal_logpdf(y[i], o.data()[i], 1.0 / g))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(*ld <= best + 1e-12);
        }
    }

    #[test]
    fn deterministic_prediction_with_point_masses() {
        let mut m = net(vec![1, 3, 1], Likelihood::GaussianRegression, PriorMode::HsCentered, 3);
        for l in &mut m.layers {
            l.rho = l.rho.map(|_| softplus_inv(1e-12));
        }
        let x = Tensor::from_fn(&[4, 1], |i| i as f64);
        let a = m.sample_predictive(&x, 1, &mut NoiseStream::new(1)).unwrap();
        let b = m.sample_predictive(&x, 1, &mut NoiseStream::new(2)).unwrap();
        for (u, v) in a.outputs[0].data().iter().zip(b.outputs[0].data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn log_mean_exp_matches_naive() {
        let x = [0.1, -2.0, 1.5];
        let naive = (x.iter().map(|v: &f64| v.exp()).sum::<f64>() / 3.0).ln();
        assert!((log_mean_exp(&x) - naive).abs() < 1e-14);
    }
}
