//! Densities, entropies and moments for the variational families, and the
//! expected log-prior terms of the horseshoe scale hierarchy.
//!
//! Scalar functions here are the closed forms. The [`tape`] submodule builds
//! the same expressions on a [`Graph`] so they can be differentiated.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, Var};
use crate::special::{digamma, ln_gamma};
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// log-Normal posterior: `ln x ~ N(mu, sigma2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalQ {
    pub mu: f64,
    pub sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormalMoments {
    pub mean: f64,
    pub mean_recip: f64,
    pub mean_log: f64,
}

impl LogNormalQ {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::domain(format!(
                "log-Normal needs finite mu and sigma2 > 0, got ({mu}, {sigma2})"
            )));
        }
        Ok(Self { mu, sigma2 })
    }

    pub fn moments(&self) -> LogNormalMoments {
        LogNormalMoments {
            mean: (self.mu + 0.5 * self.sigma2).exp(),
            mean_recip: (-self.mu + 0.5 * self.sigma2).exp(),
            mean_log: self.mu,
        }
    }

    /// `E[x^p] = exp(p mu + p^2 sigma2 / 2)`.
    pub fn mean_pow(&self, p: f64) -> f64 {
        (p * self.mu + 0.5 * p * p * self.sigma2).exp()
    }

    /// Differential entropy of `x` (not of `ln x`).
    pub fn entropy(&self) -> f64 {
        self.mu + 0.5 * (2.0 * PI * std::f64::consts::E * self.sigma2).ln()
    }
}

/// `(E[x], E[1/x], E[ln x])` of a log-Normal posterior.
pub fn lognormal_moments(q: &LogNormalQ) -> (f64, f64, f64) {
    let m = q.moments();
    (m.mean, m.mean_recip, m.mean_log)
}

/// Inverse-Gamma posterior with density proportional to `v^(-c-1) exp(-d/v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGammaQ {
    pub c: f64,
    pub d: f64,
}

impl InvGammaQ {
    pub fn new(c: f64, d: f64) -> Result<Self> {
        if !(c > 0.0 && d > 0.0) || !c.is_finite() || !d.is_finite() {
            return Err(Error::domain(format!(
                "inverse-Gamma needs c > 0 and d > 0, got ({c}, {d})"
            )));
        }
        Ok(Self { c, d })
    }

    pub fn mean_recip(&self) -> f64 {
        self.c / self.d
    }

    pub fn mean_log(&self) -> f64 {
        self.d.ln() - digamma(self.c)
    }

    pub fn mean_log_recip(&self) -> f64 {
        digamma(self.c) - self.d.ln()
    }

    pub fn entropy(&self) -> f64 {
        self.c + self.d.ln() + ln_gamma(self.c) - (1.0 + self.c) * digamma(self.c)
    }
}

/// Gamma posterior with shape `alpha` and rate `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaQ {
    pub alpha: f64,
    pub beta: f64,
}

impl GammaQ {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::domain(format!(
                "Gamma needs alpha > 0 and beta > 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn entropy(&self) -> f64 {
        self.alpha - self.beta.ln() + ln_gamma(self.alpha) + (1.0 - self.alpha) * digamma(self.alpha)
    }
}

/// `(E[γ], E[ln γ])`.
pub fn gamma_expectations(q: &GammaQ) -> (f64, f64) {
    (q.alpha / q.beta, digamma(q.alpha) - q.beta.ln())
}

/// Family selector for [`entropy`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    Gaussian { sigma2: f64 },
    LogNormal(LogNormalQ),
    InvGamma(InvGammaQ),
    Gamma(GammaQ),
}

pub fn entropy(family: Family) -> Result<f64> {
    Ok(match family {
        Family::Gaussian { sigma2 } => {
            if !(sigma2 > 0.0) {
                return Err(Error::domain(format!("Gaussian variance {sigma2}")));
            }
            0.5 * (2.0 * PI * std::f64::consts::E * sigma2).ln()
        }
        Family::LogNormal(q) => LogNormalQ::new(q.mu, q.sigma2)?.entropy(),
        Family::InvGamma(q) => InvGammaQ::new(q.c, q.d)?.entropy(),
        Family::Gamma(q) => GammaQ::new(q.alpha, q.beta)?.entropy(),
    })
}

pub fn half_cauchy_logpdf(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!("half-Cauchy at a={a}, b={b}")));
    }
    Ok((2.0 / (PI * b * (1.0 + (a * a) / (b * b)))).ln())
}

/// Inverse-Gamma log density with shape `a` and scale `b`.
pub fn inv_gamma_logpdf(v: f64, a: f64, b: f64) -> Result<f64> {
    if !(v > 0.0 && a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!("inverse-Gamma density at v={v}, a={a}, b={b}")));
    }
    Ok(a * b.ln() - ln_gamma(a) - (a + 1.0) * v.ln() - b / v)
}

/// Gamma log density with shape `a` and rate `b`.
pub fn gamma_logpdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(x > 0.0 && a > 0.0 && b > 0.0) {
        return Err(Error::domain(format!("Gamma density at x={x}, a={a}, b={b}")));
    }
    Ok(a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x)
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// The individual expectations entering [`expected_log_hs_scale_terms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsScaleExpectations {
    /// `E[ln(1/λ)] = ψ(c) - ln d`
    pub log_recip_aux: f64,
    /// `E[1/λ] = c/d`
    pub recip_aux: f64,
    /// `E[ln λ] = ln d - ψ(c)`
    pub log_aux: f64,
    /// `E[ln τ] = μ`
    pub log_scale: f64,
    /// `E[1/τ] = exp(-μ + σ²/2)`
    pub recip_scale: f64,
}

impl HsScaleExpectations {
    pub fn new(q_scale: &LogNormalQ, q_aux: &InvGammaQ) -> Self {
        let m = q_scale.moments();
        Self {
            log_recip_aux: q_aux.mean_log_recip(),
            recip_aux: q_aux.mean_recip(),
            log_aux: q_aux.mean_log(),
            log_scale: m.mean_log,
            recip_scale: m.mean_recip,
        }
    }
}

/// `E_q[ln IG(τ | 1/2, 1/λ)] + E_q[ln IG(λ | 1/2, 1/b²)]` under the factorized
/// posterior `q(τ) q(λ)`.
pub fn expected_log_hs_scale_terms(q_scale: &LogNormalQ, q_aux: &InvGammaQ, b: f64) -> Result<f64> {
    LogNormalQ::new(q_scale.mu, q_scale.sigma2)?;
    InvGammaQ::new(q_aux.c, q_aux.d)?;
    if !(b > 0.0) {
        return Err(Error::domain(format!("hyper-scale b={b}")));
    }
    let e = HsScaleExpectations::new(q_scale, q_aux);
    let lg_half = ln_gamma(0.5);
    let scale_given_aux = 0.5 * e.log_recip_aux - lg_half - 1.5 * e.log_scale - e.recip_aux * e.recip_scale;
    let inv_b2 = 1.0 / (b * b);
    let aux_prior = 0.5 * inv_b2.ln() - lg_half - 1.5 * e.log_aux - inv_b2 * e.recip_aux;
    Ok(scale_given_aux + aux_prior)
}

/// Source of standard-normal draws for the reparameterization trick.
///
/// A stream can record its draws and later replay them exactly, which gives
/// common random numbers for finite-difference gradient checks.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    mode: NoiseMode,
}

#[derive(Clone, Debug)]
enum NoiseMode {
    Fresh,
    Recording(Vec<Tensor>),
    Replaying { draws: Vec<Tensor>, next: usize },
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            mode: NoiseMode::Fresh,
        }
    }

    pub fn recording(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode: NoiseMode::Recording(Vec::new()),
        }
    }

    /// A stream that replays everything this stream recorded so far.
    pub fn replay(&self) -> Result<Self> {
        match &self.mode {
            NoiseMode::Recording(draws) => Ok(Self {
                rng: self.rng.clone(),
                mode: NoiseMode::Replaying {
                    draws: draws.clone(),
                    next: 0,
                },
            }),
            NoiseMode::Replaying { draws, .. } => Ok(Self {
                rng: self.rng.clone(),
                mode: NoiseMode::Replaying {
                    draws: draws.clone(),
                    next: 0,
                },
            }),
            NoiseMode::Fresh => Err(Error::Contract(
                "replay requested from a stream that was not recording".into(),
            )),
        }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        if let NoiseMode::Replaying { draws, next } = &mut self.mode {
            let t = draws
                .get(*next)
                .ok_or_else(|| Error::Contract(format!("replay exhausted after {next} draws")))?;
            if t.shape() != shape {
                return Err(Error::Contract(format!(
                    "replayed draw has shape {:?}, requested {shape:?}",
                    t.shape()
                )));
            }
            *next += 1;
            return Ok(t.clone());
        }
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| StandardNormal.sample(rng));
        if let NoiseMode::Recording(draws) = &mut self.mode {
            draws.push(t.clone());
        }
        Ok(t)
    }
}

/// `mu + sigma * eps` with `eps ~ N(0, I)`, differentiable in `mu` and
/// `sigma`. Returns the output node and the `eps` that was used.
pub fn sample_reparam_gaussian(g: &mut Graph, mu: Var, sigma: Var, noise: &mut NoiseStream) -> Result<(Var, Tensor)> {
    let shape = g.value(mu).shape().to_vec();
    if g.value(sigma).shape() != shape.as_slice() {
        return Err(Error::dim(format!(
            "mu shape {shape:?} vs sigma shape {:?}",
            g.value(sigma).shape()
        )));
    }
    if g.value(sigma).data().iter().any(|&s| s < 0.0) {
        return Err(Error::domain("negative standard deviation"));
    }
    let eps = noise.standard_normal(&shape)?;
    let e = g.constant(eps.clone());
    let scaled = g.mul(sigma, e)?;
    Ok((g.add(mu, scaled)?, eps))
}

/// Inverse-Gamma draw with shape `a` and scale `b` (test oracles only).
pub fn sample_inv_gamma<R: rand::Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    1.0 / sample_gamma(rng, a, b)
}

/// Gamma draw with shape `a` and rate `b`.
pub fn sample_gamma<R: rand::Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Gamma::new(a, 1.0 / b).expect("valid Gamma parameters").sample(rng)
}

/// Tape versions of the closed-form terms. Every function returns a `[1 x 1]`
/// node summing over all elements of its inputs.
pub mod tape {
    use super::*;

    /// `exp(p mu + p^2 sigma2 / 2)`, elementwise.
    pub fn lognormal_mean_pow(g: &mut Graph, mu: Var, sigma2: Var, p: f64) -> Result<Var> {
        let a = g.scale(mu, p);
        let b = g.scale(sigma2, 0.5 * p * p);
        let s = g.add(a, b)?;
        Ok(g.exp(s))
    }

    /// Sum over elements of `E[ln IG(τ|1/2,1/λ)] + E[ln IG(λ|1/2,1/b²)]` with
    /// `ln τ ~ N(mu, sigma2)` and `λ ~ aux` held constant.
    pub fn expected_log_hs_scale_terms(g: &mut Graph, mu: Var, sigma2: Var, aux: &[InvGammaQ], b: f64) -> Result<Var> {
        if aux.len() != g.value(mu).len() {
            return Err(Error::dim(format!(
                "{} auxiliary posteriors for {} scales",
                aux.len(),
                g.value(mu).len()
            )));
        }
        let shape = g.value(mu).shape().to_vec();
        let recip_aux = Tensor::new(shape.clone(), aux.iter().map(InvGammaQ::mean_recip).collect())?;
        let inv_b2 = 1.0 / (b * b);
        let lg_half = ln_gamma(0.5);
        let constant: f64 = aux
            .iter()
            .map(|q| {
                0.5 * q.mean_log_recip() - lg_half + 0.5 * inv_b2.ln()
                    - lg_half
                    - 1.5 * q.mean_log()
                    - inv_b2 * q.mean_recip()
            })
            .sum();

        let recip_scale = lognormal_mean_pow(g, mu, sigma2, -1.0)?;
        let ra = g.constant(recip_aux);
        let cross = g.mul(ra, recip_scale)?;
        let cross = g.sum(cross);
        let log_scale = g.sum(mu);
        let a = g.scale(log_scale, -1.5);
        let b = g.neg(cross);
        let s = g.add(a, b)?;
        Ok(g.shift(s, constant))
    }

    /// Summed entropy of log-Normal variables `x` with `ln x ~ N(mu, sigma2)`.
    pub fn lognormal_entropy(g: &mut Graph, mu: Var, log_sigma: Var) -> Result<Var> {
        let n = g.value(mu).len() as f64;
        let m = g.sum(mu);
        let ls = g.sum(log_sigma);
        let s = g.add(m, ls)?;
        Ok(g.shift(s, 0.5 * n * (2.0 * PI * std::f64::consts::E).ln()))
    }

    /// Summed entropy of independent Gaussians, given `ln σ` per element.
    pub fn gaussian_entropy(g: &mut Graph, log_sigma: Var) -> Var {
        let n = g.value(log_sigma).len() as f64;
        let ls = g.sum(log_sigma);
        g.shift(ls, 0.5 * n * (2.0 * PI * std::f64::consts::E).ln())
    }

    /// `(E[γ], E[ln γ])` as nodes.
    pub fn gamma_expectations(g: &mut Graph, alpha: Var, beta: Var) -> Result<(Var, Var)> {
        let mean = g.div(alpha, beta)?;
        let dg = g.digamma(alpha)?;
        let lb = g.log(beta)?;
        Ok((mean, g.sub(dg, lb)?))
    }

    pub fn gamma_entropy(g: &mut Graph, alpha: Var, beta: Var) -> Result<Var> {
        let lb = g.log(beta)?;
        let lg = g.ln_gamma(alpha)?;
        let dg = g.digamma(alpha)?;
        let one_minus = g.affine(alpha, -1.0, 1.0);
        let t = g.mul(one_minus, dg)?;
        let s = g.sub(alpha, lb)?;
        let s = g.add(s, lg)?;
        g.add(s, t)
    }

    /// `E[ln Gamma(γ | shape, rate)]` with fixed prior shape and rate.
    pub fn expected_log_gamma_prior(g: &mut Graph, mean: Var, mean_log: Var, shape: f64, rate: f64) -> Var {
        let c = shape * rate.ln() - ln_gamma(shape);
        let a = g.scale(mean_log, shape - 1.0);
        let b = g.scale(mean, -rate);
        let s = g.add(a, b).expect("scalar terms");
        g.shift(s, c)
    }
}
