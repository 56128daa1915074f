//! Independent oracles shared by the integration tests and the acceptance
//! suite. Densities and special functions come from `statrs`, draws from
//! `rand_distr`; nothing here calls the closed forms under test.
#![allow(dead_code)]

use hsbnn::data::{Dataset, Targets};
use hsbnn::distributions::{
    entropy, expected_log_hs_scale_terms, gamma_expectations, Family, GammaQ, InvGammaQ, LogNormalQ, NoiseStream,
};
use hsbnn::grad::Graph;
use hsbnn::model::{fixed_point_aux, BayesNet, ElboOptions};
use hsbnn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Normal, StandardNormal};
use statrs::distribution::{Continuous, Gamma, InverseGamma, LogNormal};
use statrs::function::gamma::{digamma, ln_gamma};

/// Running mean and standard error.
#[derive(Default, Clone, Copy, Debug)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }

    pub fn se(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}

/// One closed form compared against its Monte-Carlo estimate.
#[derive(Clone, Debug)]
pub struct McCheck {
    pub name: String,
    pub closed: f64,
    pub mc: f64,
    pub se: f64,
}

impl McCheck {
    pub fn z(&self) -> f64 {
        (self.closed - self.mc).abs() / self.se.max(1e-300)
    }

    pub fn passes(&self, k: f64) -> bool {
        self.z() <= k
    }
}

fn check(name: String, closed: f64, m: &Moments) -> McCheck {
    McCheck {
        name,
        closed,
        mc: m.mean(),
        se: m.se(),
    }
}

/// Log-Normal closed forms: moments, powers used by the model, entropy.
pub fn lognormal_checks(mu: f64, sigma2: f64, draws: usize, rng: &mut ChaCha8Rng) -> Vec<McCheck> {
    let q = LogNormalQ::new(mu, sigma2).unwrap();
    let mom = q.moments();
    let dens = LogNormal::new(mu, sigma2.sqrt()).unwrap();
    let normal = Normal::new(mu, sigma2.sqrt()).unwrap();
    let powers = [0.5, -2.0];
    let mut acc = [Moments::default(); 6];
    for _ in 0..draws {
        let x: f64 = normal.sample(rng).exp();
        acc[0].push(x);
        acc[1].push(1.0 / x);
        acc[2].push(x.ln());
        acc[3].push(x.powf(powers[0]));
        acc[4].push(x.powf(powers[1]));
        acc[5].push(-dens.ln_pdf(x));
    }
    let tag = format!("lognormal(mu={mu:.3}, s2={sigma2:.3})");
    vec![
        check(format!("{tag} E[x]"), mom.mean, &acc[0]),
        check(format!("{tag} E[1/x]"), mom.mean_recip, &acc[1]),
        check(format!("{tag} E[ln x]"), mom.mean_log, &acc[2]),
        check(format!("{tag} E[x^0.5]"), q.mean_pow(powers[0]), &acc[3]),
        check(format!("{tag} E[x^-2]"), q.mean_pow(powers[1]), &acc[4]),
        check(
            format!("{tag} entropy"),
            entropy(Family::LogNormal(q)).unwrap(),
            &acc[5],
        ),
    ]
}

/// Inverse-Gamma posterior expectations and entropy.
pub fn inv_gamma_checks(c: f64, d: f64, draws: usize, rng: &mut ChaCha8Rng) -> Vec<McCheck> {
    let q = InvGammaQ::new(c, d).unwrap();
    let dens = InverseGamma::new(c, d).unwrap();
    let gamma = GammaDist::new(c, 1.0 / d).unwrap();
    let mut acc = [Moments::default(); 4];
    for _ in 0..draws {
        let v = 1.0 / gamma.sample(rng);
        acc[0].push(1.0 / v);
        acc[1].push(v.ln());
        acc[2].push((1.0 / v).ln());
        acc[3].push(-dens.ln_pdf(v));
    }
    let tag = format!("invgamma(c={c:.3}, d={d:.3})");
    vec![
        check(format!("{tag} E[1/v]"), q.mean_recip(), &acc[0]),
        check(format!("{tag} E[ln v]"), q.mean_log(), &acc[1]),
        check(format!("{tag} E[ln 1/v]"), q.mean_log_recip(), &acc[2]),
        check(format!("{tag} entropy"), entropy(Family::InvGamma(q)).unwrap(), &acc[3]),
    ]
}

/// Gamma posterior expectations, entropy and the expected log of the
/// Gamma(6, 6) precision prior.
pub fn gamma_checks(alpha: f64, beta: f64, draws: usize, rng: &mut ChaCha8Rng) -> Vec<McCheck> {
    let q = GammaQ::new(alpha, beta).unwrap();
    let dens = Gamma::new(alpha, beta).unwrap();
    let prior = Gamma::new(6.0, 6.0).unwrap();
    let sampler = GammaDist::new(alpha, 1.0 / beta).unwrap();
    let mut acc = [Moments::default(); 4];
    for _ in 0..draws {
        let x = sampler.sample(rng);
        acc[0].push(x);
        acc[1].push(x.ln());
        acc[2].push(-dens.ln_pdf(x));
        acc[3].push(prior.ln_pdf(x));
    }
    let (mean, mean_log) = gamma_expectations(&q);
    let mut g = Graph::new();
    let m = g.scalar(mean);
    let ml = g.scalar(mean_log);
    let prior_term = hsbnn::distributions::tape::expected_log_gamma_prior(&mut g, m, ml, 6.0, 6.0);
    let tag = format!("gamma(a={alpha:.3}, b={beta:.3})");
    vec![
        check(format!("{tag} E[x]"), mean, &acc[0]),
        check(format!("{tag} E[ln x]"), mean_log, &acc[1]),
        check(format!("{tag} entropy"), entropy(Family::Gamma(q)).unwrap(), &acc[2]),
        check(format!("{tag} E[ln Gamma(x|6,6)]"), g.value(prior_term).item(), &acc[3]),
    ]
}

pub fn gaussian_entropy_check(sigma2: f64, draws: usize, rng: &mut ChaCha8Rng) -> McCheck {
    let mut acc = Moments::default();
    let sd = sigma2.sqrt();
    for _ in 0..draws {
        let e: f64 = rng.sample(StandardNormal);
        let x = sd * e;
        acc.push(0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() + 0.5 * x * x / sigma2);
    }
    check(
        format!("gaussian(s2={sigma2:.3}) entropy"),
        entropy(Family::Gaussian { sigma2 }).unwrap(),
        &acc,
    )
}

/// `E[ln IG(τ | 1/2, 1/λ) + ln IG(λ | 1/2, 1/b²)]` under `q(τ) q(λ)`.
pub fn hs_scale_check(mu: f64, sigma2: f64, c: f64, d: f64, b: f64, draws: usize, rng: &mut ChaCha8Rng) -> McCheck {
    let normal = Normal::new(mu, sigma2.sqrt()).unwrap();
    let gamma = GammaDist::new(c, 1.0 / d).unwrap();
    let aux_prior = InverseGamma::new(0.5, 1.0 / (b * b)).unwrap();
    let mut acc = Moments::default();
    for _ in 0..draws {
        let tau = normal.sample(rng).exp();
        let lambda = 1.0 / gamma.sample(rng);
        let cond = InverseGamma::new(0.5, 1.0 / lambda).unwrap();
        acc.push(cond.ln_pdf(tau) + aux_prior.ln_pdf(lambda));
    }
    let closed =
        expected_log_hs_scale_terms(&LogNormalQ::new(mu, sigma2).unwrap(), &InvGammaQ::new(c, d).unwrap(), b).unwrap();
    check(
        format!("hs scale terms(mu={mu:.3}, s2={sigma2:.3}, c={c:.3}, d={d:.3}, b={b})"),
        closed,
        &acc,
    )
}

/// The expected Gaussian log-likelihood of one residual under `q(γ)`.
pub fn gaussian_likelihood_check(alpha: f64, beta: f64, resid: f64, draws: usize, rng: &mut ChaCha8Rng) -> McCheck {
    let sampler = GammaDist::new(alpha, 1.0 / beta).unwrap();
    let mut acc = Moments::default();
    for _ in 0..draws {
        let gamma: f64 = sampler.sample(rng);
        acc.push(0.5 * gamma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * gamma * resid * resid);
    }
    let (mean, mean_log) = gamma_expectations(&GammaQ::new(alpha, beta).unwrap());
    let closed = 0.5 * mean_log - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * mean * resid * resid;
    check(
        format!("gaussian log-lik(a={alpha:.3}, b={beta:.3}, r={resid:.3})"),
        closed,
        &acc,
    )
}

/// Every closed form at `settings` random parameter draws (plus the fixed
/// reference points), `draws` samples each.
pub fn closed_form_sweep(settings: usize, draws: usize, seed: u64) -> Vec<McCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(lognormal_checks(1.0, 0.5, draws, &mut rng));
    out.extend(inv_gamma_checks(1.0, 2.0, draws, &mut rng));
    out.extend(gamma_checks(3.5, 2.0, draws, &mut rng));
    out.push(hs_scale_check(0.0, 0.25, 1.0, 2.0, 1.0, draws, &mut rng));
    for _ in 0..settings {
        let mu = rng.random_range(-3.0..1.0);
        let s2 = rng.random_range(0.01..0.6);
        let c = rng.random_range(0.7..3.0);
        let d = rng.random_range(0.3..4.0);
        let b = [0.5, 1.0, 5.0][rng.random_range(0..3)];
        let alpha = rng.random_range(1.0..8.0);
        let beta = rng.random_range(0.5..8.0);
        out.extend(lognormal_checks(mu, s2, draws, &mut rng));
        out.extend(inv_gamma_checks(c, d, draws, &mut rng));
        out.extend(gamma_checks(alpha, beta, draws, &mut rng));
        out.push(gaussian_entropy_check(s2, draws, &mut rng));
        out.push(hs_scale_check(mu, s2, c, d, b, draws, &mut rng));
        out.push(gaussian_likelihood_check(
            alpha,
            beta,
            rng.random_range(-2.0..2.0),
            draws,
            &mut rng,
        ));
    }
    out
}

/// The terms of the ELBO that depend on one auxiliary posterior `IG(c, d)`,
/// written out independently.
pub fn aux_objective(mu: f64, sigma2: f64, c: f64, d: f64, b: f64) -> f64 {
    let e_recip_scale = (-mu + 0.5 * sigma2).exp();
    let e_recip_aux = c / d;
    let e_log_aux = d.ln() - digamma(c);
    let lg_half = ln_gamma(0.5);
    let inv_b2 = 1.0 / (b * b);
    let scale_given_aux = -0.5 * e_log_aux - lg_half - 1.5 * mu - e_recip_aux * e_recip_scale;
    let aux_prior = 0.5 * inv_b2.ln() - lg_half - 1.5 * e_log_aux - inv_b2 * e_recip_aux;
    let aux_entropy = c + d.ln() + ln_gamma(c) - (1.0 + c) * digamma(c);
    scale_given_aux + aux_prior + aux_entropy
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub at_fixed_point: f64,
    pub grid_max: f64,
    pub argmax: (f64, f64),
}

/// Evaluate [`aux_objective`] at the library's fixed point and on an `n x n`
/// log-spaced grid spanning a factor of `spread` either side of it.
pub fn fixed_point_grid(mu: f64, sigma2: f64, b: f64, n: usize, spread: f64) -> GridResult {
    let fp = fixed_point_aux(&LogNormalQ::new(mu, sigma2).unwrap(), b);
    let at_fixed_point = aux_objective(mu, sigma2, fp.c, fp.d, b);
    let axis = |centre: f64| -> Vec<f64> {
        (0..n)
            .map(|i| centre * spread.powf(-1.0 + 2.0 * i as f64 / (n - 1) as f64))
            .collect()
    };
    let mut grid_max = f64::NEG_INFINITY;
    let mut argmax = (0.0, 0.0);
    for &c in &axis(fp.c) {
        for &d in &axis(fp.d) {
            let v = aux_objective(mu, sigma2, c, d, b);
            if v > grid_max {
                grid_max = v;
                argmax = (c, d);
            }
        }
    }
    GridResult {
        at_fixed_point,
        grid_max,
        argmax,
    }
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst: String,
}

/// Compare every ELBO parameter gradient against central differences with
/// step `h`, holding the reparameterization noise fixed.
pub fn elbo_gradient_check(model: &BayesNet, data: &Dataset, samples: usize, seed: u64, h: f64) -> GradCheck {
    let mut g = Graph::new();
    let vars = model.register(&mut g, true).unwrap();
    let mut noise = NoiseStream::recording(seed);
    let elbo = model
        .elbo(
            &mut g,
            &vars,
            data,
            data.len(),
            samples,
            &mut noise,
            ElboOptions::default(),
        )
        .unwrap();
    let grads = g.backward(elbo.total).unwrap().take(&vars.all).unwrap();
    let names = model.param_names();
    let eval = |m: &BayesNet| -> f64 {
        let mut replay = noise.replay().unwrap();
        m.elbo_value(data, data.len(), samples, &mut replay, ElboOptions::default())
            .unwrap()
            .total
    };
    let mut out = GradCheck {
        checked: 0,
        worst_rel: 0.0,
        worst: String::new(),
    };
    for (p, grad) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[p].data_mut()[j] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].data_mut()[j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ad = grad.data()[j];
            let rel = (ad - fd).abs() / fd.abs().max(1e-8);
            out.checked += 1;
            if rel > out.worst_rel {
                out.worst_rel = rel;
                out.worst = format!("{}[{j}]: autodiff {ad:e}, finite difference {fd:e}", names[p]);
            }
        }
    }
    out
}

/// Move every parameter away from its initial value so no gradient check
/// runs at a symmetric point.
pub fn jitter(model: &mut BayesNet, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut() {
        for v in t.data_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += scale * e;
        }
    }
}

/// `n` regression points with inputs on `[-1, 1]^d` and a smooth target.
pub fn tiny_regression(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.chunks(d).map(|r| r.iter().sum::<f64>().sin() + 0.1).collect();
    Dataset::new(Tensor::matrix(n, d, x).unwrap(), Targets::Real(y)).unwrap()
}

pub fn tiny_classification(n: usize, d: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    Dataset::new(Tensor::matrix(n, d, x).unwrap(), Targets::Labels { labels, classes }).unwrap()
}
