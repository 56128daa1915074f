mod support;

use hsbnn::data::{Dataset, Targets};
use hsbnn::diagnostics::unit_norms;
use hsbnn::distributions::NoiseStream;
use hsbnn::grad::Graph;
use hsbnn::model::{
    BayesNet, ElboOptions, ForwardVariant, Layer, Likelihood, NetworkConfig, Parameterization, PriorConfig, PriorMode,
};
use hsbnn::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use statrs::distribution::{Continuous, Gamma, InverseGamma, LogNormal, Normal as NormalDensity};
use support::{elbo_gradient_check, jitter, tiny_classification, tiny_regression, Moments};

const MODES: [PriorMode; 3] = [
    PriorMode::HsNoncentered,
    PriorMode::HsCentered,
    PriorMode::GaussianBaseline,
];
const FORWARDS: [ForwardVariant; 2] = [ForwardVariant::ExpectedScales, ForwardVariant::SampledScales];

fn model(widths: Vec<usize>, likelihood: Likelihood, mode: PriorMode, forward: ForwardVariant, seed: u64) -> BayesNet {
    let net = NetworkConfig::new(widths, likelihood);
    let mut m = BayesNet::init_seeded(&net, &PriorConfig::new(mode).with_forward(forward), seed).unwrap();
    jitter(&mut m, 0.3, seed + 100);
    m
}

#[test]
fn elbo_gradients_match_finite_differences() {
    let reg = tiny_regression(5, 1, 1);
    let cls = tiny_classification(5, 2, 3, 2);
    // Centered layers with small scales make the ELBO large enough that
    // steps below 1e-4 lose the difference to rounding.
    for mode in MODES {
        for forward in FORWARDS {
            let m = model(vec![1, 2, 1], Likelihood::GaussianRegression, mode, forward, 3);
            let r = elbo_gradient_check(&m, &reg, 2, 4, 1e-4);
            assert!(r.worst_rel <= 1e-4, "{mode:?}/{forward:?} regression: {}", r.worst);
            let m = model(vec![2, 2, 3], Likelihood::Categorical, mode, forward, 5);
            let r = elbo_gradient_check(&m, &cls, 2, 6, 1e-4);
            assert!(r.worst_rel <= 1e-4, "{mode:?}/{forward:?} categorical: {}", r.worst);
        }
    }
}

/// Per-unit scale draws for one layer: `Π_groups s^power`, one entry per unit.
fn draw_unit_scales(layer: &Layer, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![1.0; layer.units()];
    for g in &layer.scales {
        let shared = g.len() == 1;
        let mut draw = |k: usize| {
            let q = g.posterior(k);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            (q.mu + q.sigma2.sqrt() * z).exp()
        };
        let common = if shared { Some(draw(0)) } else { None };
        for (k, o) in out.iter_mut().enumerate() {
            let s = common.unwrap_or_else(|| draw(k));
            *o *= s.powf(g.power);
        }
    }
    out
}

/// One weight matrix drawn from the factorized posterior, in weight space.
fn draw_weights(layer: &Layer, rng: &mut ChaCha8Rng) -> Tensor {
    let sigma2 = layer.sigma2();
    let mut w = layer.mu.clone();
    for (v, s2) in w.data_mut().iter_mut().zip(sigma2.data()) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *v += s2.sqrt() * z;
    }
    if layer.parameterization == Parameterization::NonCentered {
        let s = draw_unit_scales(layer, rng);
        let k = layer.units();
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            *v *= s[i % k];
        }
    }
    w
}

/// Moments of layer-0 pre-activations for one repeated input row, from the
/// model's forward pass and from weight-space draws.
fn preactivation_moments(m: &BayesNet, input: &[f64], n: usize) -> (Vec<Moments>, Vec<Moments>) {
    let layer = &m.layers[0];
    let units = layer.units();
    let mut g = Graph::new();
    let vars = m.register(&mut g, false).unwrap();
    let rows: Vec<f64> = (0..n).flat_map(|_| input.iter().copied().chain([1.0])).collect();
    let a = g.constant(Tensor::matrix(n, input.len() + 1, rows).unwrap());
    let a2 = g.square(a);
    let u = m
        .forward_layer(&mut g, &vars, 0, a, a2, &mut NoiseStream::new(9))
        .unwrap();
    let mut model = vec![Moments::default(); units];
    for row in g.value(u).data().chunks(units) {
        for (mm, v) in model.iter_mut().zip(row) {
            mm.push(*v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut oracle = vec![Moments::default(); units];
    for _ in 0..n {
        let w = draw_weights(layer, &mut rng);
        for (k, mm) in oracle.iter_mut().enumerate() {
            let u: f64 = input
                .iter()
                .chain([&1.0])
                .enumerate()
                .map(|(i, a)| a * w.data()[i * units + k])
                .sum();
            mm.push(u);
        }
    }
    (model, oracle)
}

/// Standard error of a sample variance, from the fourth moment.
fn variance_se(samples: &Moments, n: usize) -> f64 {
    // Under near-Gaussian tails Var(s²) ≈ 2σ⁴/(n-1); heavier tails are
    // covered by the factor of two.
    2.0 * samples.variance() * (2.0 / (n as f64 - 1.0)).sqrt()
}

#[test]
fn sampled_and_centered_forward_passes_match_weight_space() {
    let n = 100_000;
    let input = [0.7, -1.3];
    for (mode, forward) in [
        (PriorMode::HsNoncentered, ForwardVariant::SampledScales),
        (PriorMode::HsCentered, ForwardVariant::SampledScales),
        (PriorMode::GaussianBaseline, ForwardVariant::ExpectedScales),
    ] {
        let m = model(vec![2, 3, 1], Likelihood::GaussianRegression, mode, forward, 21);
        let (model_m, oracle_m) = preactivation_moments(&m, &input, n);
        for (k, (a, b)) in model_m.iter().zip(&oracle_m).enumerate() {
            let se = (a.se().powi(2) + b.se().powi(2)).sqrt();
            assert!(
                (a.mean() - b.mean()).abs() < 4.0 * se,
                "{mode:?} unit {k} mean {} vs {}",
                a.mean(),
                b.mean()
            );
            let vse = (variance_se(a, n).powi(2) + variance_se(b, n).powi(2)).sqrt();
            assert!(
                (a.variance() - b.variance()).abs() < 4.0 * vse,
                "{mode:?} unit {k} variance {} vs {}",
                a.variance(),
                b.variance()
            );
        }
    }
}

#[test]
fn expected_scales_forward_uses_scale_moments_in_the_variance() {
    let n = 100_000;
    let input = [0.7, -1.3];
    let m = model(
        vec![2, 3, 1],
        Likelihood::GaussianRegression,
        PriorMode::HsNoncentered,
        ForwardVariant::ExpectedScales,
        22,
    );
    let (model_m, _) = preactivation_moments(&m, &input, n);
    let layer = &m.layers[0];
    let s = layer.expected_unit_scale();
    let sigma2 = layer.sigma2();
    let a: Vec<f64> = input.iter().copied().chain([1.0]).collect();
    let k = layer.units();
    for (j, mm) in model_m.iter().enumerate() {
        let mean: f64 = a.iter().enumerate().map(|(i, x)| x * layer.mu.data()[i * k + j]).sum();
        let var: f64 = a
            .iter()
            .enumerate()
            .map(|(i, x)| x * x * sigma2.data()[i * k + j])
            .sum::<f64>()
            * s[j];
        assert!(
            (mm.mean() - mean).abs() < 4.0 * mm.se(),
            "unit {j} mean {} vs {mean}",
            mm.mean()
        );
        assert!(
            (mm.variance() - var).abs() < 4.0 * variance_se(mm, n),
            "unit {j} variance {} vs {var}",
            mm.variance()
        );
    }
}

#[test]
fn expected_node_weights_match_monte_carlo() {
    let m = model(
        vec![2, 3, 2],
        Likelihood::Categorical,
        PriorMode::HsNoncentered,
        ForwardVariant::SampledScales,
        31,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for layer in &m.layers {
        let closed = layer.expected_node_weights();
        let mut mc = vec![Moments::default(); closed.len()];
        for _ in 0..1_000_000 {
            let w = draw_weights(layer, &mut rng);
            for (mm, v) in mc.iter_mut().zip(w.data()) {
                mm.push(*v);
            }
        }
        for (i, (c, mm)) in closed.data().iter().zip(&mc).enumerate() {
            assert!(
                (c - mm.mean()).abs() < 4.0 * mm.se(),
                "entry {i}: {c} vs {} ± {}",
                mm.mean(),
                mm.se()
            );
        }
    }
}

/// Single-draw Monte-Carlo estimate of the full ELBO in weight space, with
/// every density from `statrs`. Valid for a single data point, where the
/// model's per-example draws coincide with shared weight draws.
fn joint_elbo_draw(m: &BayesNet, x: &[f64], y: f64, rng: &mut ChaCha8Rng) -> f64 {
    let std_normal = NormalDensity::new(0.0, 1.0).unwrap();
    let mut total = 0.0;
    let mut h: Vec<f64> = x.to_vec();
    for (l, layer) in m.layers.iter().enumerate() {
        let units = layer.units();
        // Scales and their auxiliaries.
        let mut unit_scale = vec![1.0; units];
        for g in &layer.scales {
            let draws: Vec<f64> = (0..g.len())
                .map(|k| {
                    let q = g.posterior(k);
                    let sd = q.sigma2.sqrt();
                    let s = (q.mu + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp();
                    let aux = &g.aux[k];
                    let lambda = 1.0 / GammaDist::new(aux.c, 1.0 / aux.d).unwrap().sample(rng);
                    total += InverseGamma::new(0.5, 1.0 / lambda).unwrap().ln_pdf(s)
                        + InverseGamma::new(0.5, 1.0 / (g.b * g.b)).unwrap().ln_pdf(lambda)
                        - LogNormal::new(q.mu, sd).unwrap().ln_pdf(s)
                        - InverseGamma::new(aux.c, aux.d).unwrap().ln_pdf(lambda);
                    s
                })
                .collect();
            for (k, u) in unit_scale.iter_mut().enumerate() {
                *u *= draws[if g.len() == 1 { 0 } else { k }].powf(g.power);
            }
        }
        // Weights.
        let sigma2 = layer.sigma2();
        let mut w = vec![0.0; layer.mu.len()];
        for (i, wi) in w.iter_mut().enumerate() {
            let (mu, sd) = (layer.mu.data()[i], sigma2.data()[i].sqrt());
            let v = mu + sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let q = NormalDensity::new(mu, sd).unwrap().ln_pdf(v);
            let scale = unit_scale[i % units];
            match layer.parameterization {
                Parameterization::NonCentered => {
                    total += std_normal.ln_pdf(v) - q;
                    *wi = scale * v;
                }
                Parameterization::Centered => {
                    total += NormalDensity::new(0.0, scale).unwrap().ln_pdf(v) - q;
                    *wi = v;
                }
            }
        }
        let a: Vec<f64> = h.iter().copied().chain([1.0]).collect();
        let u: Vec<f64> = (0..units)
            .map(|k| a.iter().enumerate().map(|(i, v)| v * w[i * units + k]).sum())
            .collect();
        h = if l + 1 < m.layers.len() {
            u.into_iter().map(|v| v.max(0.0)).collect()
        } else {
            u
        };
    }
    let q = m.noise.as_ref().unwrap().posterior();
    let gamma = GammaDist::new(q.alpha, 1.0 / q.beta).unwrap().sample(rng);
    total += NormalDensity::new(h[0], gamma.powf(-0.5)).unwrap().ln_pdf(y);
    total += Gamma::new(6.0, 6.0).unwrap().ln_pdf(gamma) - Gamma::new(q.alpha, q.beta).unwrap().ln_pdf(gamma);
    total
}

#[test]
fn elbo_matches_a_joint_weight_space_monte_carlo() {
    let x = [0.4, -0.8];
    let y = 0.3;
    let data = Dataset::new(Tensor::matrix(1, 2, x.to_vec()).unwrap(), Targets::Real(vec![y])).unwrap();
    for (widths, mode) in [
        (vec![2, 1], PriorMode::HsNoncentered),
        (vec![2, 3, 1], PriorMode::HsNoncentered),
        (vec![2, 3, 1], PriorMode::HsCentered),
        (vec![2, 3, 1], PriorMode::GaussianBaseline),
    ] {
        let mut m = model(
            widths.clone(),
            Likelihood::GaussianRegression,
            mode,
            ForwardVariant::SampledScales,
            41,
        );
        // Keep the scale posteriors tight enough for a finite-variance oracle.
        for layer in &mut m.layers {
            for g in &mut layer.scales {
                g.rho = g.rho.map(|r| r.min(-1.0));
            }
        }
        hsbnn::inference::fixed_point_sweep(&mut m);
        let mut est = Moments::default();
        for seed in 0..100 {
            let t = m
                .elbo_value(&data, 1, 1000, &mut NoiseStream::new(seed), ElboOptions::default())
                .unwrap();
            est.push(t.total);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut oracle = Moments::default();
        for _ in 0..400_000 {
            oracle.push(joint_elbo_draw(&m, &x, y, &mut rng));
        }
        let se = (est.se().powi(2) + oracle.se().powi(2)).sqrt();
        let z = (est.mean() - oracle.mean()) / se;
        assert!(
            z.abs() < 4.0,
            "{widths:?} {mode:?}: ELBO {} vs oracle {} ± {se} (z = {z:.2})",
            est.mean(),
            oracle.mean()
        );
    }
}

#[test]
fn more_samples_shrink_the_estimator_variance() {
    let data = tiny_regression(20, 2, 51);
    let m = model(
        vec![2, 4, 1],
        Likelihood::GaussianRegression,
        PriorMode::HsNoncentered,
        ForwardVariant::SampledScales,
        52,
    );
    let opts = ElboOptions {
        likelihood: true,
        prior: false,
        entropy: false,
    };
    let spread = |samples: usize| {
        let mut mm = Moments::default();
        for seed in 0..200 {
            mm.push(
                m.elbo_value(&data, 20, samples, &mut NoiseStream::new(seed), opts)
                    .unwrap()
                    .total,
            );
        }
        mm.variance()
    };
    let (one, ten) = (spread(1), spread(10));
    assert!(ten < 0.2 * one, "S=1 variance {one}, S=10 variance {ten}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flipping_a_unit_sign_keeps_its_norm(seed in 0u64..1000, unit in 0usize..4) {
        let mut m = model(vec![3, 4, 2], Likelihood::Categorical, PriorMode::HsNoncentered, ForwardVariant::ExpectedScales, seed);
        let before = unit_norms(&m.layers[0]);
        let k = m.layers[0].units();
        for (i, v) in m.layers[0].mu.data_mut().iter_mut().enumerate() {
            if i % k == unit {
                *v = -*v;
            }
        }
        let after = unit_norms(&m.layers[0]);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn elbo_is_finite_across_parameter_space(
        seed in 0u64..1000,
        spread in 0.0..3.0f64,
        mode in 0usize..3,
        forward in 0usize..2,
        classify in any::<bool>(),
    ) {
        let (widths, lik, data) = if classify {
            (vec![2, 3, 3], Likelihood::Categorical, tiny_classification(8, 2, 3, seed))
        } else {
            (vec![2, 3, 1], Likelihood::GaussianRegression, tiny_regression(8, 2, seed))
        };
        let net = NetworkConfig::new(widths, lik);
        let mut m = BayesNet::init_seeded(&net, &PriorConfig::new(MODES[mode]).with_forward(FORWARDS[forward]), seed).unwrap();
        jitter(&mut m, spread, seed);
        hsbnn::inference::fixed_point_sweep(&mut m);
        let t = m.elbo_value(&data, 100, 2, &mut NoiseStream::new(seed), ElboOptions::default()).unwrap();
        prop_assert!(t.total.is_finite() && t.likelihood.is_finite() && t.log_prior.is_finite() && t.entropy.is_finite(), "{t:?}");
    }
}
