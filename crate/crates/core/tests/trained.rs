mod common;

use latent_langevin::compare::{self, CompareConfig};
use latent_langevin::flow;
use latent_langevin::oracle::{self, TargetDensity};
use latent_langevin::sampler::{self, SamplerConfig};

#[test]
fn guided_chains_beat_unguided_samples() {
    let pr = common::toy_pullback();
    let cfg = SamplerConfig { iterations: 50, seed: 31, ..SamplerConfig::default() };
    let records = sampler::run_chains(&pr, &cfg, 500, None).unwrap();
    let guided = records.iter().map(|r| r.chain.best_reward).sum::<f64>() / 500.0;
    let prior = flow::sample_prior(32, 500, 2);
    let unguided = pr.value_batch(prior.view()).unwrap().iter().sum::<f64>() / 500.0;
    assert!(guided > unguided, "{guided} vs {unguided}");
}

#[test]
fn oracle_tilts_toward_reward() {
    let pr = common::toy_pullback();
    let td = TargetDensity::new(1.0, pr.clone()).unwrap();
    let s = oracle::sample_q_star(&td, 41, 4000).unwrap();
    let tilted = pr.value_batch(s.points.view()).unwrap().iter().sum::<f64>() / 4000.0;
    let prior = flow::sample_prior(42, 4000, 2);
    let plain = pr.value_batch(prior.view()).unwrap().iter().sum::<f64>() / 4000.0;
    assert!(tilted > plain, "{tilted} vs {plain}");
}

#[test]
fn pullback_batch_agrees_with_pointwise() {
    let pr = common::toy_pullback();
    let xs = flow::sample_prior(5, 64, 2);
    let (values, grads) = pr.value_and_gradient_batch(xs.view()).unwrap();
    for (i, x) in xs.rows().into_iter().enumerate() {
        let (v, g) = pr.value_and_gradient(&x.to_vec()).unwrap();
        assert!((v - values[i]).abs() < 1e-12);
        assert!((g[0] - grads[[i, 0]]).abs() < 1e-10 && (g[1] - grads[[i, 1]]).abs() < 1e-10);
    }
}

#[test]
fn zero_budget_compare_emits_prior_pushforwards() {
    let pr = common::toy_pullback();
    let report = compare::run(&pr, &CompareConfig::toy(0, 300, 3)).unwrap();
    let first = &report.methods[0];
    for m in &report.methods[1..] {
        assert_eq!(m.latents, first.latents);
        assert_eq!(m.mmd, first.mmd);
    }
    let prior_start = sampler::run_chains(&pr, &SamplerConfig { iterations: 0, seed: 3, ..SamplerConfig::default() }, 300, None)
        .unwrap();
    assert_eq!(first.latents.row(0).to_vec(), prior_start[0].chain.x);
}

#[test]
fn compare_refuses_unequal_budgets() {
    let mut cfg = CompareConfig::toy(10, 50, 0);
    cfg.methods[1].sampler.iterations = 11;
    assert!(cfg.validate().is_err());
    let mut cfg = CompareConfig::toy(10, 50, 0);
    cfg.methods[2].sampler.eta = 0.5;
    assert!(cfg.validate().is_err());
}

#[test]
fn compare_is_deterministic() {
    let pr = common::toy_pullback();
    let cfg = CompareConfig::toy(5, 100, 9);
    let a = compare::run(&pr, &cfg).unwrap();
    let b = compare::run(&pr, &cfg).unwrap();
    for (x, y) in a.methods.iter().zip(&b.methods) {
        assert_eq!(x.latents, y.latents);
        assert_eq!(x.two_sample, y.two_sample);
    }
    assert_eq!(a.oracle.points, b.oracle.points);
}
