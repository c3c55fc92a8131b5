use latent_langevin::checkpoint;
use latent_langevin::diffnet::{self, Architecture, NetworkParams};
use latent_langevin::flow::{self, FlowModel};
use latent_langevin::metrics::{self, ThresholdStats};
use latent_langevin::reward::{self, CategoricalAngleDist, Generator, PullbackReward, RewardSpec};
use latent_langevin::sampler::{self, MonitorParams, SamplerConfig, SamplerMode};
use ndarray::Array2;
use proptest::prelude::*;

fn small_flow(seed: u64) -> FlowModel {
    FlowModel::from_params(NetworkParams::init(Architecture::velocity(2, 16, 2), seed, 1.0).unwrap())
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn mode() -> impl Strategy<Value = SamplerMode> {
    prop::sample::select(SamplerMode::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monitor_stays_within_bounds(r in -1e6f64..1e6, k in 0.01f64..5.0, lo in 0.05f64..1.0, width in 0.0f64..3.0) {
        let mp = MonitorParams { s_min: lo, s_max: lo + width, k };
        let g = mp.value(r);
        prop_assert!(g >= mp.s_min && g <= mp.s_max);
    }

    #[test]
    fn toy_reward_range(x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let r = RewardSpec::ToyMixture.value(&[x, y]);
        prop_assert!(r > -1.0 - 1e-15 && r <= 0.1);
    }

    #[test]
    fn kl_is_non_negative(p in simplex(6), q in simplex(6)) {
        let p = CategoricalAngleDist::new(p, false).unwrap();
        let q = CategoricalAngleDist::new(q, false).unwrap();
        prop_assert!(reward::kl_categorical(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn discretized_gaussian_is_normalized(center in 0.0f64..359.99, sigma in 0.1f64..60.0) {
        let d = reward::discretize_gaussian(center, sigma, 360, true).unwrap();
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_step_equals_single_euler_step(seed in 0u64..1000, x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let m = small_flow(seed);
        prop_assert_eq!(flow::generate_one_step(&m, &[x, y]).unwrap(), flow::generate_multi_step(&m, &[x, y], 1).unwrap());
    }

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, level in 1u32..5) {
        let m = FlowModel { rectification_level: level, ..small_flow(seed) };
        let back = checkpoint::from_bytes(&checkpoint::to_bytes(&m)).unwrap();
        prop_assert!(m.params.values().zip(back.params.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back, m);
    }

    #[test]
    fn batch_forward_matches_point_forward(seed in 0u64..1000, x in -3.0f64..3.0, y in -3.0f64..3.0, t in 0.0f64..1.0) {
        let p = NetworkParams::init(Architecture::velocity(2, 16, 2), seed, 1.0).unwrap();
        let (v, _) = diffnet::forward(&p, &[x, y], t).unwrap();
        let xs = ndarray::array![[x, y]];
        let (vb, _) = diffnet::forward_batch(&p, xs.view(), &[t]).unwrap();
        prop_assert!((v[0] - vb[[0, 0]]).abs() < 1e-12 && (v[1] - vb[[0, 1]]).abs() < 1e-12);
    }

    #[test]
    fn best_tracking_and_determinism(seed in 0u64..10_000, iterations in 0usize..25, mode in mode()) {
        let pr = PullbackReward::new(RewardSpec::ToyMixture, small_flow(seed % 7).into()).unwrap();
        let cfg = SamplerConfig { mode, iterations, seed, ..SamplerConfig::default() };
        let rec = sampler::run_chain(&pr, &cfg, Some(-0.5)).unwrap();
        let h = &rec.chain.reward_history;
        prop_assert_eq!(h.len(), iterations + 1);
        prop_assert_eq!(rec.chain.best_reward, h.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        prop_assert!((pr.value(&rec.chain.best_latent).unwrap() - rec.chain.best_reward).abs() <= 1e-12);
        prop_assert_eq!(&rec.final_output, &pr.generator().push_forward(&rec.chain.best_latent).unwrap());
        prop_assert_eq!(rec, sampler::run_chain(&pr, &cfg, Some(-0.5)).unwrap());
    }

    #[test]
    fn constant_monitor_matches_langevin(seed in 0u64..10_000) {
        let pr = PullbackReward::new(RewardSpec::ToyMixture, small_flow(seed % 5).into()).unwrap();
        let lang = SamplerConfig { iterations: 10, seed, ..SamplerConfig::default() };
        let adap = SamplerConfig { mode: SamplerMode::AdaptiveLangevin, monitor: MonitorParams::constant_one(), ..lang.clone() };
        prop_assert_eq!(sampler::run_chain(&pr, &lang, None).unwrap(), sampler::run_chain(&pr, &adap, None).unwrap());
    }

    #[test]
    fn mmd_symmetric_and_order_invariant(a in prop::collection::vec(-3.0f64..3.0, 10..30), b in prop::collection::vec(-3.0f64..3.0, 10..30)) {
        let x = Array2::from_shape_vec((a.len() / 2, 2), a[..a.len() / 2 * 2].to_vec()).unwrap();
        let y = Array2::from_shape_vec((b.len() / 2, 2), b[..b.len() / 2 * 2].to_vec()).unwrap();
        let xy = metrics::mmd_rbf(x.view(), y.view(), Some(1.0)).unwrap();
        let yx = metrics::mmd_rbf(y.view(), x.view(), Some(1.0)).unwrap();
        prop_assert!((xy.raw - yx.raw).abs() < 1e-12);
        let mut rev = x.clone();
        rev.invert_axis(ndarray::Axis(0));
        let r = metrics::mmd_rbf(rev.view(), y.view(), Some(1.0)).unwrap();
        prop_assert!((xy.raw - r.raw).abs() < 1e-12);
    }

    #[test]
    fn success_rate_falls_with_threshold(seed in 0u64..10_000, t1 in -1.0f64..0.1, dt in 0.0f64..0.5) {
        let pr = PullbackReward::new(RewardSpec::ToyMixture, Generator::Identity { dim: 2 }).unwrap();
        let cfg = SamplerConfig { iterations: 10, seed, ..SamplerConfig::default() };
        let recs = sampler::run_chains(&pr, &cfg, 8, None).unwrap();
        let low: ThresholdStats = metrics::mean_iterations_to_threshold(&recs, t1);
        let high = metrics::mean_iterations_to_threshold(&recs, t1 + dt);
        prop_assert!(high.success_rate <= low.success_rate);
        prop_assert!(low.success_rate >= 0.0 && low.success_rate <= 1.0);
        if let Some(m) = low.mean_nfe { prop_assert!(m >= 1.0); }
    }
}
