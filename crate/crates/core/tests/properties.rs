use proptest::prelude::*;
use splitree::numerics::stats::Moments;
use splitree::rng::stream;
use splitree::simulator::{
    lineage_oracle, sample_cpp, scatter_mutations, spectrum_at_rate, CoalescentTree,
};
use splitree::{GridSpec, LifetimeModel, ModelParams, ScaleFunctions};

fn exp_params(b: f64, d: f64, theta: f64) -> ModelParams {
    ModelParams::new(b, theta, LifetimeModel::exponential(d).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_is_convex(b in 0.5f64..3.0, frac in 0.05f64..0.9, x in 0.01f64..5.0) {
        let p = exp_params(b, b * frac, 1.0);
        let h = 1e-3;
        let second = p.psi(x + h) - 2.0 * p.psi(x) + p.psi(x - h.min(x / 2.0));
        prop_assert!(second >= -1e-9);
    }

    #[test]
    fn rice_psi_convex(shape in 0.2f64..2.0, x in 0.05f64..4.0) {
        let p = ModelParams::new(2.0, 1.0, LifetimeModel::rice(shape, 1.0).unwrap()).unwrap();
        let h = 1e-2;
        prop_assert!(p.psi(x + h) - 2.0 * p.psi(x) + p.psi(x - h) >= -1e-9);
    }

    #[test]
    fn sweep_matches_lineage_oracle(seed in any::<u64>(), n in 1usize..40, theta in 0.0f64..4.0) {
        let mut rng = stream(seed, 900, 0);
        use rand::Rng;
        let t = 3.0;
        let depths: Vec<f64> = (1..n).map(|_| t * rng.random::<f64>().max(1e-9)).collect();
        let tree = CoalescentTree::new(t, &depths).unwrap();
        let muts = scatter_mutations(&tree, 4.0, &mut rng);
        let fast = spectrum_at_rate(&tree, &muts, theta);
        prop_assert_eq!(&fast, &lineage_oracle(&tree, &muts, theta));
        prop_assert!(fast.partition_holds());
    }
}

#[test]
fn survival_probability_decreases_toward_alpha_over_b() {
    let params = ModelParams::new(1.0, 1.0, LifetimeModel::rice(1.0, 1.0).unwrap()).unwrap();
    let sf = ScaleFunctions::new(params, GridSpec::with_t_max(20.0)).unwrap();
    let limit = sf.alpha() / sf.params().b;
    let mut last = 1.0;
    for i in 0..=40 {
        let p = sf.population_moments(0.5 * i as f64).survival_prob;
        assert!(
            p <= last + 1e-9,
            "P(N_t > 0) increased at t = {}",
            0.5 * i as f64
        );
        assert!(p >= limit - 1e-6);
        last = p;
    }
    assert!((last - limit).abs() < 1e-3);
}

#[test]
fn cpp_mean_size_is_w() {
    let sf = ScaleFunctions::new(exp_params(1.0, 0.3, 1.0), GridSpec::default()).unwrap();
    let ns: Vec<f64> = (0..20_000)
        .map(|r| sample_cpp(sf.w(), 2.0, &mut stream(5, 1, r)).unwrap().n() as f64)
        .collect();
    let m = Moments::of(&ns);
    assert!((m.mean - sf.w().eval(2.0)).abs() < 3.0 * m.mean_se);
}

#[test]
fn marks_give_poisson_thinning() {
    let tree = CoalescentTree::new(5.0, &[5.0; 199]).unwrap();
    let mut rng = stream(8, 2, 0);
    let muts = scatter_mutations(&tree, 2.0, &mut rng);
    // total length 1000 at rate 2 -> 2000 mutations, a quarter with mark <= 0.5
    let low = muts.iter().filter(|m| m.mark <= 0.5).count() as f64;
    assert!((muts.len() as f64 - 2000.0).abs() < 4.0 * 2000f64.sqrt());
    assert!((low - 500.0).abs() < 4.0 * 500f64.sqrt());
}
