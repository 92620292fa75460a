use mmm_conflation::budget::{closed_form_loglog, enumerate_allocations, LogLogOptimum};
use mmm_conflation::evaluation::{central_interval, conflation_label, megasim, DgpFamily, Factor, MegasimConfig, SimulationSetting};
use mmm_conflation::rng::derive_seed;
use mmm_conflation::transforms::{adstock, hill, koyck_step, HillParams, StockSpec};
use proptest::prelude::*;

fn binom(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

proptest! {
    #[test]
    fn loglog_optimum_sets_marginal_profit_to_zero(alpha in -3.0f64..3.0, beta in 0.05f64..0.95) {
        let x = match closed_form_loglog(alpha, beta).unwrap() {
            LogLogOptimum::Interior(x) => x,
            other => panic!("{other:?}"),
        };
        // d/dx [e^α x^β − x] = β e^α x^(β−1) − 1
        let marginal = beta * alpha.exp() * x.powf(beta - 1.0) - 1.0;
        prop_assert!(marginal.abs() < 1e-9, "marginal {marginal} at {x}");
        let profit = |v: f64| alpha.exp() * v.powf(beta) - v;
        prop_assert!(profit(x) >= profit(x * 1.01) && profit(x) >= profit(x * 0.99));
    }

    #[test]
    fn nonpositive_elasticity_means_zero_spend(alpha in -3.0f64..3.0, beta in -2.0f64..=0.0) {
        prop_assert_eq!(closed_form_loglog(alpha, beta).unwrap(), LogLogOptimum::ZeroSpend);
    }

    #[test]
    fn conflation_label_ignores_scale(t in 1e-6f64..1e6, c in 1e-6f64..1e6, k in 1e-6f64..1e6, delta in 0.0f64..0.5) {
        prop_assert_eq!(conflation_label(t, c, delta), conflation_label(t * k, c * k, delta));
    }

    #[test]
    fn allocations_cover_the_simplex(total in 1.0f64..1e4, channels in 1usize..4, n in 1u32..12) {
        let all = enumerate_allocations(total, channels, 1.0 / n as f64, None).unwrap();
        prop_assert_eq!(all.len() as u64, binom(n as u64 + channels as u64 - 1, channels as u64 - 1));
        for a in &all {
            prop_assert_eq!(a.units.iter().sum::<u32>(), n);
            let spent: f64 = a.spend.iter().sum();
            prop_assert!((spent - total).abs() <= 1e-9 * total);
        }
    }

    #[test]
    fn adstock_is_linear_and_preserves_constants(
        x in prop::collection::vec(0.0f64..100.0, 12),
        z in prop::collection::vec(0.0f64..100.0, 12),
        a in 0.0f64..5.0,
        lambda in 0.05f64..0.95,
        lags in 0usize..6,
    ) {
        let spec = StockSpec::geometric(lambda, lags);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + q).collect();
        let (sx, sz, sm) = (adstock(&x, &spec).unwrap(), adstock(&z, &spec).unwrap(), adstock(&mix, &spec).unwrap());
        for i in 0..sm.values.len() {
            prop_assert!((sm.values[i] - (a * sx.values[i] + sz.values[i])).abs() < 1e-9);
        }
        let flat = adstock(&[7.5; 12], &spec).unwrap();
        prop_assert!(flat.values.iter().all(|v| (v - 7.5).abs() < 1e-12));
    }

    #[test]
    fn koyck_recursion_is_a_geometric_sum(x in prop::collection::vec(0.0f64..50.0, 1..40), lambda in 0.0f64..0.99) {
        let mut stock = 0.0;
        for (t, &v) in x.iter().enumerate() {
            stock = koyck_step(stock, v, lambda);
            let direct: f64 = (0..=t).map(|l| lambda.powi(l as i32) * x[t - l]).sum();
            prop_assert!((stock - direct).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn hill_is_a_monotone_fraction(k in 0.1f64..100.0, s in 0.2f64..5.0, x in 0.0f64..500.0, dx in 0.001f64..10.0) {
        let p = HillParams::new(k, s).unwrap();
        let (a, b) = (hill(x, p).unwrap(), hill(x + dx, p).unwrap());
        prop_assert!((0.0..1.0).contains(&a));
        prop_assert!(b >= a);
    }

    #[test]
    fn central_interval_brackets_the_median(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let (lo, hi) = central_interval(&v, 0.95);
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let median = if s.len() % 2 == 1 { s[s.len() / 2] } else { 0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2]) };
        prop_assert!(s[0] <= lo && lo <= median && median <= hi && hi <= s[s.len() - 1]);
    }

    #[test]
    fn derived_seeds_are_stable_and_path_sensitive(master in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assert_eq!(derive_seed(master, &[a, b]), derive_seed(master, &[a, b]));
        if a != b {
            prop_assert_ne!(derive_seed(master, &[a]), derive_seed(master, &[b]));
        }
        prop_assert_ne!(derive_seed(master, &[a]), derive_seed(master, &[a, 0]));
    }
}

#[test]
fn megasim_records_do_not_depend_on_thread_count() {
    let grid = vec![
        SimulationSetting::medium(DgpFamily::NonlinearGp).with(Factor::Noise, 0.2),
        SimulationSetting::medium(DgpFamily::TimeVaryingGp).with(Factor::ArCoef, 1.0),
        SimulationSetting::medium(DgpFamily::Hill),
    ];
    let cfg = MegasimConfig { replicates: 3, restarts: 2, ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| megasim(&grid, &cfg, 77).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one.records, four.records);
    assert_eq!(one.rates, four.rates);
    assert_eq!(one.records.len(), 9);
}
