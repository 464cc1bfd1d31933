use overflowlab::chain::{ChainState, Dynamics};
use overflowlab::exact::{self, ExactConfig};
use overflowlab::network::{validate, NetworkSpec};
use overflowlab::{rng, splitting};
use proptest::prelude::*;

fn tandem(mu1: f64, mu2: f64) -> overflowlab::ValidatedNetwork {
    validate(&NetworkSpec::new(vec![0.1, 0.0], vec![mu1, mu2], vec![vec![0.0, 1.0], vec![0.0, 0.0]])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_rows_are_stochastic(a in 0u32..20, b in 0u32..20, mu1 in 0.2f64..0.6, mu2 in 0.2f64..0.6) {
        let vn = tandem(mu1, mu2);
        let row = Dynamics::new(&vn).kernel_row(&[a, b]);
        let total: f64 = row.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(row.iter().all(|(_, p)| *p >= 0.0));
    }

    #[test]
    fn split_runs_respect_count_bounds(seed in any::<u64>(), n in 2u32..9) {
        let vn = tandem(0.5, 0.4);
        let target = vn.target_params(&[1, 1]).unwrap();
        let x0 = ChainState::zeros(2);
        let scheme = splitting::build_levels(&vn, &target, n, 2, &x0).unwrap();
        let out = splitting::run_splitting(&vn, &scheme, &x0, &mut rng::stream(seed, 0)).unwrap();
        let levels = scheme.total_levels();
        prop_assert!(out.terminal_count <= 2u64.pow(levels));
        prop_assert_eq!(out.per_level_survivors.len(), levels as usize + 1);
        prop_assert_eq!(out.per_level_survivors[levels as usize], 1);
        prop_assert_eq!(out.per_level_survivors[0], out.terminal_count);
        for j in 0..levels as usize {
            prop_assert!(out.per_level_survivors[j] <= 2 * out.per_level_survivors[j + 1]);
        }
        prop_assert!(out.work >= 1);
    }

    #[test]
    fn exact_probability_is_monotone_in_start(a in 0u32..5, b in 0u32..5) {
        let vn = tandem(0.45, 0.45);
        let cfg = ExactConfig::default();
        let p = |x: Vec<u32>| exact::overflow_probability(&vn, 10, &[1, 1], &ChainState(x), &cfg).unwrap();
        let base = p(vec![a, b]);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(p(vec![a + 1, b]) >= base - 1e-12);
        prop_assert!(p(vec![a, b + 1]) >= base - 1e-12);
    }
}
