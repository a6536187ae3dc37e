//! Property tests across the distribution and cost-complexity algebra.

use casgd_core::analysis;
use casgd_core::sampling::SamplingDistribution;
use casgd_core::subset;
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, 2..=n)
}

proptest! {
    #[test]
    fn constructors_yield_normalized_distributions(g in weights(30), alpha in 0.0f64..=1.0) {
        let c: Vec<f64> = g.iter().map(|x| 1.0 + x * 3.0).collect();
        for dist in [
            SamplingDistribution::uniform(g.len()).unwrap(),
            SamplingDistribution::variance(&g).unwrap(),
            SamplingDistribution::optimal(&g, &c).unwrap(),
            SamplingDistribution::optimal(&g, &c).unwrap().smooth(alpha).unwrap(),
            SamplingDistribution::optimal(&g, &c).unwrap().cost_biased(&c).unwrap(),
        ] {
            let sum: f64 = dist.probabilities().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(dist.probabilities().iter().all(|&p| p >= 0.0));
            prop_assert!(dist.support().next().is_some());
        }
    }

    #[test]
    fn optimal_cost_never_exceeds_baselines(g in weights(40)) {
        let c: Vec<f64> = g.iter().map(|x| 0.5 + x * x).collect();
        let b = analysis::baseline_costs(&g, &c, 2.0, 0.1).unwrap();
        let slack = 1e-9 * b.k_unif.max(b.k_var);
        prop_assert!(b.k_opt <= b.k_unif + slack);
        prop_assert!(b.k_opt <= b.k_var + slack);
    }

    #[test]
    fn suboptimality_identity_holds(g in weights(16), w in weights(16)) {
        let n = g.len().min(w.len());
        let g = &g[..n];
        let w = &w[..n];
        let c: Vec<f64> = g.iter().map(|x| 0.2 + 2.0 * x).collect();
        let p_prime = SamplingDistribution::from_weights(w).unwrap();
        let gap = analysis::suboptimality_ratio(g, &c, &p_prime).unwrap();
        let rhs = 1.0 + gap.chi2_of_cost_biased;
        prop_assert!((gap.ratio - rhs).abs() <= 1e-10 * rhs);
        prop_assert!(gap.ratio >= 1.0 - 1e-12);
    }

    #[test]
    fn greedy_selection_is_a_prefix_of_the_cost_order(
        g in weights(20),
        frac in 0.0f64..=1.0,
    ) {
        let c: Vec<f64> = g.iter().map(|x| 1.0 + x * 7.0).collect();
        let total: f64 = g.iter().sum();
        let selection = subset::greedy_select(&g, &c, frac * total).unwrap();
        let order = subset::greedy_visitation_order(&c);
        let mut prefix = order[..selection.chosen.len()].to_vec();
        prefix.sort_unstable();
        prop_assert_eq!(selection.chosen.clone(), prefix);
        // Bias floor accounts exactly for the excluded mass.
        let direct = subset::bias_floor(&g, &selection.chosen).unwrap();
        prop_assert!((selection.bias_floor - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn distribution_serialization_round_trips(w in weights(20)) {
        let p = SamplingDistribution::from_weights(&w).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: SamplingDistribution<f64> = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, p);
    }
}
